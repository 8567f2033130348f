//! Small layer library on top of the tape: affine maps, an LSTM cell,
//! strided convolutions and plain MLPs.
//!
//! Layers only hold [`ParamId`]s; the tensors live in a [`ParamStore`] so one
//! store can be bound once per forward pass and shared by several layers.

use rand::Rng;

use crate::error::{NumError, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform `(-bound, bound)` initialisation.
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape matches generated data")
}

/// `y = x W + b` with `W: [in x out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, vec![in_dim, out_dim], bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, vec![out_dim], bound));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p[self.weight])?;
        tape.add_bias(h, p[self.bias])
    }
}

/// Long short-term memory cell with gate order input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    /// Uniform initialisation with the forget-gate bias set to one.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), uniform(rng, vec![input_dim, 4 * hidden_dim], bound));
        let w_hh = store.add(format!("{name}.w_hh"), uniform(rng, vec![hidden_dim, 4 * hidden_dim], bound));
        let mut b: Tensor<T> = uniform(rng, vec![4 * hidden_dim], bound);
        for v in &mut b.data_mut()[hidden_dim..2 * hidden_dim] {
            *v = T::one();
        }
        let bias = store.add(format!("{name}.bias"), b);
        LstmCell {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    /// One step. `x: [rows x input]`, `h, c: [rows x hidden]`.
    pub fn step<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        let xi = tape.matmul(x, p[self.w_ih])?;
        let hh = tape.matmul(h, p[self.w_hh])?;
        let z = tape.add(xi, hh)?;
        let z = tape.add_bias(z, p[self.bias])?;
        let i = tape.slice_cols(z, 0, hd)?;
        let f = tape.slice_cols(z, hd, 2 * hd)?;
        let g = tape.slice_cols(z, 2 * hd, 3 * hd)?;
        let o = tape.slice_cols(z, 3 * hd, 4 * hd)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Runs a sequence (oldest first) from a zero state; returns the last hidden state.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, seq: &[Var]) -> Result<Var> {
        let first = *seq
            .first()
            .ok_or_else(|| NumError::invalid("LstmCell::run", "empty sequence"))?;
        let rows = tape.shape(first)[0];
        let mut h = tape.constant(Tensor::zeros(vec![rows, self.hidden_dim]));
        let mut c = tape.constant(Tensor::zeros(vec![rows, self.hidden_dim]));
        for &x in seq {
            (h, c) = self.step(tape, p, x, h, c)?;
        }
        Ok(h)
    }
}

/// Square-kernel convolution with bias, no padding.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

impl Conv2dLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel_size * kernel_size).max(1) as f64).sqrt();
        let kernel = store.add(
            format!("{name}.kernel"),
            uniform(rng, vec![out_channels, in_channels, kernel_size, kernel_size], bound),
        );
        let bias = store.add(format!("{name}.bias"), uniform(rng, vec![out_channels], bound));
        Conv2dLayer {
            kernel,
            bias,
            in_channels,
            out_channels,
            kernel_size,
            stride,
        }
    }

    /// Output side length for a square input of side `size`.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        (size >= self.kernel_size).then(|| (size - self.kernel_size) / self.stride + 1)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.kernel], Some(p[self.bias]), self.stride)
    }
}

/// Affine layers with ReLU between them and no activation after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists every width including input and output.
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

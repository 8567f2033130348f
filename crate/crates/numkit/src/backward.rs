//! Reverse sweep over a [`Tape`] and the per-operation gradient rules.

use crate::error::{NumError, Result};
use crate::kernels::{self, Mat};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// The gradient of `v`, or `None` if no path connects it to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient of `v`, zero-filled when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }

    /// Moves the gradient of `v` out, zero-filled when absent.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// Pulls the gradient of a scalar `loss` back to every node.
    ///
    /// Contributions along multiple paths are summed. Nodes that do not
    /// require a gradient, or are not upstream of `loss`, get none.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        if self.requires_grad(loss) {
            grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut contributions = self.rule(Var(i), &g)?;
            if let Some((kind, factor)) = self.corrupted {
                if kind == node.op.kind() {
                    for (_, t) in contributions.iter_mut() {
                        t.data_mut().iter_mut().for_each(|v| *v *= factor);
                    }
                }
            }
            for (input, gi) in contributions {
                accumulate(&mut grads[input.0], gi);
            }
            // Keep intermediate gradients available to callers.
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads, shapes })
    }

    /// Gradient contributions of node `out` to its inputs that need them.
    fn rule(&self, out: Var, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[out.0];
        let y = &node.value;
        let rg = |v: Var| self.requires_grad(v);
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data);
        let zip_map = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Vec<T> {
            a.data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect()
        };
        let mut out_grads = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(g.data(), Mat::new(m, n), self.value(*b).data(), Mat::new(k, n).t(), &mut da, false);
                    out_grads.push((*a, like(*a, da)?));
                }
                if rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm(self.value(*a).data(), Mat::new(m, k).t(), g.data(), Mat::new(m, n), &mut db, false);
                    out_grads.push((*b, like(*b, db)?));
                }
            }
            Op::AddBias(x, bias) => {
                if rg(*x) {
                    out_grads.push((*x, g.clone()));
                }
                if rg(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out_grads.push((*bias, like(*bias, db)?));
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    out_grads.push((*a, g.clone()));
                }
                if rg(*b) {
                    out_grads.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    out_grads.push((*a, g.clone()));
                }
                if rg(*b) {
                    out_grads.push((*b, g.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out_grads.push((*a, like(*a, zip_map(self.value(*b), &|y, gv| y * gv))?));
                }
                if rg(*b) {
                    out_grads.push((*b, like(*b, zip_map(self.value(*a), &|x, gv| x * gv))?));
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let pick_a: Vec<bool> = va.iter().zip(vb).map(|(x, y)| x <= y).collect();
                if rg(*a) {
                    let d = g.data().iter().zip(&pick_a).map(|(&gv, &p)| if p { gv } else { T::zero() }).collect();
                    out_grads.push((*a, like(*a, d)?));
                }
                if rg(*b) {
                    let d = g.data().iter().zip(&pick_a).map(|(&gv, &p)| if p { T::zero() } else { gv }).collect();
                    out_grads.push((*b, like(*b, d)?));
                }
            }
            Op::Neg(x) => out_grads.push((*x, g.map(|v| -v))),
            Op::Scale(x, s) => {
                let s = *s;
                out_grads.push((*x, g.map(|v| v * s)));
            }
            Op::AddScalar(x) => out_grads.push((*x, g.clone())),
            Op::Square(x) => {
                out_grads.push((*x, like(*x, zip_map(self.value(*x), &|v, gv| (v + v) * gv))?));
            }
            Op::Sigmoid(x) => {
                out_grads.push((*x, like(*x, zip_map(y, &|s, gv| s * (T::one() - s) * gv))?));
            }
            Op::Tanh(x) => {
                out_grads.push((*x, like(*x, zip_map(y, &|t, gv| (T::one() - t * t) * gv))?));
            }
            Op::Relu(x) => {
                out_grads.push((
                    *x,
                    like(*x, zip_map(self.value(*x), &|v, gv| if v > T::zero() { gv } else { T::zero() }))?,
                ));
            }
            Op::Exp(x) => out_grads.push((*x, like(*x, zip_map(y, &|e, gv| e * gv))?)),
            Op::Log(x) => out_grads.push((*x, like(*x, zip_map(self.value(*x), &|v, gv| gv / v))?)),
            Op::Softplus(x) => {
                let d = zip_map(self.value(*x), &|v, gv| {
                    let s = if v >= T::zero() {
                        T::one() / (T::one() + (-v).exp())
                    } else {
                        let e = v.exp();
                        e / (T::one() + e)
                    };
                    s * gv
                });
                out_grads.push((*x, like(*x, d)?));
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = zip_map(self.value(*x), &|v, gv| if v >= lo && v <= hi { gv } else { T::zero() });
                out_grads.push((*x, like(*x, d)?));
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                out_grads.push((*x, Tensor::full(self.shape(*x).to_vec(), gv)));
            }
            Op::Mean(x) => {
                let n = T::lit(self.value(*x).len() as f64);
                let gv = g.data()[0] / n;
                out_grads.push((*x, Tensor::full(self.shape(*x).to_vec(), gv)));
            }
            Op::RowSum(x) => {
                let (_, n) = self.value(*x).rows_cols();
                let mut d = Vec::with_capacity(self.value(*x).len());
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv, n));
                }
                out_grads.push((*x, like(*x, d)?));
            }
            Op::Reshape(x) => out_grads.push((*x, like(*x, g.data().to_vec())?)),
            Op::ConcatCols(xs) => {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut start = 0;
                for &x in xs {
                    let w = self.shape(x)[1];
                    if rg(x) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                        }
                        out_grads.push((x, like(x, d)?));
                    }
                    start += w;
                }
            }
            Op::SliceCols(x, start) => {
                let s = self.shape(*x);
                let (rows, cols) = (s[0], s[1]);
                let w = g.shape()[1];
                let mut d = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                out_grads.push((*x, like(*x, d)?));
            }
            Op::IndexRows(x, index) => {
                let s = self.shape(*x);
                let cols = s[1];
                let mut d = vec![T::zero(); s[0] * cols];
                for (r, ix) in index.iter().enumerate() {
                    if let Some(i) = ix {
                        for c in 0..cols {
                            d[i * cols + c] += g.data()[r * cols + c];
                        }
                    }
                }
                out_grads.push((*x, like(*x, d)?));
            }
            Op::Bmm { a, b, dims } => {
                let [batch, m, k, n] = *dims;
                if rg(*a) {
                    // dA = G * B^T
                    let bt = kernels::transpose_last2(self.value(*b).data(), batch, k, n);
                    let mut da = vec![T::zero(); batch * m * k];
                    kernels::bmm(g.data(), &bt, &mut da, batch, m, n, k);
                    out_grads.push((*a, like(*a, da)?));
                }
                if rg(*b) {
                    // dB = A^T * G
                    let at = kernels::transpose_last2(self.value(*a).data(), batch, m, k);
                    let mut db = vec![T::zero(); batch * k * n];
                    kernels::bmm(&at, g.data(), &mut db, batch, k, m, n);
                    out_grads.push((*b, like(*b, db)?));
                }
            }
            Op::TransposeLast2 { x, dims } => {
                let [batch, r, c] = *dims;
                let d = kernels::transpose_last2(g.data(), batch, c, r);
                out_grads.push((*x, like(*x, d)?));
            }
            Op::MaskedSoftmax(x) => {
                let (_, n) = y.rows_cols();
                let mut d = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out_grads.push((*x, like(*x, d)?));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gain).len();
                let gd = self.value(*gain).data();
                if rg(*x) {
                    let dn = T::lit(d as f64);
                    let mut dx = vec![T::zero(); xhat.len()];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gd[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xr[j];
                        }
                        mean_dxh /= dn;
                        mean_dxh_xh /= dn;
                        for j in 0..d {
                            let dxh = gr[j] * gd[j];
                            dx[r * d + j] = is * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
                        }
                    }
                    out_grads.push((*x, like(*x, dx)?));
                }
                if rg(*gain) {
                    let mut dg = vec![T::zero(); d];
                    for (gr, xr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                    out_grads.push((*gain, like(*gain, dg)?));
                }
                if rg(*bias) {
                    let mut db = vec![T::zero(); d];
                    for gr in g.data().chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                    out_grads.push((*bias, like(*bias, db)?));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                c_out,
            } => {
                let (batch, c_out) = (*batch, *c_out);
                let np = geom.out_pixels();
                let pl = geom.patch_len();
                let img = geom.c_in * geom.h * geom.w;
                let kdata = self.value(*kernel).data();
                let idata = self.value(*input).data();
                let mut cols = vec![T::zero(); pl * np];
                let mut dk = rg(*kernel).then(|| vec![T::zero(); c_out * pl]);
                let mut dx = rg(*input).then(|| vec![T::zero(); batch * img]);
                let mut dcols = vec![T::zero(); pl * np];
                for bi in 0..batch {
                    let gb = &g.data()[bi * c_out * np..(bi + 1) * c_out * np];
                    if let Some(dk) = dk.as_mut() {
                        kernels::im2col(&idata[bi * img..(bi + 1) * img], geom, &mut cols);
                        kernels::gemm(gb, Mat::new(c_out, np), &cols, Mat::new(pl, np).t(), dk, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        kernels::gemm(kdata, Mat::new(c_out, pl).t(), gb, Mat::new(c_out, np), &mut dcols, false);
                        kernels::col2im_add(&dcols, geom, &mut dx[bi * img..(bi + 1) * img]);
                    }
                }
                if let Some(dx) = dx {
                    out_grads.push((*input, like(*input, dx)?));
                }
                if let Some(dk) = dk {
                    out_grads.push((*kernel, like(*kernel, dk)?));
                }
                if let Some(b) = bias.filter(|b| rg(*b)) {
                    let mut db = vec![T::zero(); c_out];
                    for (ch, plane) in g.data().chunks(np).enumerate() {
                        db[ch % c_out] += plane.iter().copied().sum::<T>();
                    }
                    out_grads.push((b, like(b, db)?));
                }
            }
        }
        Ok(out_grads.into_iter().filter(|(v, _)| rg(*v)).collect())
    }
}

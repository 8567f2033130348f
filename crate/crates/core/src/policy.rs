//! Squashed-Gaussian policy head and twin Q critics.

use numkit::nn::Mlp;
use numkit::{Bound, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

pub const ACTION_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Stochastic,
    Deterministic,
}

/// MLP from `s_t` to the mean and clamped log-std of a 2-D Gaussian.
#[derive(Clone, Debug)]
pub struct PolicyHead {
    pub mlp: Mlp,
}

impl PolicyHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        in_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * ACTION_DIM);
        PolicyHead {
            mlp: Mlp::new(store, "policy", &dims, rng),
        }
    }

    /// `(mean, log_std)`, each `[B x 2]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, s: Var) -> Result<(Var, Var)> {
        let out = self.mlp.forward(tape, p, s)?;
        let mean = tape.slice_cols(out, 0, ACTION_DIM)?;
        let log_std = tape.slice_cols(out, ACTION_DIM, 2 * ACTION_DIM)?;
        let log_std = tape.clamp(log_std, T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        Ok((mean, log_std))
    }
}

/// Standard-normal noise `[rows x 2]`.
pub fn gaussian_noise<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize) -> Tensor<T> {
    let data = (0..rows * ACTION_DIM)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(vec![rows, ACTION_DIM], data).expect("noise shape")
}

/// Reparameterised tanh-Gaussian sample `tanh(mean + std * eps)` and its
/// log-density `[B x 1]` with the change-of-variables correction, using
/// `log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x))`.
pub fn squashed_sample<T: Scalar>(
    tape: &mut Tape<'_, T>,
    mean: Var,
    log_std: Var,
    noise: Tensor<T>,
) -> Result<(Var, Var)> {
    let eps = tape.constant(noise.clone());
    let std = tape.exp(log_std);
    let shift = tape.mul(std, eps)?;
    let pre = tape.add(mean, shift)?;
    let action = tape.tanh(pre);

    let half_sq = tape.constant(noise.map(|e| T::lit(-0.5) * e * e - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())));
    let gauss = tape.sub(half_sq, log_std)?;
    let m2 = tape.scale(pre, T::lit(-2.0));
    let sp = tape.softplus(m2);
    let t = tape.add(pre, sp)?;
    let t = tape.neg(t);
    let t = tape.add_scalar(t, T::LN_2());
    let log_det = tape.scale(t, T::lit(2.0));
    let per_dim = tape.sub(gauss, log_det)?;
    let log_prob = tape.row_sum(per_dim)?;
    Ok((action, log_prob))
}

/// Two independent Q networks over `s_t ⊕ raw action`.
#[derive(Clone, Debug)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl CriticPair {
    /// Registers both critics in one store under `critic1.*` and `critic2.*`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        state_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![state_dim + ACTION_DIM];
        dims.extend_from_slice(hidden);
        dims.push(1);
        CriticPair {
            q1: Mlp::new(store, "critic1", &dims, rng),
            q2: Mlp::new(store, "critic2", &dims, rng),
        }
    }

    /// `(Q1, Q2)`, each `[B x 1]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, s: Var, action: Var) -> Result<(Var, Var)> {
        let x = tape.concat_cols(&[s, action])?;
        Ok((self.q1.forward(tape, p, x)?, self.q2.forward(tape, p, x)?))
    }
}

//! Adam with bias correction.

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Moment accumulators for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every tensor in `params` from `grads` (store order).
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(NumError::shape("adam_step", &[params.len()], &[grads.len()]));
        }
        for ((p, g), m) in params.tensors().iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(NumError::shape("adam_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(1.25);
        let mut st = AdamState::new(&p, AdamConfig::with_lr(0.1));
        for _ in 0..5 {
            st.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p.tensors()[0].data()[0], 1.25);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p, AdamConfig::with_lr(0.1));
        st.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let x = p.tensors()[0].data()[0];
        assert!((x + 0.1).abs() < 1e-6, "{x}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(st.step(&mut p, &[Tensor::zeros(vec![2])]).is_err());
        assert!(st.step(&mut p, &[]).is_err());
        assert_eq!(st.step, 0);
    }
}

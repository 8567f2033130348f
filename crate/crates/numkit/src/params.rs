//! Named parameter collections and their binding onto tapes.

use std::ops::Index;

use crate::backward::Gradients;
use crate::error::{NumError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An ordered set of named, trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor. Names must be unique within the store.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Binds every tensor as a gradient-requiring leaf of `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.variable_ref(t)).collect(),
        }
    }

    /// Binds every tensor as a constant of `tape`.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant_ref(t)).collect(),
        }
    }

    /// Overwrites values from another store with identical layout.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        self.check_layout(other)?;
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// `self <- tau * online + (1 - tau) * self`, elementwise.
    pub fn soft_update(&mut self, online: &ParamStore<T>, tau: T) -> Result<()> {
        self.check_layout(online)?;
        let keep = T::one() - tau;
        for (dst, src) in self.tensors.iter_mut().zip(&online.tensors) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + keep * *d;
            }
        }
        Ok(())
    }

    pub(crate) fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(NumError::invalid("ParamStore", "parameter names differ"));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(NumError::shape("ParamStore", a.shape(), b.shape()));
            }
        }
        Ok(())
    }
}

/// The tape variables a [`ParamStore`] was bound to, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every bound tensor, in store order, zero where absent.
    pub fn grads<T: Scalar>(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

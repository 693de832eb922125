//! Ordered, named parameter sets.
//!
//! Networks keep their weights in a [`ParamSet`]; each training step
//! registers them on a fresh tape (as leaves when trained, constants when
//! frozen) and the optimizer writes updates back. Iteration order is the
//! insertion order and is part of the determinism contract.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Clone, Debug, Default)]
pub struct ParamSet<T = Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) {
        assert!(
            self.index_of(name).is_none(),
            "param set: duplicate parameter name {:?}",
            name
        );
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        match self.index_of(name) {
            Some(i) => &self.tensors[i],
            None => panic!("param set: unknown parameter {:?}", name),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        match self.index_of(name) {
            Some(i) => &mut self.tensors[i],
            None => panic!("param set: unknown parameter {:?}", name),
        }
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<T>) {
        match self.index_of(name) {
            Some(i) => {
                assert!(
                    self.tensors[i].shape() == tensor.shape(),
                    "param set: shape change for {:?}: {:?} -> {:?}",
                    name,
                    self.tensors[i].shape(),
                    tensor.shape()
                );
                self.tensors[i] = tensor;
            }
            None => self.insert(name, tensor),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|n| n.as_str())
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn fingerprint(&self) -> u64 {
        crate::tensor::fingerprint(self.tensors.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// A parameter set registered on a tape: names bound to vars for this pass.
pub struct BoundParams<T = Real> {
    names: Vec<String>,
    vars: Vec<Var>,
    _marker: core::marker::PhantomData<T>,
}

impl<T: Scalar> BoundParams<T> {
    /// Register every tensor as a trainable leaf.
    pub fn trainable(tape: &mut Tape<T>, params: &ParamSet<T>) -> Self {
        Self::bind(tape, params, true)
    }

    /// Register every tensor as a constant (no gradients).
    pub fn frozen(tape: &mut Tape<T>, params: &ParamSet<T>) -> Self {
        Self::bind(tape, params, false)
    }

    fn bind(tape: &mut Tape<T>, params: &ParamSet<T>, trainable: bool) -> Self {
        let mut names = Vec::with_capacity(params.len());
        let mut vars = Vec::with_capacity(params.len());
        for (name, tensor) in params.iter() {
            names.push(name.to_string());
            vars.push(if trainable {
                tape.leaf(tensor.clone())
            } else {
                tape.constant(tensor.clone())
            });
        }
        BoundParams { names, vars, _marker: core::marker::PhantomData }
    }

    pub fn empty() -> Self {
        BoundParams { names: Vec::new(), vars: Vec::new(), _marker: core::marker::PhantomData }
    }

    pub fn insert(&mut self, name: &str, var: Var) {
        assert!(
            self.index_of(name).is_none(),
            "bound params: duplicate name {:?}",
            name
        );
        self.names.push(name.to_string());
        self.vars.push(var);
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn var(&self, name: &str) -> Var {
        match self.index_of(name) {
            Some(i) => self.vars[i],
            None => panic!("bound params: unknown parameter {:?}", name),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.index_of(name).map(|i| self.vars[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.names.iter().map(|n| n.as_str()).zip(self.vars.iter().copied())
    }
}

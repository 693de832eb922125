//! Dense row-major tensors.
//!
//! A [`Tensor`] is a plain value: shape plus flat data. Differentiability is
//! a property of the [`crate::tape::Tape`] a value is registered on, not of
//! the tensor itself. Tensors with no tape attachment are immutable in all
//! public APIs and safe to share across threads.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = Real> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from shape and row-major data.
    ///
    /// Panics if `product(shape) != data.len()` or any extent is zero.
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        let numel = check_shape(shape);
        assert!(
            numel == data.len(),
            "tensor: shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = check_shape(shape);
        Tensor { shape: shape.to_vec(), data: vec![T::ZERO; numel] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = check_shape(shape);
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel = check_shape(shape);
        Tensor { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for constructors and optimizers. Operations never
    /// mutate their inputs.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The single element of a 1-element tensor.
    pub fn item(&self) -> T {
        assert!(self.data.len() == 1, "item: tensor has shape {:?}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Self {
        let numel = check_shape(shape);
        assert!(
            numel == self.data.len(),
            "reshape: {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        Tensor { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert precision; used by the f64 verification paths.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }
}

fn check_shape(shape: &[usize]) -> usize {
    assert!(!shape.is_empty(), "tensor: empty shape");
    let mut numel = 1usize;
    for &d in shape {
        assert!(d > 0, "tensor: zero extent in shape {:?}", shape);
        numel = numel.checked_mul(d).expect("tensor: shape overflow");
    }
    numel
}

pub fn shape_string(shape: &[usize]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    let _ = write!(s, "{:?}", shape);
    s
}

/// FNV-1a over the raw bit patterns; used to fingerprint weight sets.
pub fn fingerprint<T: Scalar>(tensors: impl IntoIterator<Item = impl core::ops::Deref<Target = Tensor<T>>>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut mix = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    for t in tensors {
        for &d in t.shape() {
            for b in (d as u64).to_le_bytes() {
                mix(b);
            }
        }
        for v in t.data() {
            for b in v.to_f64().to_bits().to_le_bytes() {
                mix(b);
            }
        }
    }
    h
}

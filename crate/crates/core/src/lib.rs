//! Randomized-weight GAN training, inversion and evaluation, built on a
//! small reverse-mode autodiff core.
//!
//! The crate is `no_std` (with `alloc`): all floating-point transcendentals
//! go through [`scalar::Scalar`] backed by `libm`, so numeric results do not
//! depend on the host libm and are reproducible per platform/build. File
//! formats, CLI and threading live in the companion `wrangan` crate.
//!
//! Error conventions: tensor shape violations are programming errors and
//! panic with a message naming the operation and both shapes; domain-level
//! failures (non-finite losses, variance blow-up, bad metric inputs) return
//! `Result` with a descriptive error type.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adam;
pub mod eval;
pub mod invert;
pub mod kernels;
pub mod latent;
pub mod linalg;
pub mod metrics;
pub mod nets;
pub mod params;
pub mod randparam;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

/// Precision used by training, inversion and evaluation. The full core is
/// generic over [`scalar::Scalar`]; `f64` instantiations exist purely so
/// gradient and identity checks can run at tighter tolerances.
pub type Real = f32;

pub use tensor::Tensor;

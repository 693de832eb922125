//! Adam optimizer with bias correction.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, eps_hat: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// Per-parameter first/second moments, keyed by parameter name. Moments are
/// created lazily with the shape of the parameter they track.
pub struct Adam<T = Real> {
    cfg: AdamConfig,
    step_count: u64,
    moments: Vec<(String, Tensor<T>, Tensor<T>)>,
    warned_missing: BTreeSet<String>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step_count: 0, moments: Vec::new(), warned_missing: BTreeSet::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Apply one update over every parameter in `params`.
    ///
    /// `grad_of` maps a parameter name to its gradient; a missing gradient is
    /// treated as zero (the absence is logged once per parameter name).
    pub fn step<'g>(
        &mut self,
        params: &mut ParamSet<T>,
        mut grad_of: impl FnMut(&str) -> Option<&'g Tensor<T>>,
    ) where
        T: 'g,
    {
        assert!(self.cfg.learning_rate > 0.0, "adam: learning rate must be positive");
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let corr1 = T::ONE - b1.powi(t);
        let corr2 = T::ONE - b2.powi(t);
        let lr = T::from_f64(self.cfg.learning_rate);
        let eps = T::from_f64(self.cfg.eps_hat);

        let names: Vec<String> = params.names().map(|n| n.to_string()).collect();
        for name in names {
            let grad = grad_of(&name);
            if grad.is_none() && self.warned_missing.insert(name.clone()) {
                log::warn!("adam: no gradient for parameter {:?}, treating as zero", name);
            }
            let value = params.get_mut(&name);
            let idx = match self.moments.iter().position(|(n, _, _)| n == &name) {
                Some(i) => i,
                None => {
                    self.moments.push((
                        name.clone(),
                        Tensor::zeros(value.shape()),
                        Tensor::zeros(value.shape()),
                    ));
                    self.moments.len() - 1
                }
            };
            let (_, m, v) = &mut self.moments[idx];
            debug_assert!(m.shape() == value.shape());
            if let Some(g) = grad {
                assert!(
                    g.shape() == value.shape(),
                    "adam: gradient shape {:?} does not match parameter {:?} of shape {:?}",
                    g.shape(),
                    name,
                    value.shape()
                );
                for ((mi, vi), &gi) in
                    m.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(g.data())
                {
                    *mi = b1 * *mi + (T::ONE - b1) * gi;
                    *vi = b2 * *vi + (T::ONE - b2) * gi * gi;
                }
            } else {
                for (mi, vi) in m.data_mut().iter_mut().zip(v.data_mut().iter_mut()) {
                    *mi = b1 * *mi;
                    *vi = b2 * *vi;
                }
            }
            for ((pi, &mi), &vi) in
                value.data_mut().iter_mut().zip(m.data()).zip(v.data())
            {
                let m_hat = mi / corr1;
                let v_hat = vi / corr2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

}

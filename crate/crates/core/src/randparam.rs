//! Randomized generator parameters.
//!
//! The randomized layers carry a `(mu, log_sigma)` pair per parameter; the
//! realized weight is `theta = mu + eps * sigma` with `sigma = exp(log_sigma)`.
//! Storing `log_sigma` keeps `sigma` strictly positive no matter what the
//! optimizer does. Everything else stays in `frozen`, which is trained
//! normally during adversarial training but held fixed during inversion.

use alloc::string::String;
use alloc::vec::Vec;

use crate::params::{BoundParams, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

/// Floor applied when sigma is used as a divisor in analyses. Never applied
/// during training or realization.
pub const SIGMA_ANALYSIS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct RandEntry<T = Real> {
    pub name: String,
    pub mu: Tensor<T>,
    pub log_sigma: Tensor<T>,
}

impl<T: Scalar> RandEntry<T> {
    pub fn sigma(&self) -> Tensor<T> {
        self.log_sigma.map(|r| r.exp())
    }
}

#[derive(Clone, Debug)]
pub struct RandomizedParamStore<T = Real> {
    pub entries: Vec<RandEntry<T>>,
    pub frozen: ParamSet<T>,
}

/// One tensor of `eps` values per randomized entry, in entry order.
#[derive(Clone, Debug)]
pub struct EpsilonVector<T = Real> {
    pub entries: Vec<Tensor<T>>,
}

impl<T: Scalar> EpsilonVector<T> {
    /// Constant fill, used for the inversion initialization.
    pub fn constant(store: &RandomizedParamStore<T>, value: T) -> Self {
        EpsilonVector {
            entries: store.entries.iter().map(|e| Tensor::full(e.mu.shape(), value)).collect(),
        }
    }

    pub fn zeros(store: &RandomizedParamStore<T>) -> Self {
        Self::constant(store, T::ZERO)
    }

    /// Fresh standard-normal draw, one value per randomized parameter.
    pub fn sample(store: &RandomizedParamStore<T>, stream: &mut crate::rng::Stream) -> Self {
        EpsilonVector {
            entries: store.entries.iter().map(|e| stream.normal_tensor(e.mu.shape())).collect(),
        }
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|t| t.numel()).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum()
    }
}

impl<T: Scalar> RandomizedParamStore<T> {
    /// Split a deterministic generator into a store: the parameters named in
    /// `randomized` become `(mu = value, log_sigma = 0)` entries (so sigma
    /// starts at exactly 1), everything else lands in `frozen`. Entry order
    /// follows `randomized`.
    pub fn from_deterministic(params: &ParamSet<T>, randomized: &[String]) -> Self {
        let mut entries = Vec::with_capacity(randomized.len());
        for name in randomized {
            let value = params.get(name);
            entries.push(RandEntry {
                name: name.clone(),
                mu: value.clone(),
                log_sigma: Tensor::zeros(value.shape()),
            });
        }
        let mut frozen = ParamSet::new();
        for (name, tensor) in params.iter() {
            if !randomized.iter().any(|r| r == name) {
                frozen.insert(name, tensor.clone());
            }
        }
        RandomizedParamStore { entries, frozen }
    }

    /// A store with no randomized entries (plain deterministic weights).
    pub fn deterministic(params: &ParamSet<T>) -> Self {
        RandomizedParamStore { entries: Vec::new(), frozen: params.clone() }
    }

    pub fn entry(&self, name: &str) -> Option<&RandEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Plain (non-differentiable) realization. `eps = None` realizes at the
    /// mean, i.e. `theta = mu`.
    pub fn realize_plain(&self, eps: Option<&EpsilonVector<T>>) -> ParamSet<T> {
        if let Some(e) = eps {
            assert!(
                e.entries.len() == self.entries.len(),
                "realize: epsilon has {} entries, store has {}",
                e.entries.len(),
                self.entries.len()
            );
        }
        let mut out = self.frozen.clone();
        for (i, entry) in self.entries.iter().enumerate() {
            let theta = match eps {
                None => entry.mu.clone(),
                Some(e) => {
                    let ev = &e.entries[i];
                    assert!(
                        ev.shape() == entry.mu.shape(),
                        "realize: epsilon shape {:?} does not match {:?} of entry {:?}",
                        ev.shape(),
                        entry.mu.shape(),
                        entry.name
                    );
                    Tensor::from_fn(entry.mu.shape(), |j| {
                        entry.mu.data()[j] + ev.data()[j] * entry.log_sigma.data()[j].exp()
                    })
                }
            };
            out.insert(&entry.name, theta);
        }
        out
    }

    /// Collect the full deterministic parameter set (`theta = mu`).
    pub fn to_deterministic(&self) -> ParamSet<T> {
        self.realize_plain(None)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut tensors: Vec<&Tensor<T>> = Vec::new();
        for e in &self.entries {
            tensors.push(&e.mu);
            tensors.push(&e.log_sigma);
        }
        let frozen_fp = self.frozen.fingerprint();
        crate::tensor::fingerprint(tensors.into_iter()) ^ frozen_fp.rotate_left(17)
    }

    /// Largest `log_sigma` across entries, with the owning entry name.
    pub fn max_log_sigma(&self) -> Option<(String, f64)> {
        let mut best: Option<(String, f64)> = None;
        for e in &self.entries {
            for v in e.log_sigma.data() {
                let x = v.to_f64();
                if best.as_ref().map_or(true, |(_, b)| x > *b) {
                    best = Some((e.name.clone(), x));
                }
            }
        }
        best
    }
}

/// Tape registration of a store, with the realized weights bound per entry.
pub struct BoundStore<T = Real> {
    pub mu: Vec<Var>,
    pub log_sigma: Vec<Var>,
    pub eps: Vec<Var>,
    pub frozen: BoundParams<T>,
    /// Realized full parameter map: frozen names plus realized entries.
    pub weights: BoundParams<T>,
}

/// How the three groups of a store register on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreMode {
    /// Training: `(mu, log_sigma)` and frozen train, `eps` is a constant draw.
    Train,
    /// Inversion: everything is frozen except `eps`.
    InvertEps,
    /// Fully frozen (evaluation).
    Frozen,
}

/// Realize `theta = mu + eps * exp(log_sigma)` on the tape.
///
/// Differentiable with respect to whichever of `mu`, `log_sigma`, `eps` the
/// mode registers as leaves. Panics if `eps` is missing an entry.
pub fn realize_weights<T: Scalar>(
    tape: &mut Tape<T>,
    store: &RandomizedParamStore<T>,
    eps: &EpsilonVector<T>,
    mode: StoreMode,
) -> BoundStore<T> {
    assert!(
        eps.entries.len() == store.entries.len(),
        "realize: epsilon has {} entries, store has {}",
        eps.entries.len(),
        store.entries.len()
    );
    let frozen = match mode {
        StoreMode::Train => BoundParams::trainable(tape, &store.frozen),
        _ => BoundParams::frozen(tape, &store.frozen),
    };
    let mut weights = BoundParams::empty();
    for (name, var) in frozen.iter() {
        weights.insert(name, var);
    }
    let mut mu_vars = Vec::new();
    let mut ls_vars = Vec::new();
    let mut eps_vars = Vec::new();
    for (i, entry) in store.entries.iter().enumerate() {
        let ev = &eps.entries[i];
        assert!(
            ev.shape() == entry.mu.shape(),
            "realize: epsilon shape {:?} does not match {:?} of entry {:?}",
            ev.shape(),
            entry.mu.shape(),
            entry.name
        );
        let (mu, ls, e) = match mode {
            StoreMode::Train => (
                tape.leaf(entry.mu.clone()),
                tape.leaf(entry.log_sigma.clone()),
                tape.constant(ev.clone()),
            ),
            StoreMode::InvertEps => (
                tape.constant(entry.mu.clone()),
                tape.constant(entry.log_sigma.clone()),
                tape.leaf(ev.clone()),
            ),
            StoreMode::Frozen => (
                tape.constant(entry.mu.clone()),
                tape.constant(entry.log_sigma.clone()),
                tape.constant(ev.clone()),
            ),
        };
        let sigma = tape.exp(ls);
        let scaled = tape.mul(e, sigma);
        let theta = tape.add(mu, scaled);
        weights.insert(&entry.name, theta);
        mu_vars.push(mu);
        ls_vars.push(ls);
        eps_vars.push(e);
    }
    BoundStore { mu: mu_vars, log_sigma: ls_vars, eps: eps_vars, frozen, weights }
}

/// `alpha * sum_i eps_i^2` over every randomized entry.
pub fn epsilon_regularizer<T: Scalar>(tape: &mut Tape<T>, eps_vars: &[Var], alpha: T) -> Var {
    let mut total: Option<Var> = None;
    for &e in eps_vars {
        let sq = tape.square(e);
        let s = tape.sum_all(sq);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s),
        });
    }
    let total = total.unwrap_or_else(|| tape.scalar_const(T::ZERO));
    tape.mul_scalar(total, alpha)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamCounts {
    /// Elements carrying a `(mu, log_sigma)` pair.
    pub randomized: usize,
    /// Total parameter count of the deterministic generator.
    pub total: usize,
    /// `randomized / total`: added `log_sigma` elements as a fraction of the
    /// deterministic generator's parameter count.
    pub relative_increase: f64,
}

pub fn count_params<T: Scalar>(store: &RandomizedParamStore<T>) -> ParamCounts {
    let randomized: usize = store.entries.iter().map(|e| e.mu.numel()).sum();
    let total = randomized + store.frozen.total_elements();
    let relative_increase = if total == 0 { 0.0 } else { randomized as f64 / total as f64 };
    ParamCounts { randomized, total, relative_increase }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedHub;

    fn tiny_store() -> RandomizedParamStore<f64> {
        let mut params = ParamSet::new();
        params.insert("a", Tensor::new(&[2], vec![0.5, -0.25]));
        params.insert("b", Tensor::new(&[1], vec![2.0]));
        params.insert("c", Tensor::new(&[3], vec![1.0, 2.0, 3.0]));
        RandomizedParamStore::from_deterministic(&params, &["a".into(), "b".into()])
    }

    #[test]
    fn realize_is_mu_plus_eps_sigma() {
        // mu = 0.5, sigma = 2 (log_sigma = ln 2), eps = 0.25 -> theta = 1.0
        let mut store = tiny_store();
        store.entries[0].log_sigma = Tensor::full(&[2], 2.0f64.ln());
        let mut eps = EpsilonVector::zeros(&store);
        eps.entries[0] = Tensor::full(&[2], 0.25);
        let realized = store.realize_plain(Some(&eps));
        assert!((realized.get("a").data()[0] - 1.0).abs() < 1e-12);
        // eps = 0 entries stay at mu
        assert!((realized.get("b").item() - 2.0).abs() < 1e-12);
        // frozen untouched
        assert_eq!(realized.get("c").data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_eps_realizes_mu_for_every_entry() {
        let store = tiny_store();
        let eps = EpsilonVector::zeros(&store);
        let realized = store.realize_plain(Some(&eps));
        for e in &store.entries {
            assert!(realized.get(&e.name).bitwise_eq(&e.mu));
        }
    }

    #[test]
    fn sampled_theta_std_matches_sigma() {
        // mu = 0, sigma = 3: sample std of theta within 1% of 3 at 1e5 draws
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::zeros(&[100_000]));
        let mut store = RandomizedParamStore::from_deterministic(&params, &["w".into()]);
        store.entries[0].log_sigma = Tensor::full(&[100_000], 3.0f64.ln());
        let hub = SeedHub::new(41);
        let mut stream = hub.stream("theta-std");
        let eps = EpsilonVector::sample(&store, &mut stream);
        let realized = store.realize_plain(Some(&eps));
        let data = realized.get("w").data();
        let n = data.len() as f64;
        let mean: f64 = data.iter().sum::<f64>() / n;
        let var: f64 = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 3.0).abs() / 3.0 < 0.01, "std {}", std);
    }

    #[test]
    fn regularizer_value_and_gradient() {
        // eps = [3,4], alpha = 1e-4 -> 25e-4; gradient is exactly 2*alpha*eps
        let store = tiny_store();
        let mut eps = EpsilonVector::zeros(&store);
        eps.entries[0] = Tensor::new(&[2], vec![3.0, 4.0]);
        let mut tape = Tape::<f64>::new();
        let bound = realize_weights(&mut tape, &store, &eps, StoreMode::InvertEps);
        let reg = epsilon_regularizer(&mut tape, &bound.eps, 1e-4);
        assert!((tape.value(reg).item() - 25e-4).abs() < 1e-15);
        let grads = tape.backward(reg);
        let g = grads.tensor(&tape, bound.eps[0]).unwrap();
        assert!((g.data()[0] - 2.0 * 1e-4 * 3.0).abs() < 1e-15);
        assert!((g.data()[1] - 2.0 * 1e-4 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn zero_eps_regularizer_is_zero_with_zero_gradient() {
        let store = tiny_store();
        let eps = EpsilonVector::zeros(&store);
        let mut tape = Tape::<f64>::new();
        let bound = realize_weights(&mut tape, &store, &eps, StoreMode::InvertEps);
        let reg = epsilon_regularizer(&mut tape, &bound.eps, 0.5);
        assert_eq!(tape.value(reg).item(), 0.0);
        let grads = tape.backward(reg);
        let g = grads.tensor(&tape, bound.eps[0]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regularizer_equals_sigma_weighted_weight_distance() {
        // alpha * ||eps||^2 == sum_i (alpha / sigma_i^2) (theta_i - mu_i)^2
        let hub = SeedHub::new(9);
        let mut stream = hub.stream("identity");
        let mut params = ParamSet::<f64>::new();
        params.insert("w", stream.normal_tensor(&[64]));
        let mut store = RandomizedParamStore::from_deterministic(&params, &["w".into()]);
        store.entries[0].log_sigma = stream.normal_scaled(&[64], 0.5);
        let eps = EpsilonVector::sample(&store, &mut stream);
        let alpha = 1e-4;
        let lhs = alpha * eps.norm_squared();
        let realized = store.realize_plain(Some(&eps));
        let theta = realized.get("w");
        let e = &store.entries[0];
        let rhs: f64 = (0..64)
            .map(|i| {
                let sigma = e.log_sigma.data()[i].exp();
                let d = theta.data()[i] - e.mu.data()[i];
                alpha / (sigma * sigma) * d * d
            })
            .sum();
        assert!((lhs - rhs).abs() / lhs.abs().max(1e-300) < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn realize_is_linear_in_eps() {
        let hub = SeedHub::new(11);
        let mut stream = hub.stream("linear");
        let mut params = ParamSet::<f64>::new();
        params.insert("w", stream.normal_tensor(&[16]));
        let mut store = RandomizedParamStore::from_deterministic(&params, &["w".into()]);
        store.entries[0].log_sigma = stream.normal_scaled(&[16], 0.3);
        let e1 = EpsilonVector::sample(&store, &mut stream);
        let e2 = EpsilonVector::sample(&store, &mut stream);
        let (a, b) = (0.7, -1.3);
        let combo = EpsilonVector {
            entries: vec![Tensor::from_fn(&[16], |i| {
                a * e1.entries[0].data()[i] + b * e2.entries[0].data()[i]
            })],
        };
        let lhs = store.realize_plain(Some(&combo));
        let r1 = store.realize_plain(Some(&e1));
        let r2 = store.realize_plain(Some(&e2));
        let mu = &store.entries[0].mu;
        for i in 0..16 {
            let expect = a * (r1.get("w").data()[i] - mu.data()[i])
                + b * (r2.get("w").data()[i] - mu.data()[i])
                + mu.data()[i];
            assert!((lhs.get("w").data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn count_params_zero_randomized() {
        let mut params = ParamSet::<f64>::new();
        params.insert("w", Tensor::zeros(&[10]));
        let store = RandomizedParamStore::deterministic(&params);
        let counts = count_params(&store);
        assert_eq!(counts.randomized, 0);
        assert_eq!(counts.total, 10);
        assert_eq!(counts.relative_increase, 0.0);
    }

    #[test]
    #[should_panic(expected = "epsilon has 0 entries")]
    fn missing_epsilon_entry_is_a_hard_error() {
        let store = tiny_store();
        let eps = EpsilonVector::<f64> { entries: Vec::new() };
        let _ = store.realize_plain(Some(&eps));
    }
}

//! Latent-space semantics: hyperplane fitting for binary attributes, PCA
//! directions, attribute editing and interpolation between inversions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::invert::{InversionResult, LatentCodes, Strategy};
use crate::linalg::{sym_eigen, MatF64};
use crate::nets::{self, GeneratorSpec};
use crate::randparam::{EpsilonVector, RandomizedParamStore};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LatentError {
    SingleClass,
    TooFewSamples(String),
    DimensionTooLarge { k: usize, dim: usize },
    StoreMismatch,
    Unsupported(String),
}

impl core::fmt::Display for LatentError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LatentError::SingleClass => write!(f, "hyperplane fit needs both classes present"),
            LatentError::TooFewSamples(m) => write!(f, "too few samples: {}", m),
            LatentError::DimensionTooLarge { k, dim } => {
                write!(f, "requested {} directions in a {}-dim space", k, dim)
            }
            LatentError::StoreMismatch => {
                write!(f, "inversion results come from different weight stores")
            }
            LatentError::Unsupported(m) => write!(f, "unsupported: {}", m),
        }
    }
}

pub type LatentResult<V> = Result<V, LatentError>;

/// Separating hyperplane in the intermediate latent space.
#[derive(Clone, Debug)]
pub struct Hyperplane {
    /// Unit normal.
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Hyperplane {
    pub fn signed_distance<T: Scalar>(&self, w: &Tensor<T>) -> f64 {
        assert!(
            w.numel() == self.normal.len(),
            "hyperplane: code dim {} vs normal dim {}",
            w.numel(),
            self.normal.len()
        );
        self.normal.iter().zip(w.data()).map(|(n, v)| n * v.to_f64()).sum::<f64>() + self.offset
    }

    pub fn classify<T: Scalar>(&self, w: &Tensor<T>) -> bool {
        self.signed_distance(w) > 0.0
    }
}

const LOGISTIC_MAX_STEPS: usize = 5000;
const LOGISTIC_TOL: f64 = 1e-6;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Logistic regression by full-batch gradient descent from a zero init,
/// run to convergence (loss delta below 1e-6) or 5000 steps.
///
/// The returned normal is the unit-normalized weight vector. Flipping every
/// label negates the plane exactly (the zero init makes the two
/// trajectories mirror images).
pub fn fit_hyperplane<T: Scalar>(codes: &[(Tensor<T>, bool)]) -> LatentResult<Hyperplane> {
    if codes.is_empty() {
        return Err(LatentError::TooFewSamples("no samples".into()));
    }
    let pos = codes.iter().filter(|(_, l)| *l).count();
    if pos == 0 || pos == codes.len() {
        return Err(LatentError::SingleClass);
    }
    let dim = codes[0].0.numel();
    let xs: Vec<Vec<f64>> = codes
        .iter()
        .map(|(c, _)| {
            assert!(
                c.numel() == dim,
                "hyperplane: inconsistent code dims {} vs {}",
                c.numel(),
                dim
            );
            c.data().iter().map(|v| v.to_f64()).collect()
        })
        .collect();
    let ys: Vec<f64> = codes.iter().map(|(_, l)| if *l { 1.0 } else { -1.0 }).collect();
    let n = xs.len() as f64;

    // safe fixed step from the logistic-loss curvature bound
    let mean_sq: f64 = xs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .sum::<f64>()
        / n;
    let lr = 1.0 / (0.25 * mean_sq).max(1e-12);

    let mut v = alloc::vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut prev_loss = f64::INFINITY;
    for _ in 0..LOGISTIC_MAX_STEPS {
        let mut loss = 0.0;
        let mut gv = alloc::vec![0.0f64; dim];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let s: f64 = v.iter().zip(x).map(|(vi, xi)| vi * xi).sum::<f64>() + b;
            let margin = y * s;
            // ln(1 + exp(-margin)), computed stably
            loss += (-margin).max(0.0) + libm::log1p(libm::exp(-libm::fabs(margin)));
            let coeff = -y * sigmoid(-margin);
            for (g, xi) in gv.iter_mut().zip(x) {
                *g += coeff * xi;
            }
            gb += coeff;
        }
        loss /= n;
        for (vi, g) in v.iter_mut().zip(&gv) {
            *vi -= lr * g / n;
        }
        b -= lr * gb / n;
        if (prev_loss - loss).abs() < LOGISTIC_TOL {
            break;
        }
        prev_loss = loss;
    }

    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm < 1e-12 {
        return Err(LatentError::Unsupported("degenerate fit (zero weight vector)".into()));
    }
    Ok(Hyperplane { normal: v.iter().map(|x| x / norm).collect(), offset: b / norm })
}

/// Fit on a shuffled 80% split and report accuracy on the held-out 20%.
pub fn fit_hyperplane_holdout<T: Scalar>(
    codes: &[(Tensor<T>, bool)],
    stream: &mut Stream,
) -> LatentResult<(Hyperplane, f64)> {
    if codes.len() < 5 {
        return Err(LatentError::TooFewSamples(format!(
            "holdout fit needs >= 5 samples, got {}",
            codes.len()
        )));
    }
    let mut order: Vec<usize> = (0..codes.len()).collect();
    stream.shuffle(&mut order);
    let held = (codes.len() / 5).max(1);
    let (test_idx, train_idx) = order.split_at(held);
    let train: Vec<(Tensor<T>, bool)> =
        train_idx.iter().map(|&i| codes[i].clone()).collect();
    let plane = fit_hyperplane(&train)?;
    let mut correct = 0usize;
    for &i in test_idx {
        if plane.classify(&codes[i].0) == codes[i].1 {
            correct += 1;
        }
    }
    Ok((plane, correct as f64 / test_idx.len() as f64))
}

/// Top-`k` principal directions of a code set: eigenvectors of the sample
/// covariance in descending eigenvalue order, sign-fixed so the
/// largest-magnitude component is positive. Also returns the eigenvalues.
pub fn pca_directions<T: Scalar>(
    codes: &[Tensor<T>],
    k: usize,
) -> LatentResult<(Vec<Vec<f64>>, Vec<f64>)> {
    if codes.is_empty() {
        return Err(LatentError::TooFewSamples("no samples".into()));
    }
    let dim = codes[0].numel();
    if k > dim {
        return Err(LatentError::DimensionTooLarge { k, dim });
    }
    if codes.len() < k + 1 {
        return Err(LatentError::TooFewSamples(format!(
            "pca with k={} needs >= {} samples, got {}",
            k,
            k + 1,
            codes.len()
        )));
    }
    let n = codes.len() as f64;
    let mut mean = alloc::vec![0.0f64; dim];
    for c in codes {
        for (m, v) in mean.iter_mut().zip(c.data()) {
            *m += v.to_f64();
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = MatF64::zeros(dim);
    for c in codes {
        for i in 0..dim {
            let di = c.data()[i].to_f64() - mean[i];
            for j in 0..dim {
                cov.data[i * dim + j] += di * (c.data()[j].to_f64() - mean[j]);
            }
        }
    }
    for v in cov.data.iter_mut() {
        *v /= n - 1.0;
    }
    let (vals, vecs) = sym_eigen(&cov);
    let mut dirs = Vec::with_capacity(k);
    for row in 0..k {
        let mut d: Vec<f64> = (0..dim).map(|j| vecs.at(row, j)).collect();
        let lead = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if d[lead] < 0.0 {
            for x in d.iter_mut() {
                *x = -*x;
            }
        }
        dirs.push(d);
    }
    Ok((dirs, vals[..k].to_vec()))
}

/// Synthesize `w + step * direction` with the tuned weights of an inversion
/// result (recovered `eps` held fixed). Per-layer codes are all shifted.
pub fn edit<T: Scalar>(
    result: &InversionResult<T>,
    direction: &[f64],
    step: f64,
    spec: &GeneratorSpec,
) -> Tensor<T> {
    let norm: f64 = direction.iter().map(|x| x * x).sum::<f64>();
    assert!(
        (norm - 1.0).abs() < 1e-6,
        "edit: direction must be unit length, got |d|^2 = {}",
        norm
    );
    let shift = |w: &Tensor<T>| -> Tensor<T> {
        assert!(
            w.numel() == direction.len(),
            "edit: direction dim {} vs code dim {}",
            direction.len(),
            w.numel()
        );
        Tensor::from_fn(w.shape(), |i| {
            w.data()[i] + T::from_f64(step * direction[i])
        })
    };
    let codes = match &result.codes {
        LatentCodes::Single(w) => LatentCodes::Single(shift(w)),
        LatentCodes::PerLayer(ws) => LatentCodes::PerLayer(ws.iter().map(shift).collect()),
    };
    synth_with(&result.final_weights, spec, &codes)
}

fn synth_with<T: Scalar>(
    weights: &crate::params::ParamSet<T>,
    spec: &GeneratorSpec,
    codes: &LatentCodes<T>,
) -> Tensor<T> {
    use crate::params::BoundParams;
    use crate::tape::Tape;
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, weights);
    let styles = match codes {
        LatentCodes::Single(w) => {
            nets::Styles::Shared(tape.constant(w.reshaped(&[1, w.numel()])))
        }
        LatentCodes::PerLayer(ws) => nets::Styles::PerLayer(
            ws.iter().map(|w| tape.constant(w.reshaped(&[1, w.numel()]))).collect(),
        ),
    };
    let img = nets::synthesize(&mut tape, &styles, &bound, spec, Default::default());
    tape.value(img).reshaped(&[3, spec.final_resolution, spec.final_resolution])
}

/// Images along the linear path `w = (1-a) w_a + a w_b`,
/// `eps = (1-a) eps_a + a eps_b`, realized through the shared store.
///
/// Both results must come from the same store; mixed strategies are
/// rejected. Latent-only results interpolate the code against the store
/// mean.
pub fn interpolate<T: Scalar>(
    store: &RandomizedParamStore<T>,
    a: &InversionResult<T>,
    b: &InversionResult<T>,
    alphas: &[f64],
    spec: &GeneratorSpec,
) -> LatentResult<Vec<Tensor<T>>> {
    if a.store_fingerprint != b.store_fingerprint {
        return Err(LatentError::StoreMismatch);
    }
    let (wa, wb) = match (&a.codes, &b.codes) {
        (LatentCodes::Single(x), LatentCodes::Single(y)) => (x, y),
        _ => {
            return Err(LatentError::Unsupported(
                "interpolation needs single-code results".into(),
            ))
        }
    };
    let lerp_t = |x: &Tensor<T>, y: &Tensor<T>, al: f64| -> Tensor<T> {
        Tensor::from_fn(x.shape(), |i| {
            T::from_f64((1.0 - al) * x.data()[i].to_f64() + al * y.data()[i].to_f64())
        })
    };
    let mut out = Vec::with_capacity(alphas.len());
    for &al in alphas {
        let w = lerp_t(wa, wb, al);
        let weights = match (&a.epsilon, &b.epsilon) {
            (Some(ea), Some(eb)) => {
                let eps = EpsilonVector {
                    entries: ea
                        .entries
                        .iter()
                        .zip(&eb.entries)
                        .map(|(x, y)| lerp_t(x, y, al))
                        .collect(),
                };
                store.realize_plain(Some(&eps))
            }
            (None, None) => store.to_deterministic(),
            _ => {
                return Err(LatentError::Unsupported(
                    "cannot interpolate between strategies with and without eps".into(),
                ))
            }
        };
        out.push(synth_with(&weights, spec, &LatentCodes::Single(w)));
    }
    Ok(out)
}

/// Mixed-strategy guard helper for callers.
pub fn is_interpolable(a: &InversionResult, b: &InversionResult) -> bool {
    a.store_fingerprint == b.store_fingerprint
        && matches!(
            (a.strategy, b.strategy),
            (Strategy::Wrangan, Strategy::Wrangan) | (Strategy::WOnly, Strategy::WOnly)
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedHub;

    fn separable_codes(n: usize, seed: u64) -> Vec<(Tensor<f64>, bool)> {
        // two clusters along a known direction with cross-talk noise
        let hub = SeedHub::new(seed);
        let mut s = hub.stream("codes");
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let center = if label { 1.2 } else { -1.2 };
                let code = Tensor::from_fn(&[16], |j| {
                    if j == 3 {
                        center + s.normal() * 0.3
                    } else {
                        s.normal() * 0.5
                    }
                });
                (code, label)
            })
            .collect()
    }

    #[test]
    fn separable_attribute_reaches_high_holdout_accuracy() {
        let codes = separable_codes(200, 1);
        let hub = SeedHub::new(2);
        let (plane, acc) = fit_hyperplane_holdout(&codes, &mut hub.stream("split")).unwrap();
        assert!(acc >= 0.95, "holdout accuracy {}", acc);
        let norm: f64 = plane.normal.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-6);
        // the separating dimension dominates the normal
        assert!(plane.normal[3].abs() > 0.8, "normal {:?}", plane.normal);
    }

    #[test]
    fn flipped_labels_negate_the_plane() {
        let codes = separable_codes(120, 3);
        let flipped: Vec<(Tensor<f64>, bool)> =
            codes.iter().map(|(c, l)| (c.clone(), !l)).collect();
        let p1 = fit_hyperplane(&codes).unwrap();
        let p2 = fit_hyperplane(&flipped).unwrap();
        for (a, b) in p1.normal.iter().zip(&p2.normal) {
            assert!((a + b).abs() < 1e-9, "{} vs {}", a, b);
        }
        assert!((p1.offset + p2.offset).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_a_hard_error() {
        let codes: Vec<(Tensor<f64>, bool)> =
            separable_codes(20, 4).into_iter().map(|(c, _)| (c, true)).collect();
        assert!(matches!(fit_hyperplane(&codes), Err(LatentError::SingleClass)));
    }

    #[test]
    fn fit_is_invariant_to_sample_order() {
        let codes = separable_codes(100, 5);
        let mut reversed = codes.clone();
        reversed.reverse();
        let p1 = fit_hyperplane(&codes).unwrap();
        let p2 = fit_hyperplane(&reversed).unwrap();
        for (a, b) in p1.normal.iter().zip(&p2.normal) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pca_finds_the_dominant_axis() {
        let hub = SeedHub::new(6);
        let mut s = hub.stream("pca");
        // variance only along e1
        let codes: Vec<Tensor<f64>> = (0..200)
            .map(|_| Tensor::from_fn(&[8], |j| if j == 1 { s.normal() * 2.0 } else { 0.0 }))
            .collect();
        let (dirs, vals) = pca_directions(&codes, 2).unwrap();
        assert!(dirs[0][1].abs() > 0.999, "first direction {:?}", dirs[0]);
        assert!(dirs[0][1] > 0.0, "sign fix");
        assert!(vals[0] > vals[1]);
        // orthonormality
        let dot: f64 = dirs[0].iter().zip(&dirs[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-6);
    }

    #[test]
    fn pca_eigenvalues_match_power_iteration_oracle() {
        let hub = SeedHub::new(7);
        let mut s = hub.stream("pca2");
        let codes: Vec<Tensor<f64>> = (0..300)
            .map(|_| {
                Tensor::from_fn(&[6], |j| s.normal() * (1.0 + j as f64))
            })
            .collect();
        let (dirs, vals) = pca_directions(&codes, 3).unwrap();
        // oracle: independent power iteration with deflation on the covariance
        let n = codes.len() as f64;
        let dim = 6;
        let mut mean = vec![0.0f64; dim];
        for c in &codes {
            for (m, v) in mean.iter_mut().zip(c.data()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = vec![0.0f64; dim * dim];
        for c in &codes {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += (c.data()[i] - mean[i]) * (c.data()[j] - mean[j]);
                }
            }
        }
        for v in cov.iter_mut() {
            *v /= n - 1.0;
        }
        let mut deflated = cov.clone();
        for (k, expect) in vals.iter().enumerate() {
            let mut v = vec![1.0f64; dim];
            for _ in 0..10_000 {
                let mut nv = vec![0.0f64; dim];
                for i in 0..dim {
                    for j in 0..dim {
                        nv[i] += deflated[i * dim + j] * v[j];
                    }
                }
                let norm = libm::sqrt(nv.iter().map(|x| x * x).sum::<f64>());
                for x in nv.iter_mut() {
                    *x /= norm;
                }
                v = nv;
            }
            let mut av = vec![0.0f64; dim];
            for i in 0..dim {
                for j in 0..dim {
                    av[i] += deflated[i * dim + j] * v[j];
                }
            }
            let lambda: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            assert!(
                (lambda - expect).abs() / expect.abs().max(1e-12) < 1e-8,
                "eigenvalue {}: jacobi {} vs power {}",
                k,
                expect,
                lambda
            );
            // deflate
            for i in 0..dim {
                for j in 0..dim {
                    deflated[i * dim + j] -= lambda * v[i] * v[j];
                }
            }
            // directions agree up to sign
            let dot: f64 = dirs[k].iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!(dot.abs() > 1.0 - 1e-6, "direction {} mismatch (dot {})", k, dot);
        }
    }

    #[test]
    fn pca_rejects_k_above_dimension() {
        let codes: Vec<Tensor<f64>> = (0..10).map(|_| Tensor::zeros(&[4])).collect();
        assert!(matches!(
            pca_directions(&codes, 5),
            Err(LatentError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn whitened_data_has_unit_eigenvalues() {
        let hub = SeedHub::new(8);
        let mut s = hub.stream("white");
        let n = 10_000;
        let dim = 6;
        let raw: Vec<Tensor<f64>> =
            (0..n).map(|_| Tensor::from_fn(&[dim], |_| s.normal())).collect();
        // whiten: subtract mean, rotate to eigenbasis, scale by 1/sqrt(lambda)
        let (dirs, vals) = pca_directions(&raw, dim).unwrap();
        let mut mean = vec![0.0f64; dim];
        for c in &raw {
            for (m, v) in mean.iter_mut().zip(c.data()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let white: Vec<Tensor<f64>> = raw
            .iter()
            .map(|c| {
                Tensor::from_fn(&[dim], |i| {
                    let centered: f64 = (0..dim)
                        .map(|j| dirs[i][j] * (c.data()[j] - mean[j]))
                        .sum();
                    centered / libm::sqrt(vals[i])
                })
            })
            .collect();
        let (_, wvals) = pca_directions(&white, dim).unwrap();
        for v in wvals {
            assert!((v - 1.0).abs() < 1e-4, "whitened eigenvalue {}", v);
        }
    }
}

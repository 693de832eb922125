//! Experimental protocols: model-corruption scoring over latent-shifted
//! samples, the five-strategy comparison harness, the layer-count /
//! coefficient grid, and the variance / influence / epsilon analyses.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::invert::{
    invert, invert_tune_with_init, InversionConfig, InversionResult, InvertError, Strategy,
    TuneMode,
};
use crate::metrics::{
    self, frechet_distance, kernel_distance, FeatureStats, MetricError, MetricResult,
};
use crate::nets::{self, GeneratorSpec, Styles};
use crate::params::{BoundParams, ParamSet};
use crate::randparam::{EpsilonVector, RandomizedParamStore};
use crate::rng::{SeedHub, Stream};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::ImageSet;

const SYNTH_CHUNK: usize = 32;

/// Minimum sample count for a full-rank 64-dim feature covariance.
pub const MIN_FEATURE_SAMPLES: usize = metrics::FEATURE_DIM + 1;

/// Named metric values with run provenance.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub seed: u64,
    pub config_hash: String,
    pub values: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn push(&mut self, name: &str, value: f64) {
        self.values.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Synthesize `w` codes in chunks and return individual `[3,R,R]` images.
pub fn synthesize_set<T: Scalar>(
    gen: &ParamSet<T>,
    spec: &GeneratorSpec,
    codes: &[Tensor<T>],
) -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(codes.len());
    for chunk in codes.chunks(SYNTH_CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * spec.w_dim);
        for c in chunk {
            data.extend_from_slice(c.data());
        }
        let batch = Tensor::new(&[chunk.len(), spec.w_dim], data);
        let mut tape = Tape::new();
        let bound = BoundParams::frozen(&mut tape, gen);
        let wv = tape.constant(batch);
        let img = nets::synthesize(&mut tape, &Styles::Shared(wv), &bound, spec, Default::default());
        let t = tape.value(img);
        let numel = 3 * spec.final_resolution * spec.final_resolution;
        for i in 0..chunk.len() {
            out.push(Tensor::new(
                &[3, spec.final_resolution, spec.final_resolution],
                t.data()[i * numel..(i + 1) * numel].to_vec(),
            ));
        }
    }
    out
}

/// Sample `n` latent codes through the mapping network.
pub fn sample_codes<T: Scalar>(
    gen: &ParamSet<T>,
    spec: &GeneratorSpec,
    n: usize,
    stream: &mut Stream,
) -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let b = remaining.min(SYNTH_CHUNK);
        let z: Tensor<T> = stream.normal_tensor(&[b, spec.z_dim]);
        let w = nets::map_latent_plain(gen, &z);
        for i in 0..b {
            out.push(Tensor::new(
                &[spec.w_dim],
                w.data()[i * spec.w_dim..(i + 1) * spec.w_dim].to_vec(),
            ));
        }
        remaining -= b;
    }
    out
}

/// Mean per-dimension standard deviation of `w = f(z)`, the characteristic
/// size of the style space used to scale latent shifts.
pub fn characteristic_size<T: Scalar>(
    gen: &ParamSet<T>,
    spec: &GeneratorSpec,
    n_samples: usize,
    stream: &mut Stream,
) -> f64 {
    assert!(n_samples >= 2, "characteristic_size: need at least 2 samples");
    let codes = sample_codes(gen, spec, n_samples, stream);
    let d = spec.w_dim;
    let mut mean = alloc::vec![0.0f64; d];
    for c in codes.iter() {
        for (m, v) in mean.iter_mut().zip(c.data()) {
            *m += v.to_f64();
        }
    }
    for m in mean.iter_mut() {
        *m /= n_samples as f64;
    }
    let mut var = alloc::vec![0.0f64; d];
    for c in codes.iter() {
        for (s, (v, m)) in var.iter_mut().zip(c.data().iter().zip(&mean)) {
            let dv = v.to_f64() - m;
            *s += dv * dv;
        }
    }
    let mut acc = 0.0;
    for s in var {
        acc += libm::sqrt(s / (n_samples - 1) as f64);
    }
    acc / d as f64
}

#[derive(Clone, Copy, Debug)]
pub struct CorruptionConfig {
    pub n_images: usize,
    pub shift_scale: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig { n_images: 256, shift_scale: 1.0 }
    }
}

/// Feature distances between latent-shifted samples of a (possibly tuned)
/// generator and a reference feature set.
///
/// Each sampled `w = f(z)` is moved along a uniformly random unit direction
/// scaled by `shift_scale * char_size` before synthesis.
pub fn corruption_fid<T: Scalar>(
    tuned: &ParamSet<T>,
    spec: &GeneratorSpec,
    ref_stats: &FeatureStats,
    ref_features: &[Vec<f64>],
    feat_params: &ParamSet<T>,
    char_size: f64,
    cfg: &CorruptionConfig,
    stream: &mut Stream,
) -> MetricResult<(f64, f64)> {
    if cfg.n_images < MIN_FEATURE_SAMPLES {
        return Err(MetricError(format!(
            "corruption needs >= {} images for a full-rank covariance, got {}",
            MIN_FEATURE_SAMPLES, cfg.n_images
        )));
    }
    let mut codes = sample_codes(tuned, spec, cfg.n_images, stream);
    let scale = cfg.shift_scale * char_size;
    if scale != 0.0 {
        for c in codes.iter_mut() {
            let dir = stream.unit_vector(spec.w_dim);
            for (v, d) in c.data_mut().iter_mut().zip(dir) {
                *v += T::from_f64(d * scale);
            }
        }
    }
    let images = synthesize_set(tuned, spec, &codes);
    let clamped: Vec<Tensor<T>> = images.iter().map(metrics::clamp_image).collect();
    let feats = metrics::extract_features(&clamped, feat_params);
    let stats = FeatureStats::from_features(&feats)?;
    let fid = frechet_distance(ref_stats, &stats)?;
    let kid = kernel_distance(ref_features, &feats)?;
    Ok((fid, kid))
}

/// Reference feature set of real images, shared by the corruption scores.
pub fn reference_features<T: Scalar>(
    real: &ImageSet<T>,
    feat_params: &ParamSet<T>,
    limit: usize,
) -> MetricResult<(FeatureStats, Vec<Vec<f64>>)> {
    let take = real.images.len().min(limit);
    if take < MIN_FEATURE_SAMPLES {
        return Err(MetricError(format!(
            "reference set needs >= {} images, got {}",
            MIN_FEATURE_SAMPLES, take
        )));
    }
    let feats = metrics::extract_features(&real.images[..take], feat_params);
    let stats = FeatureStats::from_features(&feats)?;
    Ok((stats, feats))
}

#[derive(Clone, Debug)]
pub struct StrategyRow {
    pub image_id: usize,
    pub strategy: Strategy,
    pub ok: bool,
    pub mse: f64,
    pub perceptual: f64,
    pub ms_ssim: f64,
    pub corruption_fid: f64,
    pub corruption_kid: f64,
    pub wall_seconds: f64,
    pub params_optimized: usize,
}

/// Run every strategy on one image; aborted strategies yield a flagged row
/// instead of stopping the harness. Corruption scoring is optional because
/// it dominates the runtime.
#[allow(clippy::too_many_arguments)]
pub fn strategy_compare_single<T: Scalar>(
    image_id: usize,
    target: &Tensor<T>,
    store: &RandomizedParamStore<T>,
    encoder: &ParamSet<T>,
    spec: &GeneratorSpec,
    make_cfg: &dyn Fn(Strategy) -> InversionConfig,
    corruption: Option<&CorruptionContext<'_, T>>,
    hub: &SeedHub,
    timer: &mut dyn FnMut() -> f64,
) -> Vec<StrategyRow> {
    let mut rows = Vec::with_capacity(crate::invert::ALL_STRATEGIES.len());
    for strategy in crate::invert::ALL_STRATEGIES {
        let cfg = make_cfg(strategy);
        let t0 = timer();
        let outcome = invert(target, store, encoder, spec, &cfg);
        let wall = timer() - t0;
        match outcome {
            Ok(result) => {
                let (cfid, ckid) = match corruption {
                    Some(ctx) => {
                        let mut stream = hub.stream(&format!(
                            "eval.corruption.{}.{}",
                            image_id,
                            strategy.name()
                        ));
                        match corruption_fid(
                            &result.final_weights,
                            spec,
                            ctx.ref_stats,
                            ctx.ref_features,
                            ctx.feat_params,
                            ctx.char_size,
                            &ctx.config,
                            &mut stream,
                        ) {
                            Ok(pair) => pair,
                            Err(_) => (f64::NAN, f64::NAN),
                        }
                    }
                    None => (f64::NAN, f64::NAN),
                };
                rows.push(StrategyRow {
                    image_id,
                    strategy,
                    ok: true,
                    mse: result.distortion.mse,
                    perceptual: result.distortion.perceptual,
                    ms_ssim: result.distortion.ms_ssim,
                    corruption_fid: cfid,
                    corruption_kid: ckid,
                    wall_seconds: wall,
                    params_optimized: result.params_optimized,
                });
            }
            Err(_) => rows.push(StrategyRow {
                image_id,
                strategy,
                ok: false,
                mse: f64::NAN,
                perceptual: f64::NAN,
                ms_ssim: f64::NAN,
                corruption_fid: f64::NAN,
                corruption_kid: f64::NAN,
                wall_seconds: wall,
                params_optimized: 0,
            }),
        }
    }
    rows
}

pub struct CorruptionContext<'a, T: Scalar> {
    pub ref_stats: &'a FeatureStats,
    pub ref_features: &'a [Vec<f64>],
    pub feat_params: &'a ParamSet<T>,
    pub char_size: f64,
    pub config: CorruptionConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    pub n_layers: usize,
    pub alpha: f64,
    pub mean_mse: f64,
    pub images: usize,
    /// Parameter count of the tuned layer set (the memory column).
    pub randomized_params: usize,
}

/// Mean reconstruction error of equal-coefficient tuning with the last `n`
/// layers adjustable, for one grid cell.
pub fn grid_cell<T: Scalar>(
    base: &ParamSet<T>,
    encoder: &ParamSet<T>,
    spec: &GeneratorSpec,
    images: &[Tensor<T>],
    n_layers: usize,
    alpha: f64,
    iterations: usize,
    lr: f64,
) -> Result<GridRow, InvertError> {
    let mut cfg = InversionConfig::for_strategy(Strategy::SimpleTune, spec);
    cfg.iterations = iterations;
    cfg.lr = lr;
    cfg.alpha_reg = alpha;
    cfg.tune_layers = n_layers;
    let mut total = 0.0;
    for img in images {
        let res =
            invert_tune_with_init(img, base, encoder, spec, &cfg, TuneMode::SimpleTune, None)?;
        total += res.distortion.mse;
    }
    let randomized_params: usize = spec
        .randomized_names_for(n_layers)
        .iter()
        .map(|n| base.get(n).numel())
        .sum();
    Ok(GridRow {
        n_layers,
        alpha,
        mean_mse: total / images.len().max(1) as f64,
        images: images.len(),
        randomized_params,
    })
}

/// Full grid over layer counts and coefficients; rows in `(n, alpha)` order.
#[allow(clippy::too_many_arguments)]
pub fn layer_grid<T: Scalar>(
    base: &ParamSet<T>,
    encoder: &ParamSet<T>,
    spec: &GeneratorSpec,
    images: &[Tensor<T>],
    n_values: &[usize],
    alphas: &[f64],
    iterations: usize,
    lr: f64,
) -> Result<Vec<GridRow>, InvertError> {
    let mut rows = Vec::with_capacity(n_values.len() * alphas.len());
    for &n in n_values {
        for &alpha in alphas {
            rows.push(grid_cell(base, encoder, spec, images, n, alpha, iterations, lr)?);
        }
    }
    Ok(rows)
}

pub const SMALL_SIGMA: f64 = 1e-3;
pub const VARIANCE_BINS: usize = 20;
/// Histogram support in log10(sigma).
pub const VARIANCE_LOG10_RANGE: (f64, f64) = (-8.0, 2.0);

#[derive(Clone, Debug)]
pub struct VarianceRow {
    pub layer: String,
    pub elements: usize,
    pub fraction_small: f64,
    pub bins: Vec<u64>,
}

/// Group consecutive store entries that belong to the same conv layer
/// (weight then bias).
fn layer_groups<T: Scalar>(store: &RandomizedParamStore<T>) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, e) in store.entries.iter().enumerate() {
        let layer = match e.name.rsplit_once('.') {
            Some((prefix, _)) => prefix.to_string(),
            None => e.name.clone(),
        };
        match groups.last_mut() {
            Some((name, idxs)) if *name == layer => idxs.push(i),
            _ => groups.push((layer, alloc::vec![i])),
        }
    }
    groups
}

/// Per-layer sigma distribution summary plus the small-variance fraction.
pub fn variance_histogram<T: Scalar>(store: &RandomizedParamStore<T>) -> Vec<VarianceRow> {
    let (lo, hi) = VARIANCE_LOG10_RANGE;
    let width = (hi - lo) / VARIANCE_BINS as f64;
    layer_groups(store)
        .into_iter()
        .map(|(layer, idxs)| {
            let mut bins = alloc::vec![0u64; VARIANCE_BINS];
            let mut small = 0usize;
            let mut total = 0usize;
            for &i in &idxs {
                for v in store.entries[i].log_sigma.data() {
                    let sigma = v.to_f64().exp();
                    total += 1;
                    if sigma < SMALL_SIGMA {
                        small += 1;
                    }
                    let l = libm::log10(sigma.max(1e-300));
                    let bin = (((l - lo) / width) as isize).clamp(0, VARIANCE_BINS as isize - 1);
                    bins[bin as usize] += 1;
                }
            }
            VarianceRow {
                layer,
                elements: total,
                fraction_small: small as f64 / total.max(1) as f64,
                bins,
            }
        })
        .collect()
}

/// For each randomized layer: resample that layer's weights from
/// `N(mu, sigma)` while holding the others at the mean, and report the mean
/// output MSE over `n_samples` latent draws.
pub fn layer_influence<T: Scalar>(
    store: &RandomizedParamStore<T>,
    spec: &GeneratorSpec,
    n_samples: usize,
    stream: &mut Stream,
) -> Vec<(String, f64)> {
    assert!(n_samples > 0, "layer_influence: need at least one sample");
    let det = store.to_deterministic();
    let codes = sample_codes(&det, spec, n_samples, stream);
    let base_images = synthesize_set(&det, spec, &codes);
    let groups = layer_groups(store);
    let mut out = Vec::with_capacity(groups.len());
    for (layer, idxs) in groups {
        let mut total = 0.0;
        for (code, base_img) in codes.iter().zip(&base_images) {
            let mut eps = EpsilonVector::zeros(store);
            for &i in &idxs {
                eps.entries[i] = stream.normal_tensor(store.entries[i].mu.shape());
            }
            let perturbed = store.realize_plain(Some(&eps));
            let img = synthesize_set(&perturbed, spec, core::slice::from_ref(code));
            total += metrics::mse(&img[0], base_img);
        }
        out.push((layer, total / n_samples as f64));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsStatsRow {
    pub layer: String,
    pub mean: f64,
    pub variance: f64,
    /// Recovered variance relative to the unit training prior.
    pub ratio_to_prior: f64,
}

/// Pooled per-layer statistics of recovered epsilon across inversions.
pub fn epsilon_statistics<T: Scalar>(
    results: &[&InversionResult<T>],
    store: &RandomizedParamStore<T>,
) -> MetricResult<Vec<EpsStatsRow>> {
    if results.len() < 5 {
        return Err(MetricError(format!(
            "epsilon statistics need >= 5 inversion results, got {}",
            results.len()
        )));
    }
    let groups = layer_groups(store);
    let mut rows = Vec::with_capacity(groups.len());
    for (layer, idxs) in groups {
        let mut n = 0usize;
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for r in results {
            let eps = match &r.epsilon {
                Some(e) => e,
                None => {
                    return Err(MetricError(format!(
                        "epsilon statistics require wrangan results, got {}",
                        r.strategy.name()
                    )))
                }
            };
            for &i in &idxs {
                for v in eps.entries[i].data() {
                    let x = v.to_f64();
                    sum += x;
                    sq += x * x;
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        let variance = (sq / n as f64 - mean * mean).max(0.0);
        rows.push(EpsStatsRow { layer, mean, variance, ratio_to_prior: variance / 1.0 });
    }
    Ok(rows)
}

/// Plain-generation quality: feature distances and k-NN precision/recall of
/// generated samples against a real set.
pub fn model_quality<T: Scalar>(
    gen: &ParamSet<T>,
    spec: &GeneratorSpec,
    real: &ImageSet<T>,
    feat_params: &ParamSet<T>,
    n_generated: usize,
    knn_k: usize,
    stream: &mut Stream,
) -> MetricResult<EvalReport> {
    let (ref_stats, ref_feats) = reference_features(real, feat_params, real.images.len())?;
    let codes = sample_codes(gen, spec, n_generated, stream);
    let images = synthesize_set(gen, spec, &codes);
    let clamped: Vec<Tensor<T>> = images.iter().map(metrics::clamp_image).collect();
    let gen_feats = metrics::extract_features(&clamped, feat_params);
    let gen_stats = FeatureStats::from_features(&gen_feats)?;
    let fid = frechet_distance(&ref_stats, &gen_stats)?;
    let kid = kernel_distance(&ref_feats, &gen_feats)?;
    let (precision, recall) = metrics::precision_recall(&ref_feats, &gen_feats, knn_k)?;
    let mut report = EvalReport::default();
    report.push("fid", fid);
    report.push("kid", kid);
    report.push("precision", precision);
    report.push("recall", recall);
    Ok(report)
}

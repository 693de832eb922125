//! Distortion and distribution metrics.
//!
//! Images are `[3,H,W]` (or batched `[B,3,H,W]`) in `[-1,1]`; they are
//! clamped and rescaled internally where a metric needs `[0,1]`. Statistics
//! accumulate in f64 with a fixed order, so every metric is a deterministic
//! function of its inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::{sym_sqrt, MatF64};
use crate::nets;
use crate::params::{BoundParams, ParamSet};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricError(pub String);

impl core::fmt::Display for MetricError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "metric error: {}", self.0)
    }
}

pub type MetricResult<V> = Result<V, MetricError>;

fn err<V>(msg: impl core::fmt::Display) -> MetricResult<V> {
    Err(MetricError(format!("{}", msg)))
}

/// Per-element mean of squared differences.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert!(
        a.shape() == b.shape(),
        "mse: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x.to_f64() - y.to_f64();
        acc += d * d;
    }
    acc / a.numel() as f64
}

// ---- MS-SSIM ---------------------------------------------------------------

const MSSSIM_SCALES: usize = 3;
/// First three standard scale weights, renormalized to sum 1 below.
const MSSSIM_RAW_WEIGHTS: [f64; MSSSIM_SCALES] = [0.0448, 0.2856, 0.3001];
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable filter with reflect padding (f64, single plane).
fn filter_plane(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    };
    let mut tmp = alloc::vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in k.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - r as isize, w);
                acc += kv * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = alloc::vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in k.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - r as isize, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn downsample_half(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (nh, nw) = (h / 2, w / 2);
    let mut out = alloc::vec![0.0f64; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            out[y * nw + x] = 0.25
                * (src[(2 * y) * w + 2 * x]
                    + src[(2 * y) * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, nh, nw)
}

/// Mean contrast-structure term and mean luminance term of SSIM on a plane.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> (f64, f64) {
    let mu_a = filter_plane(a, h, w, k);
    let mu_b = filter_plane(b, h, w, k);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let s_aa = filter_plane(&aa, h, w, k);
    let s_bb = filter_plane(&bb, h, w, k);
    let s_ab = filter_plane(&ab, h, w, k);
    let mut cs_sum = 0.0;
    let mut lum_sum = 0.0;
    for i in 0..h * w {
        let va = s_aa[i] - mu_a[i] * mu_a[i];
        let vb = s_bb[i] - mu_b[i] * mu_b[i];
        let cab = s_ab[i] - mu_a[i] * mu_b[i];
        cs_sum += (2.0 * cab + SSIM_C2) / (va + vb + SSIM_C2);
        lum_sum += (2.0 * mu_a[i] * mu_b[i] + SSIM_C1)
            / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + SSIM_C1);
    }
    let n = (h * w) as f64;
    (cs_sum / n, lum_sum / n)
}

/// Three-scale MS-SSIM with an 11x11 Gaussian window (sigma 1.5), standard
/// constants, luminance applied at the coarsest scale, result clamped to
/// `[0,1]`. Inputs are `[-1,1]` images of equal shape, rescaled to `[0,1]`;
/// channels are averaged.
///
/// Windows use reflect padding; an image whose extent at any scale drops
/// below `window/2 + 1` cannot be reflected and is a hard error.
pub fn ms_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> MetricResult<f64> {
    if a.shape() != b.shape() {
        return err(format!("ms_ssim: shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (c, h, w) = match *a.shape() {
        [c, h, w] => (c, h, w),
        [1, c, h, w] => (c, h, w),
        _ => return err(format!("ms_ssim: expected [C,H,W] image, got {:?}", a.shape())),
    };
    let min_extent = SSIM_WINDOW / 2 + 1;
    if h >> (MSSSIM_SCALES - 1) < min_extent || w >> (MSSSIM_SCALES - 1) < min_extent {
        return err(format!(
            "ms_ssim: image {}x{} smaller than the {}x{} window at scale {}",
            h, w, SSIM_WINDOW, SSIM_WINDOW, MSSSIM_SCALES
        ));
    }
    let weight_sum: f64 = MSSSIM_RAW_WEIGHTS.iter().sum();
    let weights: Vec<f64> = MSSSIM_RAW_WEIGHTS.iter().map(|v| v / weight_sum).collect();
    let k = gaussian_window();

    let to01 = |t: &Tensor<T>, ch: usize| -> Vec<f64> {
        let off = ch * h * w;
        t.data()[off..off + h * w]
            .iter()
            .map(|v| ((v.to_f64() + 1.0) * 0.5).clamp(0.0, 1.0))
            .collect()
    };

    let mut score = 0.0;
    for ch in 0..c {
        let mut pa = to01(a, ch);
        let mut pb = to01(b, ch);
        let (mut ph, mut pw) = (h, w);
        let mut channel = 1.0f64;
        for (scale, &wgt) in weights.iter().enumerate() {
            let (cs, lum) = ssim_terms(&pa, &pb, ph, pw, &k);
            if scale + 1 == MSSSIM_SCALES {
                channel *= signed_pow(lum * cs, wgt);
            } else {
                channel *= signed_pow(cs, wgt);
                let (na, nh, nw) = downsample_half(&pa, ph, pw);
                let (nb, _, _) = downsample_half(&pb, ph, pw);
                pa = na;
                pb = nb;
                ph = nh;
                pw = nw;
            }
        }
        score += channel;
    }
    Ok((score / c as f64).clamp(0.0, 1.0))
}

/// `x^p` for possibly slightly negative x from the cs term; negative bases
/// clamp to zero, matching the final `[0,1]` clamp.
fn signed_pow(x: f64, p: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        libm::pow(x, p)
    }
}

// ---- feature statistics ----------------------------------------------------

pub const FEATURE_DIM: usize = nets::FEAT_CHANNELS[2];

/// Mean and covariance of a feature set.
#[derive(Clone, Debug)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub covariance: MatF64,
    pub n: usize,
}

impl FeatureStats {
    /// Unbiased covariance; requires at least two samples.
    pub fn from_features(features: &[Vec<f64>]) -> MetricResult<Self> {
        if features.len() < 2 {
            return err(format!("feature stats need >= 2 samples, got {}", features.len()));
        }
        let d = features[0].len();
        let n = features.len();
        let mut mean = alloc::vec![0.0f64; d];
        for f in features {
            assert!(f.len() == d, "feature stats: inconsistent feature dim");
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = MatF64::zeros(d);
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in 0..d {
                    cov.data[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for v in cov.data.iter_mut() {
            *v /= (n - 1) as f64;
        }
        if cov.data.iter().any(|v| !v.is_finite()) {
            return err("feature stats: non-finite covariance");
        }
        if cov.max_asymmetry() > 1e-6 {
            return err("feature stats: covariance asymmetry above tolerance");
        }
        Ok(FeatureStats { mean, covariance: cov, n })
    }
}

/// Frechet distance between two Gaussians fitted to feature sets:
/// `|m1-m2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`, with the matrix square root
/// taken via `S1^(1/2) S2 S1^(1/2)` and eigenvalues clamped at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> MetricResult<f64> {
    if a.mean.len() != b.mean.len() {
        return err("frechet: feature dims differ");
    }
    if !a.covariance.data.iter().all(|v| v.is_finite())
        || !b.covariance.data.iter().all(|v| v.is_finite())
    {
        return err("frechet: non-finite covariance");
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let s1_half = sym_sqrt(&a.covariance);
    let inner = s1_half.matmul(&b.covariance).matmul(&s1_half);
    let cross = sym_sqrt(&inner);
    let tr = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
    Ok((mean_term + tr).max(0.0))
}

/// Unbiased MMD^2 with the polynomial kernel `(x.y/d + 1)^3`.
///
/// For equal sample counts this is the u-statistic that also excludes
/// same-index cross pairs, so the distance of a set to itself is exactly
/// zero; for unequal counts the cross term averages over all pairs. Both
/// forms are unbiased for independent samples.
pub fn kernel_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> MetricResult<f64> {
    if a.len() < 2 || b.len() < 2 {
        return err(format!(
            "kernel distance needs >= 2 samples per set, got {} and {}",
            a.len(),
            b.len()
        ));
    }
    let d = a[0].len() as f64;
    let kernel = |x: &[f64], y: &[f64]| -> f64 {
        let dotp: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
        let base = dotp / d + 1.0;
        base * base * base
    };
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut kxx = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                kxx += kernel(&a[i], &a[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i != j {
                kyy += kernel(&b[i], &b[j]);
            }
        }
    }
    let mut kxy = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if a.len() == b.len() && i == j {
                continue;
            }
            kxy += kernel(x, y);
        }
    }
    let cross = if a.len() == b.len() {
        kxy / (n * (n - 1.0))
    } else {
        kxy / (n * m)
    };
    Ok(kxx / (n * (n - 1.0)) + kyy / (m * (m - 1.0)) - 2.0 * cross)
}

/// k-NN manifold precision/recall.
///
/// Precision: fraction of generated samples lying within some real sample's
/// k-th neighbor radius; recall is the mirror image.
pub fn precision_recall(
    real: &[Vec<f64>],
    generated: &[Vec<f64>],
    k: usize,
) -> MetricResult<(f64, f64)> {
    if k == 0 {
        return err("precision_recall: k must be positive");
    }
    if real.len() <= k || generated.len() <= k {
        return err(format!(
            "precision_recall: need more than k={} samples per set, got {} and {}",
            k,
            real.len(),
            generated.len()
        ));
    }
    let coverage = |manifold: &[Vec<f64>], probes: &[Vec<f64>]| -> f64 {
        let radii: Vec<f64> = manifold
            .iter()
            .enumerate()
            .map(|(i, x)| kth_neighbor_sq(manifold, i, x, k))
            .collect();
        let mut inside = 0usize;
        for p in probes {
            let hit = manifold
                .iter()
                .zip(&radii)
                .any(|(x, &r)| dist_sq(p, x) <= r);
            if hit {
                inside += 1;
            }
        }
        inside as f64 / probes.len() as f64
    };
    let precision = coverage(real, generated);
    let recall = coverage(generated, real);
    Ok((precision, recall))
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kth_neighbor_sq(set: &[Vec<f64>], self_idx: usize, x: &[f64], k: usize) -> f64 {
    let mut d: Vec<f64> = set
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != self_idx)
        .map(|(_, y)| dist_sq(x, y))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    d[k - 1]
}

// ---- feature extraction -----------------------------------------------------

/// Pooled final-stage perceptual features for a set of images, one 64-vector
/// per image. Deterministic regardless of chunking because every image is a
/// batch-independent forward pass.
pub fn extract_features<T: Scalar>(
    images: &[Tensor<T>],
    feat_params: &ParamSet<T>,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    const CHUNK: usize = 32;
    for chunk in images.chunks(CHUNK) {
        let batch = stack_images(chunk);
        let mut tape = Tape::new();
        let bound = BoundParams::frozen(&mut tape, feat_params);
        let xv = tape.constant(batch);
        let f = nets::pooled_features(&mut tape, xv, &bound);
        let t = tape.value(f);
        let d = t.shape()[1];
        for i in 0..chunk.len() {
            out.push(t.data()[i * d..(i + 1) * d].iter().map(|v| v.to_f64()).collect());
        }
    }
    out
}

/// Stack `[3,H,W]` images into `[B,3,H,W]`.
pub fn stack_images<T: Scalar>(images: &[Tensor<T>]) -> Tensor<T> {
    assert!(!images.is_empty(), "stack_images: empty batch");
    let shape = images[0].shape();
    assert!(shape.len() == 3, "stack_images: expected [C,H,W], got {:?}", shape);
    let numel = images[0].numel();
    let mut data = Vec::with_capacity(images.len() * numel);
    for im in images {
        assert!(
            im.shape() == shape,
            "stack_images: mixed shapes {:?} vs {:?}",
            im.shape(),
            shape
        );
        data.extend_from_slice(im.data());
    }
    let mut full = alloc::vec![images.len()];
    full.extend_from_slice(shape);
    Tensor::new(&full, data)
}

/// Clamp an image to `[-1,1]`; applied before metrics and export only.
pub fn clamp_image<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| v.maxs(T::from_f64(-1.0)).mins(T::ONE))
}

//! Adversarial training: base GAN pretraining, randomized-weight training
//! (mean/variance pairs on the last N conv layers), and encoder training.
//!
//! Every iteration runs exactly one discriminator update followed by one
//! generator update. The discriminator step sees the generator as constants
//! and can never touch `(mu, sigma)`; the generator step sees the
//! discriminator as constants. Non-randomized generator parameters and the
//! mapping network keep training alongside `(mu, sigma)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::adam::{Adam, AdamConfig};
use crate::nets::{self, GeneratorSpec};
use crate::params::{BoundParams, ParamSet};
use crate::randparam::{realize_weights, EpsilonVector, RandomizedParamStore, StoreMode};
use crate::rng::{SeedHub, Stream};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Clone, Debug)]
pub enum TrainError {
    Config(String),
    /// A loss became non-finite at the given iteration.
    NonFinite { what: &'static str, iteration: usize },
    /// `log_sigma` exceeded the overflow guard on the named layer.
    SigmaOverflow { layer: String, iteration: usize, value: f64 },
    EmptyDataset,
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::Config(msg) => write!(f, "invalid training config: {}", msg),
            TrainError::NonFinite { what, iteration } => {
                write!(f, "{} loss became non-finite at iteration {}", what, iteration)
            }
            TrainError::SigmaOverflow { layer, iteration, value } => write!(
                f,
                "log_sigma overflow on {} at iteration {} (value {})",
                layer, iteration, value
            ),
            TrainError::EmptyDataset => write!(f, "dataset is empty"),
        }
    }
}

pub type TrainResult<V> = Result<V, TrainError>;

pub const SIGMA_OVERFLOW_GUARD: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub r1_gamma: f64,
    /// Apply the R1 penalty every this many iterations; 0 disables it.
    pub r1_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            iterations: 20_000,
            lr_g: 1e-3,
            lr_d: 1e-3,
            r1_gamma: 1.0,
            r1_every: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// In-memory dataset of `[3,H,W]` images in `[-1,1]`.
#[derive(Clone, Debug, Default)]
pub struct ImageSet<T = Real> {
    pub images: Vec<Tensor<T>>,
}

impl<T: Scalar> ImageSet<T> {
    pub fn new(images: Vec<Tensor<T>>) -> Self {
        ImageSet { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn sample_batch(&self, stream: &mut Stream, batch: usize) -> Tensor<T> {
        assert!(!self.images.is_empty(), "sample_batch: empty dataset");
        let refs: Vec<Tensor<T>> = (0..batch)
            .map(|_| self.images[stream.below(self.images.len())].clone())
            .collect();
        crate::metrics::stack_images(&refs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub r1: f64,
}

/// `mean(softplus(x))` over a `[B,1]` logit column, optionally negating the
/// logits first. This is the non-saturating GAN loss building block.
fn softplus_mean<T: Scalar>(tape: &mut Tape<T>, logits: Var, negate: bool) -> Var {
    let x = if negate { tape.neg(logits) } else { logits };
    let sp = tape.softplus(x);
    tape.mean_all(sp)
}

pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    tape.mean_all(sq)
}

/// One discriminator update on `(fresh z, fresh real batch)` with the lazy
/// R1 penalty. The generator enters as constants.
#[allow(clippy::too_many_arguments)]
fn discriminator_step<T: Scalar>(
    tape: &mut Tape<T>,
    gen_weights: &BoundParams<T>,
    disc: &mut ParamSet<T>,
    adam_d: &mut Adam<T>,
    spec: &GeneratorSpec,
    z: Tensor<T>,
    real: Tensor<T>,
    r1_scale: f64,
) -> (f64, f64) {
    let disc_b = BoundParams::trainable(tape, disc);
    let zv = tape.constant(z);
    let w = nets::map_latent(tape, zv, gen_weights);
    let fake = nets::synthesize(tape, &nets::Styles::Shared(w), gen_weights, spec, Default::default());
    let d_fake = nets::discriminate(tape, fake, &disc_b);
    let loss_fake = softplus_mean(tape, d_fake, false);

    let batch = real.shape()[0];
    let real_v = if r1_scale > 0.0 { tape.leaf(real) } else { tape.constant(real) };
    let d_real = nets::discriminate(tape, real_v, &disc_b);
    let loss_real = softplus_mean(tape, d_real, true);
    let mut loss = tape.add(loss_fake, loss_real);
    let adv_value = tape.value(loss).item().to_f64();

    let mut r1_value = 0.0;
    if r1_scale > 0.0 {
        let logit_sum = tape.sum_all(d_real);
        let grads_x = tape.backward(logit_sum);
        let gx = grads_x.var(real_v).expect("real batch gradient");
        let gsq = tape.square(gx);
        let total = tape.sum_all(gsq);
        let penalty = tape.mul_scalar(total, T::from_f64(r1_scale / batch as f64));
        r1_value = tape.value(penalty).item().to_f64();
        loss = tape.add(loss, penalty);
    }

    let grads = tape.backward(loss);
    adam_d.step(disc, |name| grads.tensor(tape, disc_b.var(name)));
    (adv_value, r1_value)
}

fn non_finite(v: f64) -> bool {
    !v.is_finite()
}

/// Pretrain the deterministic base GAN with the non-saturating loss and a
/// lazy R1 penalty. Weights are initialized from the config seed, so a
/// 0-iteration run returns the initialization unchanged.
pub fn pretrain_base<T: Scalar>(
    dataset: &ImageSet<T>,
    spec: &GeneratorSpec,
    cfg: &TrainConfig,
) -> TrainResult<(ParamSet<T>, ParamSet<T>, Vec<LossRow>)> {
    cfg.validate()?;
    spec.validate().map_err(TrainError::Config)?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let hub = SeedHub::new(cfg.seed);
    let mut gen: ParamSet<T> = nets::init_generator(spec, &mut hub.stream("init.generator"));
    let mut disc: ParamSet<T> = nets::init_discriminator(&mut hub.stream("init.discriminator"));
    let mut z_d = hub.stream("pretrain.z.d");
    let mut z_g = hub.stream("pretrain.z.g");
    let mut batches = hub.stream("pretrain.batches");
    let mut adam_g = Adam::new(AdamConfig::with_lr(cfg.lr_g));
    let mut adam_d = Adam::new(AdamConfig::with_lr(cfg.lr_d));
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut tape = Tape::new();

    for iter in 0..cfg.iterations {
        // discriminator update
        tape.clear();
        let r1_scale = r1_scale(cfg, iter);
        let (d_loss, r1) = {
            let gen_b = BoundParams::frozen(&mut tape, &gen);
            let z = z_d.normal_tensor(&[cfg.batch_size, spec.z_dim]);
            let real = dataset.sample_batch(&mut batches, cfg.batch_size);
            discriminator_step(&mut tape, &gen_b, &mut disc, &mut adam_d, spec, z, real, r1_scale)
        };
        if non_finite(d_loss) || non_finite(r1) {
            return Err(TrainError::NonFinite { what: "discriminator", iteration: iter });
        }

        // generator update
        tape.clear();
        let gen_b = BoundParams::trainable(&mut tape, &gen);
        let disc_b = BoundParams::frozen(&mut tape, &disc);
        let z = tape.constant(z_g.normal_tensor(&[cfg.batch_size, spec.z_dim]));
        let w = nets::map_latent(&mut tape, z, &gen_b);
        let fake =
            nets::synthesize(&mut tape, &nets::Styles::Shared(w), &gen_b, spec, Default::default());
        let d = nets::discriminate(&mut tape, fake, &disc_b);
        let loss_g = softplus_mean(&mut tape, d, true);
        let g_loss = tape.value(loss_g).item().to_f64();
        if non_finite(g_loss) {
            return Err(TrainError::NonFinite { what: "generator", iteration: iter });
        }
        let grads = tape.backward(loss_g);
        adam_g.step(&mut gen, |name| grads.tensor(&tape, gen_b.var(name)));

        log.push(LossRow { iteration: iter, d_loss, g_loss, r1 });
    }
    Ok((gen, disc, log))
}

fn r1_scale(cfg: &TrainConfig, iter: usize) -> f64 {
    if cfg.r1_every > 0 && cfg.r1_gamma > 0.0 && iter % cfg.r1_every == 0 {
        // lazy regularization: scale by the interval
        0.5 * cfg.r1_gamma * cfg.r1_every as f64
    } else {
        0.0
    }
}

/// Merge a store into one named parameter set for the optimizer.
fn store_to_params<T: Scalar>(store: &RandomizedParamStore<T>) -> ParamSet<T> {
    let mut p = store.frozen.clone();
    for e in &store.entries {
        p.insert(&format!("rand.{}.mu", e.name), e.mu.clone());
        p.insert(&format!("rand.{}.log_sigma", e.name), e.log_sigma.clone());
    }
    p
}

fn params_into_store<T: Scalar>(params: &ParamSet<T>, store: &mut RandomizedParamStore<T>) {
    let frozen_names: Vec<String> = store.frozen.names().map(|s| s.to_string()).collect();
    for name in frozen_names {
        store.frozen.set(&name, params.get(&name).clone());
    }
    for e in store.entries.iter_mut() {
        e.mu = params.get(&format!("rand.{}.mu", e.name)).clone();
        e.log_sigma = params.get(&format!("rand.{}.log_sigma", e.name)).clone();
    }
}

/// Randomized-weight training: `mu` starts at the pretrained weights
/// (bitwise), `sigma` starts at exactly 1. Each iteration draws a fresh
/// epsilon for the discriminator step and another for the generator step.
pub fn train_wrangan<T: Scalar>(
    theta_g0: &ParamSet<T>,
    theta_d0: Option<&ParamSet<T>>,
    dataset: &ImageSet<T>,
    spec: &GeneratorSpec,
    cfg: &TrainConfig,
) -> TrainResult<(RandomizedParamStore<T>, ParamSet<T>, Vec<LossRow>)> {
    cfg.validate()?;
    spec.validate().map_err(TrainError::Config)?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let hub = SeedHub::new(cfg.seed);
    let mut store = RandomizedParamStore::from_deterministic(theta_g0, &spec.randomized_names());
    let mut disc: ParamSet<T> = match theta_d0 {
        Some(d) => d.clone(),
        None => nets::init_discriminator(&mut hub.stream("init.discriminator")),
    };
    let mut z_d = hub.stream("wrangan.z.d");
    let mut z_g = hub.stream("wrangan.z.g");
    let mut eps_d = hub.stream("wrangan.eps.d");
    let mut eps_g = hub.stream("wrangan.eps.g");
    let mut batches = hub.stream("wrangan.batches");
    let mut adam_g = Adam::new(AdamConfig::with_lr(cfg.lr_g));
    let mut adam_d = Adam::new(AdamConfig::with_lr(cfg.lr_d));
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut tape = Tape::new();

    for iter in 0..cfg.iterations {
        // discriminator update on a fresh (z, real, epsilon)
        tape.clear();
        let r1_scale = r1_scale(cfg, iter);
        let (d_loss, r1) = {
            let eps = EpsilonVector::sample(&store, &mut eps_d);
            let bound = realize_weights(&mut tape, &store, &eps, StoreMode::Frozen);
            let z = z_d.normal_tensor(&[cfg.batch_size, spec.z_dim]);
            let real = dataset.sample_batch(&mut batches, cfg.batch_size);
            discriminator_step(
                &mut tape,
                &bound.weights,
                &mut disc,
                &mut adam_d,
                spec,
                z,
                real,
                r1_scale,
            )
        };
        if non_finite(d_loss) || non_finite(r1) {
            return Err(TrainError::NonFinite { what: "discriminator", iteration: iter });
        }

        // generator update: (mu, sigma) plus all non-randomized parameters
        tape.clear();
        let eps = EpsilonVector::sample(&store, &mut eps_g);
        let bound = realize_weights(&mut tape, &store, &eps, StoreMode::Train);
        let disc_b = BoundParams::frozen(&mut tape, &disc);
        let z = tape.constant(z_g.normal_tensor(&[cfg.batch_size, spec.z_dim]));
        let w = nets::map_latent(&mut tape, z, &bound.weights);
        let fake = nets::synthesize(
            &mut tape,
            &nets::Styles::Shared(w),
            &bound.weights,
            spec,
            Default::default(),
        );
        let d = nets::discriminate(&mut tape, fake, &disc_b);
        let loss_g = softplus_mean(&mut tape, d, true);
        let g_loss = tape.value(loss_g).item().to_f64();
        if non_finite(g_loss) {
            return Err(TrainError::NonFinite { what: "generator", iteration: iter });
        }
        let grads = tape.backward(loss_g);
        let mut merged = store_to_params(&store);
        adam_g.step(&mut merged, |name| {
            let var = match name.strip_prefix("rand.") {
                Some(rest) => {
                    let (layer, kind) = rest.rsplit_once('.').expect("rand param name");
                    let idx = store
                        .entries
                        .iter()
                        .position(|e| e.name == layer)
                        .expect("rand entry");
                    match kind {
                        "mu" => bound.mu[idx],
                        "log_sigma" => bound.log_sigma[idx],
                        _ => unreachable!("unexpected rand suffix {}", kind),
                    }
                }
                None => bound.frozen.var(name),
            };
            grads.tensor(&tape, var)
        });
        params_into_store(&merged, &mut store);

        if let Some((layer, value)) = store.max_log_sigma() {
            if value > SIGMA_OVERFLOW_GUARD {
                return Err(TrainError::SigmaOverflow { layer, iteration: iter, value });
            }
        }
        log.push(LossRow { iteration: iter, d_loss, g_loss, r1 });
    }
    Ok((store, disc, log))
}

/// Encoder training against the frozen generator realized at the mean
/// (`eps = 0`): minimizes `2*mse + perceptual + 1e-3*|E(x)|^2`.
pub fn train_encoder<T: Scalar>(
    store: &RandomizedParamStore<T>,
    dataset: &ImageSet<T>,
    spec: &GeneratorSpec,
    cfg: &TrainConfig,
) -> TrainResult<(ParamSet<T>, Vec<f64>)> {
    cfg.validate()?;
    spec.validate().map_err(TrainError::Config)?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let hub = SeedHub::new(cfg.seed);
    let gen = store.to_deterministic();
    let feat: ParamSet<T> = nets::init_perceptual(spec.feature_seed);
    let mut encoder: ParamSet<T> = nets::init_encoder(spec, &mut hub.stream("init.encoder"));
    let mut batches = hub.stream("encoder.batches");
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr_g));
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut tape = Tape::new();

    for iter in 0..cfg.iterations {
        tape.clear();
        let gen_b = BoundParams::frozen(&mut tape, &gen);
        let feat_b = BoundParams::frozen(&mut tape, &feat);
        let enc_b = BoundParams::trainable(&mut tape, &encoder);
        let x = tape.constant(dataset.sample_batch(&mut batches, cfg.batch_size));
        let z = nets::encode(&mut tape, x, &enc_b);
        let w = nets::map_latent(&mut tape, z, &gen_b);
        let recon = nets::synthesize(
            &mut tape,
            &nets::Styles::Shared(w),
            &gen_b,
            spec,
            Default::default(),
        );
        let l2 = mse_loss(&mut tape, recon, x);
        let l2x2 = tape.mul_scalar(l2, T::from_f64(2.0));
        let perc = nets::perceptual_distance(&mut tape, recon, x, &feat_b);
        let zsq = tape.square(z);
        let znorm = tape.sum_axis1(zsq);
        let zreg = tape.mean_all(znorm);
        let zreg = tape.mul_scalar(zreg, T::from_f64(1e-3));
        let partial = tape.add(l2x2, perc);
        let loss = tape.add(partial, zreg);
        let loss_value = tape.value(loss).item().to_f64();
        if non_finite(loss_value) {
            return Err(TrainError::NonFinite { what: "encoder", iteration: iter });
        }
        let grads = tape.backward(loss);
        adam.step(&mut encoder, |name| grads.tensor(&tape, enc_b.var(name)));
        log.push(loss_value);
    }
    Ok((encoder, log))
}

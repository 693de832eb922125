//! Desk-scale network definitions: mapping network, style-modulated
//! synthesis generator, discriminator, encoder and the frozen random-feature
//! perceptual network.
//!
//! Modulation is applied as input-channel scaling followed by per-output
//! demodulation scaling, which is algebraically identical to scaling the
//! convolution weights per sample but keeps the conv kernel shared across
//! the batch.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::{BoundParams, ParamSet};
use crate::rng::{SeedHub, Stream};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LRELU_SLOPE: f64 = 0.2;
const DEMOD_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub z_dim: usize,
    pub w_dim: usize,
    pub base_resolution: usize,
    pub final_resolution: usize,
    /// Output channels per resolution, coarse to fine.
    pub channels: Vec<usize>,
    pub convs_per_resolution: usize,
    /// How many of the last synthesis conv layers carry `(mu, sigma)` pairs.
    pub n_randomized: usize,
    /// Seed of the frozen perceptual feature network.
    pub feature_seed: u64,
}

impl GeneratorSpec {
    pub fn desk() -> Self {
        GeneratorSpec {
            z_dim: 32,
            w_dim: 32,
            base_resolution: 4,
            final_resolution: 32,
            channels: alloc::vec![64, 32, 32, 16],
            convs_per_resolution: 2,
            n_randomized: 6,
            feature_seed: 1405,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.base_resolution.is_power_of_two() || !self.final_resolution.is_power_of_two() {
            return Err(format!(
                "resolutions must be powers of two, got {} and {}",
                self.base_resolution, self.final_resolution
            ));
        }
        if self.final_resolution < self.base_resolution {
            return Err("final resolution below base resolution".into());
        }
        if self.channels.len() != self.num_resolutions() {
            return Err(format!(
                "expected {} channel entries for resolutions {}..{}, got {}",
                self.num_resolutions(),
                self.base_resolution,
                self.final_resolution,
                self.channels.len()
            ));
        }
        if self.n_randomized > self.synth_conv_count() {
            return Err(format!(
                "n_randomized {} exceeds synthesis conv count {}",
                self.n_randomized,
                self.synth_conv_count()
            ));
        }
        Ok(())
    }

    pub fn num_resolutions(&self) -> usize {
        let mut n = 0;
        let mut r = self.base_resolution;
        while r <= self.final_resolution {
            n += 1;
            r *= 2;
        }
        n
    }

    pub fn synth_conv_count(&self) -> usize {
        self.num_resolutions() * self.convs_per_resolution
    }

    pub fn conv_layers(&self) -> Vec<ConvLayer> {
        let mut layers = Vec::new();
        for j in 0..self.synth_conv_count() {
            let ri = j / self.convs_per_resolution;
            let first_of_block = j % self.convs_per_resolution == 0;
            let in_ch = if j == 0 {
                self.channels[0]
            } else if first_of_block {
                self.channels[ri - 1]
            } else {
                self.channels[ri]
            };
            layers.push(ConvLayer {
                index: j,
                in_channels: in_ch,
                out_channels: self.channels[ri],
                resolution: self.base_resolution << ri,
                upsample_before: first_of_block && ri > 0,
            });
        }
        layers
    }

    /// Weight and bias names of the last `n_randomized` synthesis conv
    /// layers, excluding toRGB and the modulation affines.
    pub fn randomized_names(&self) -> Vec<String> {
        self.randomized_names_for(self.n_randomized)
    }

    pub fn randomized_names_for(&self, n: usize) -> Vec<String> {
        let total = self.synth_conv_count();
        assert!(n <= total, "n_randomized {} exceeds conv count {}", n, total);
        let mut names = Vec::new();
        for j in total - n..total {
            names.push(format!("synth.conv{}.weight", j));
            names.push(format!("synth.conv{}.bias", j));
        }
        names
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub resolution: usize,
    pub upsample_before: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SynthOpts {
    pub modulation: bool,
    pub demodulation: bool,
}

impl Default for SynthOpts {
    fn default() -> Self {
        SynthOpts { modulation: true, demodulation: true }
    }
}

/// Style input: a single shared code or one code per synthesis layer
/// (toRGB shares the last layer's code).
pub enum Styles {
    Shared(Var),
    PerLayer(Vec<Var>),
}

impl Styles {
    fn for_layer(&self, j: usize) -> Var {
        match self {
            Styles::Shared(v) => *v,
            Styles::PerLayer(v) => v[j.min(v.len() - 1)],
        }
    }

    fn batch<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        let v = match self {
            Styles::Shared(v) => *v,
            Styles::PerLayer(v) => v[0],
        };
        tape.shape(v)[0]
    }
}

// ---- initialization ------------------------------------------------------

fn he_conv<T: Scalar>(stream: &mut Stream, out_ch: usize, in_ch: usize, k: usize) -> Tensor<T> {
    let std = libm::sqrt(2.0 / (in_ch * k * k) as f64);
    stream.normal_scaled(&[out_ch, in_ch, k, k], std)
}

fn he_dense<T: Scalar>(stream: &mut Stream, out_n: usize, in_n: usize) -> Tensor<T> {
    let std = libm::sqrt(2.0 / in_n as f64);
    stream.normal_scaled(&[out_n, in_n], std)
}

/// Mapping network, synthesis constant, modulated convs, affines and toRGB.
pub fn init_generator<T: Scalar>(spec: &GeneratorSpec, stream: &mut Stream) -> ParamSet<T> {
    let mut p = ParamSet::new();
    p.insert("map.fc0.weight", he_dense(stream, spec.w_dim, spec.z_dim));
    p.insert("map.fc0.bias", Tensor::zeros(&[spec.w_dim]));
    p.insert("map.fc1.weight", he_dense(stream, spec.w_dim, spec.w_dim));
    p.insert("map.fc1.bias", Tensor::zeros(&[spec.w_dim]));
    p.insert(
        "synth.const",
        stream.normal_tensor(&[spec.channels[0], spec.base_resolution, spec.base_resolution]),
    );
    let affine_std = 0.2 / libm::sqrt(spec.w_dim as f64);
    for layer in spec.conv_layers() {
        let j = layer.index;
        p.insert(
            &format!("synth.conv{}.weight", j),
            he_conv(stream, layer.out_channels, layer.in_channels, 3),
        );
        p.insert(&format!("synth.conv{}.bias", j), Tensor::zeros(&[layer.out_channels]));
        p.insert(
            &format!("synth.conv{}.affine.weight", j),
            stream.normal_scaled(&[layer.in_channels, spec.w_dim], affine_std),
        );
        p.insert(
            &format!("synth.conv{}.affine.bias", j),
            Tensor::full(&[layer.in_channels], T::ONE),
        );
    }
    let last_ch = *spec.channels.last().unwrap();
    let torgb_std = libm::sqrt(1.0 / last_ch as f64);
    p.insert("synth.torgb.weight", stream.normal_scaled(&[3, last_ch, 1, 1], torgb_std));
    p.insert("synth.torgb.bias", Tensor::zeros(&[3]));
    p.insert(
        "synth.torgb.affine.weight",
        stream.normal_scaled(&[last_ch, spec.w_dim], affine_std),
    );
    p.insert("synth.torgb.affine.bias", Tensor::full(&[last_ch], T::ONE));
    p
}

pub const DISC_CHANNELS: [usize; 4] = [16, 32, 64, 64];

fn init_trunk<T: Scalar>(prefix: &str, fc_out: usize, stream: &mut Stream) -> ParamSet<T> {
    let mut p = ParamSet::new();
    let mut in_ch = 3;
    for (i, &out_ch) in DISC_CHANNELS.iter().enumerate() {
        p.insert(&format!("{}.conv{}.weight", prefix, i), he_conv(stream, out_ch, in_ch, 3));
        p.insert(&format!("{}.conv{}.bias", prefix, i), Tensor::zeros(&[out_ch]));
        in_ch = out_ch;
    }
    // 32 -> 16 -> 8 -> 4 -> 2 spatial, so the flattened width is 64*2*2.
    p.insert(&format!("{}.fc.weight", prefix), he_dense(stream, fc_out, 64 * 2 * 2));
    p.insert(&format!("{}.fc.bias", prefix), Tensor::zeros(&[fc_out]));
    p
}

pub fn init_discriminator<T: Scalar>(stream: &mut Stream) -> ParamSet<T> {
    init_trunk("disc", 1, stream)
}

pub fn init_encoder<T: Scalar>(spec: &GeneratorSpec, stream: &mut Stream) -> ParamSet<T> {
    init_trunk("enc", spec.z_dim, stream)
}

pub const FEAT_CHANNELS: [usize; 3] = [16, 32, 64];

/// Frozen random-feature network; weights are a pure function of the seed.
pub fn init_perceptual<T: Scalar>(feature_seed: u64) -> ParamSet<T> {
    let hub = SeedHub::new(feature_seed);
    let mut stream = hub.stream("perceptual-net");
    let mut p = ParamSet::new();
    let mut in_ch = 3;
    for (i, &out_ch) in FEAT_CHANNELS.iter().enumerate() {
        p.insert(&format!("feat.conv{}.weight", i), he_conv(&mut stream, out_ch, in_ch, 3));
        p.insert(&format!("feat.conv{}.bias", i), Tensor::zeros(&[out_ch]));
        in_ch = out_ch;
    }
    p
}

// ---- forward passes -------------------------------------------------------

/// `y = x W^T + b` for `x: [B,N]`, `w: [M,N]`, `b: [M]`.
fn dense<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let wt = tape.transpose(w);
    let xw = tape.matmul(x, wt);
    let batch = tape.shape(x)[0];
    let bb = tape.repeat_axis0(b, batch);
    tape.add(xw, bb)
}

fn bias_channels<T: Scalar>(tape: &mut Tape<T>, x: Var, b: Var) -> Var {
    let (batch, c, h, w) = {
        let s = tape.shape(x);
        (s[0], s[1], s[2], s[3])
    };
    debug_assert_eq!(tape.shape(b), &[c]);
    let bb = tape.repeat_axis0(b, batch);
    let bs = tape.expand_spatial(bb, h, w);
    tape.add(x, bs)
}

/// Mapping network `f`: two leaky-ReLU dense layers, `z` to `w`.
pub fn map_latent<T: Scalar>(tape: &mut Tape<T>, z: Var, params: &BoundParams<T>) -> Var {
    let slope = T::from_f64(LRELU_SLOPE);
    let h = dense(tape, z, params.var("map.fc0.weight"), params.var("map.fc0.bias"));
    let h = tape.leaky_relu(h, slope);
    let h = dense(tape, h, params.var("map.fc1.weight"), params.var("map.fc1.bias"));
    tape.leaky_relu(h, slope)
}

/// Style-based synthesis from the learned constant to a `[B,3,R,R]` image.
pub fn synthesize<T: Scalar>(
    tape: &mut Tape<T>,
    styles: &Styles,
    weights: &BoundParams<T>,
    spec: &GeneratorSpec,
    opts: SynthOpts,
) -> Var {
    let slope = T::from_f64(LRELU_SLOPE);
    let batch = styles.batch(tape);
    let c0 = spec.channels[0];
    let base = spec.base_resolution;
    let cst = weights.var("synth.const");
    let flat = tape.reshape(cst, &[c0 * base * base]);
    let rep = tape.repeat_axis0(flat, batch);
    let mut x = tape.reshape(rep, &[batch, c0, base, base]);
    for layer in spec.conv_layers() {
        if layer.upsample_before {
            x = tape.upsample2x(x);
        }
        let j = layer.index;
        let w_var = weights.var(&format!("synth.conv{}.weight", j));
        let b_var = weights.var(&format!("synth.conv{}.bias", j));
        let aw = weights.var(&format!("synth.conv{}.affine.weight", j));
        let ab = weights.var(&format!("synth.conv{}.affine.bias", j));
        let style = styles.for_layer(j);
        let s = dense(tape, style, aw, ab);
        let (h, wd) = {
            let sh = tape.shape(x);
            (sh[2], sh[3])
        };
        let xin = if opts.modulation {
            let se = tape.expand_spatial(s, h, wd);
            tape.mul(x, se)
        } else {
            x
        };
        let mut y = tape.conv2d(xin, w_var, 1, 1);
        if opts.demodulation {
            // per-output scale 1/sqrt(sum_ci s_ci^2 * sum_k w^2 + eps)
            let wsq = tape.square(w_var);
            let flat = tape.reshape(wsq, &[layer.out_channels * layer.in_channels, 9]);
            let q = tape.sum_axis1(flat);
            let q = tape.reshape(q, &[layer.out_channels, layer.in_channels]);
            let s2 = tape.square(s);
            let qt = tape.transpose(q);
            let dpre = tape.matmul(s2, qt);
            let d = tape.rsqrt(dpre, T::from_f64(DEMOD_EPS));
            let de = tape.expand_spatial(d, h, wd);
            y = tape.mul(y, de);
        }
        y = bias_channels(tape, y, b_var);
        x = tape.leaky_relu(y, slope);
    }
    // toRGB: modulated 1x1 conv, no demodulation, no activation
    let style = styles.for_layer(spec.synth_conv_count() - 1);
    let aw = weights.var("synth.torgb.affine.weight");
    let ab = weights.var("synth.torgb.affine.bias");
    let s = dense(tape, style, aw, ab);
    let (h, wd) = {
        let sh = tape.shape(x);
        (sh[2], sh[3])
    };
    let xin = if opts.modulation {
        let se = tape.expand_spatial(s, h, wd);
        tape.mul(x, se)
    } else {
        x
    };
    let y = tape.conv2d(xin, weights.var("synth.torgb.weight"), 1, 0);
    bias_channels(tape, y, weights.var("synth.torgb.bias"))
}

fn trunk<T: Scalar>(tape: &mut Tape<T>, x: Var, prefix: &str, params: &BoundParams<T>) -> Var {
    let slope = T::from_f64(LRELU_SLOPE);
    let batch = tape.shape(x)[0];
    assert!(
        tape.shape(x) == [batch, 3, 32, 32],
        "{}: expected [B,3,32,32] input, got {:?}",
        prefix,
        tape.shape(x)
    );
    let mut h = x;
    for i in 0..DISC_CHANNELS.len() {
        let w = params.var(&format!("{}.conv{}.weight", prefix, i));
        let b = params.var(&format!("{}.conv{}.bias", prefix, i));
        h = tape.conv2d(h, w, 2, 1);
        h = bias_channels(tape, h, b);
        h = tape.leaky_relu(h, slope);
    }
    let flat = tape.reshape(h, &[batch, 64 * 2 * 2]);
    dense(tape, flat, params.var(&format!("{}.fc.weight", prefix)), params.var(&format!("{}.fc.bias", prefix)))
}

/// Discriminator logit, `[B,3,32,32] -> [B,1]`.
pub fn discriminate<T: Scalar>(tape: &mut Tape<T>, x: Var, params: &BoundParams<T>) -> Var {
    trunk(tape, x, "disc", params)
}

/// Encoder to z-space, `[B,3,32,32] -> [B,z_dim]`. Inversion initializes the
/// latent as `w = f(E(x))`.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, x: Var, params: &BoundParams<T>) -> Var {
    trunk(tape, x, "enc", params)
}

/// The three frozen feature maps, each unit-normalized along channels at
/// every spatial location.
pub fn perceptual_features<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    params: &BoundParams<T>,
) -> Vec<Var> {
    let slope = T::from_f64(LRELU_SLOPE);
    let mut h = x;
    let mut maps = Vec::new();
    for i in 0..FEAT_CHANNELS.len() {
        let w = params.var(&format!("feat.conv{}.weight", i));
        let b = params.var(&format!("feat.conv{}.bias", i));
        h = tape.conv2d(h, w, 2, 1);
        h = bias_channels(tape, h, b);
        h = tape.leaky_relu(h, slope);
        let sq = tape.square(h);
        let ssum = tape.sum_c(sq);
        let inv = tape.rsqrt(ssum, T::from_f64(1e-8));
        let invc = tape.repeat_c(inv, FEAT_CHANNELS[i]);
        maps.push(tape.mul(h, invc));
    }
    maps
}

/// Mean squared distance between normalized feature maps, summed over the
/// three stages. Zero for identical inputs, symmetric in its arguments.
pub fn perceptual_distance<T: Scalar>(
    tape: &mut Tape<T>,
    a: Var,
    b: Var,
    params: &BoundParams<T>,
) -> Var {
    let fa = perceptual_features(tape, a, params);
    let fb = perceptual_features(tape, b, params);
    let mut total: Option<Var> = None;
    for (ma, mb) in fa.into_iter().zip(fb) {
        let d = tape.sub(ma, mb);
        let sq = tape.square(d);
        let m = tape.mean_all(sq);
        total = Some(match total {
            None => m,
            Some(acc) => tape.add(acc, m),
        });
    }
    total.expect("perceptual net has at least one stage")
}

/// Raw pooled final-stage features (64 values per image), the feature space
/// used by the distribution metrics.
pub fn pooled_features<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    params: &BoundParams<T>,
) -> Var {
    let slope = T::from_f64(LRELU_SLOPE);
    let mut h = x;
    for i in 0..FEAT_CHANNELS.len() {
        let w = params.var(&format!("feat.conv{}.weight", i));
        let b = params.var(&format!("feat.conv{}.bias", i));
        h = tape.conv2d(h, w, 2, 1);
        h = bias_channels(tape, h, b);
        h = tape.leaky_relu(h, slope);
    }
    let (hh, ww) = {
        let sh = tape.shape(h);
        (sh[2], sh[3])
    };
    let s = tape.sum_hw(h);
    tape.mul_scalar(s, T::ONE / T::from_f64((hh * ww) as f64))
}

// ---- plain (no-gradient) wrappers ----------------------------------------

pub fn map_latent_plain<T: Scalar>(params: &ParamSet<T>, z: &Tensor<T>) -> Tensor<T> {
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, params);
    let zv = tape.constant(z.clone());
    let w = map_latent(&mut tape, zv, &bound);
    tape.value(w).clone()
}

pub fn synthesize_plain<T: Scalar>(
    params: &ParamSet<T>,
    spec: &GeneratorSpec,
    w: &Tensor<T>,
) -> Tensor<T> {
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, params);
    let wv = tape.constant(w.clone());
    let img = synthesize(&mut tape, &Styles::Shared(wv), &bound, spec, SynthOpts::default());
    tape.value(img).clone()
}

pub fn encode_plain<T: Scalar>(params: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, params);
    let xv = tape.constant(x.clone());
    let z = encode(&mut tape, xv, &bound);
    tape.value(z).clone()
}

pub fn discriminate_plain<T: Scalar>(params: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, params);
    let xv = tape.constant(x.clone());
    let d = discriminate(&mut tape, xv, &bound);
    tape.value(d).clone()
}

/// `w = f(E(x))` for a batch of images.
pub fn encoder_init_w<T: Scalar>(
    gen_params: &ParamSet<T>,
    enc_params: &ParamSet<T>,
    x: &Tensor<T>,
) -> Tensor<T> {
    let z = encode_plain(enc_params, x);
    map_latent_plain(gen_params, &z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedHub;

    type R = f32;

    fn spec() -> GeneratorSpec {
        GeneratorSpec::desk()
    }

    fn gen_params() -> ParamSet<R> {
        let hub = SeedHub::new(31);
        init_generator(&spec(), &mut hub.stream("gen"))
    }

    #[test]
    fn desk_spec_is_valid_with_eight_convs() {
        let s = spec();
        s.validate().unwrap();
        assert_eq!(s.synth_conv_count(), 8);
        assert_eq!(s.conv_layers().len(), 8);
        assert_eq!(s.randomized_names_for(6).len(), 12);
        // last layer works at the final resolution
        assert_eq!(s.conv_layers()[7].resolution, 32);
    }

    #[test]
    fn synthesize_output_shape_and_determinism() {
        let params = gen_params();
        let s = spec();
        let hub = SeedHub::new(77);
        let z: Tensor<R> = hub.stream("z").normal_tensor(&[2, 32]);
        let w = map_latent_plain(&params, &z);
        let img1 = synthesize_plain(&params, &s, &w);
        let img2 = synthesize_plain(&params, &s, &w);
        assert_eq!(img1.shape(), &[2, 3, 32, 32]);
        assert!(img1.bitwise_eq(&img2));
    }

    #[test]
    fn mapping_is_deterministic_and_zero_for_zero_weights() {
        let params = gen_params();
        let hub = SeedHub::new(78);
        let z: Tensor<R> = hub.stream("z").normal_tensor(&[3, 32]);
        let w1 = map_latent_plain(&params, &z);
        let w2 = map_latent_plain(&params, &z);
        assert!(w1.bitwise_eq(&w2));

        let mut zeroed = params.clone();
        for name in ["map.fc0.weight", "map.fc0.bias", "map.fc1.weight", "map.fc1.bias"] {
            let shape = zeroed.get(name).shape().to_vec();
            zeroed.set(name, Tensor::zeros(&shape));
        }
        let w0 = map_latent_plain(&zeroed, &z);
        assert!(w0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn modulation_identity_reduces_to_plain_convs() {
        // affines forced to produce 1 and demodulation off: the synthesis is
        // a plain conv pipeline on the same weights
        let s = spec();
        let mut params = gen_params();
        for j in 0..s.synth_conv_count() {
            let wname = format!("synth.conv{}.affine.weight", j);
            let shape = params.get(&wname).shape().to_vec();
            params.set(&wname, Tensor::zeros(&shape));
        }
        let shape = params.get("synth.torgb.affine.weight").shape().to_vec();
        params.set("synth.torgb.affine.weight", Tensor::zeros(&shape));
        // affine bias is already 1 at init
        let hub = SeedHub::new(5);
        let w: Tensor<R> = hub.stream("w").normal_tensor(&[1, 32]);

        let styled = {
            let mut tape = Tape::new();
            let bound = BoundParams::frozen(&mut tape, &params);
            let wv = tape.constant(w.clone());
            let img = synthesize(
                &mut tape,
                &Styles::Shared(wv),
                &bound,
                &s,
                SynthOpts { modulation: true, demodulation: false },
            );
            tape.value(img).clone()
        };
        let plain = {
            let mut tape = Tape::new();
            let bound = BoundParams::frozen(&mut tape, &params);
            let wv = tape.constant(w.clone());
            let img = synthesize(
                &mut tape,
                &Styles::Shared(wv),
                &bound,
                &s,
                SynthOpts { modulation: false, demodulation: false },
            );
            tape.value(img).clone()
        };
        for (a, b) in styled.data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
        }
    }

    #[test]
    fn discriminator_zero_weights_gives_zero_logit() {
        let hub = SeedHub::new(9);
        let mut d: ParamSet<R> = init_discriminator(&mut hub.stream("d"));
        let names: alloc::vec::Vec<String> =
            d.names().map(|s| s.into()).collect();
        for name in names {
            let shape = d.get(&name).shape().to_vec();
            d.set(&name, Tensor::zeros(&shape));
        }
        let x = hub.stream("x").normal_tensor(&[2, 3, 32, 32]);
        let out = discriminate_plain(&d, &x);
        assert_eq!(out.shape(), &[2, 1]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_zero_final_layer_is_constant_bias() {
        let hub = SeedHub::new(10);
        let s = spec();
        let mut e: ParamSet<R> = init_encoder(&s, &mut hub.stream("e"));
        let shape = e.get("enc.fc.weight").shape().to_vec();
        e.set("enc.fc.weight", Tensor::zeros(&shape));
        e.set("enc.fc.bias", Tensor::from_fn(&[32], |i| i as f32 * 0.1));
        let x1 = hub.stream("x1").normal_tensor(&[1, 3, 32, 32]);
        let x2 = hub.stream("x2").normal_tensor(&[1, 3, 32, 32]);
        let o1 = encode_plain(&e, &x1);
        let o2 = encode_plain(&e, &x2);
        assert!(o1.bitwise_eq(&o2));
        assert!((o1.data()[5] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn perceptual_distance_zero_symmetric_and_noise_monotone() {
        let s = spec();
        let feat: ParamSet<R> = init_perceptual(s.feature_seed);
        let hub = SeedHub::new(11);
        let a = hub.stream("a").normal_scaled(&[1, 3, 32, 32], 0.5);
        let dist = |x: &Tensor<R>, y: &Tensor<R>| -> f64 {
            let mut tape = Tape::new();
            let bound = BoundParams::frozen(&mut tape, &feat);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let d = perceptual_distance(&mut tape, xv, yv, &bound);
            tape.value(d).item() as f64
        };
        assert!(dist(&a, &a).abs() < 1e-12);

        let b = hub.stream("b").normal_scaled(&[1, 3, 32, 32], 0.5);
        assert!((dist(&a, &b) - dist(&b, &a)).abs() < 1e-9);

        // distance grows with noise std over {0.01, 0.05, 0.1}, averaged
        let mut prev = 0.0;
        for &std in &[0.01f64, 0.05, 0.1] {
            let mut mean = 0.0;
            for i in 0..20 {
                let mut noise_stream = hub.stream(&format!("noise{}-{}", std, i));
                let noisy = Tensor::from_fn(a.shape(), |k| {
                    a.data()[k] + (noise_stream.normal() * std) as f32
                });
                mean += dist(&a, &noisy);
            }
            mean /= 20.0;
            assert!(mean > prev, "distance not monotone: {} !> {}", mean, prev);
            prev = mean;
        }
    }

    #[test]
    fn perceptual_weights_fixed_by_seed() {
        let f1: ParamSet<R> = init_perceptual(123);
        let f2: ParamSet<R> = init_perceptual(123);
        assert_eq!(f1.fingerprint(), f2.fingerprint());
        let f3: ParamSet<R> = init_perceptual(124);
        assert_ne!(f1.fingerprint(), f3.fingerprint());
    }
}

//! Randomized gradient checks: every differentiable operation is compared
//! against central finite differences, in f32 (perturbation 1e-3, relative
//! tolerance 1e-3) and in f64 (perturbation 1e-6, tolerance 1e-6), over 20
//! seeds per op. Composite-network losses and the double-backprop path get
//! the same treatment.

use wrangan_core::params::BoundParams;
use wrangan_core::rng::{SeedHub, Stream};
use wrangan_core::scalar::Scalar;
use wrangan_core::tape::{Tape, Var};
use wrangan_core::tensor::Tensor;

const SEEDS: u64 = 20;

struct InputSpec {
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
}

fn spec(shape: &[usize]) -> InputSpec {
    InputSpec { shape: shape.to_vec(), lo: -1.5, hi: 1.5 }
}

fn positive(shape: &[usize]) -> InputSpec {
    InputSpec { shape: shape.to_vec(), lo: 0.4, hi: 2.0 }
}

fn sample_inputs<T: Scalar>(specs: &[InputSpec], stream: &mut Stream) -> Vec<Tensor<T>> {
    specs
        .iter()
        .map(|s| {
            Tensor::from_fn(&s.shape, |_| T::from_f64(stream.uniform_range(s.lo, s.hi)))
        })
        .collect()
}

/// Scalar loss: the op output contracted with a fixed probe, summed in f64.
fn probe_loss<T: Scalar>(out: &Tensor<T>, probe: &[f64]) -> f64 {
    out.data()
        .iter()
        .zip(probe)
        .map(|(v, p)| v.to_f64() * p)
        .sum()
}

fn check_op<T: Scalar>(
    name: &str,
    specs: &[InputSpec],
    build: impl Fn(&mut Tape<T>, &[Var]) -> Var,
    h: f64,
    tol: f64,
) {
    for seed in 0..SEEDS {
        let hub = SeedHub::new(1000 + seed);
        let mut stream = hub.stream(name);
        let inputs = sample_inputs::<T>(specs, &mut stream);

        // probe for the scalar contraction
        let out_shape = {
            let mut tape = Tape::<T>::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            tape.shape(out).to_vec()
        };
        let out_numel: usize = out_shape.iter().product();
        let probe: Vec<f64> = (0..out_numel).map(|_| stream.uniform_range(-1.0, 1.0)).collect();

        // analytic gradients of sum(out * probe)
        let mut tape = Tape::<T>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let probe_t = Tensor::from_fn(&out_shape, |i| T::from_f64(probe[i]));
        let pv = tape.constant(probe_t);
        let weighted = tape.mul(out, pv);
        let loss = tape.sum_all(weighted);
        let grads = tape.backward(loss);
        let analytic: Vec<Tensor<T>> =
            vars.iter().map(|&v| grads.tensor_or_zeros(&tape, v)).collect();

        // finite differences on a few random positions of every input
        let eval = |perturbed: &[Tensor<T>]| -> f64 {
            let mut tape = Tape::<T>::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            probe_loss(tape.value(out), &probe)
        };
        for (ti, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let picks = n.min(4);
            for _ in 0..picks {
                let idx = stream.below(n);
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[ti].data_mut()[idx] = T::from_f64(input.data()[idx].to_f64() + h);
                minus[ti].data_mut()[idx] = T::from_f64(input.data()[idx].to_f64() - h);
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = analytic[ti].data()[idx].to_f64();
                let denom = an.abs().max(fd.abs()).max(1.0);
                let rel = (an - fd).abs() / denom;
                assert!(
                    rel < tol,
                    "{}: seed {} input {} idx {}: analytic {} vs fd {} (rel {})",
                    name,
                    seed,
                    ti,
                    idx,
                    an,
                    fd,
                    rel
                );
            }
        }
    }
}

fn check_both(
    name: &str,
    specs: &[InputSpec],
    build32: impl Fn(&mut Tape<f32>, &[Var]) -> Var,
    build64: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    check_op::<f64>(name, specs, build64, 1e-6, 1e-6);
    check_op::<f32>(name, specs, build32, 1e-3, 1e-3);
}

macro_rules! op_case {
    ($name:ident, $specs:expr, |$tape:ident, $v:ident| $body:expr) => {
        #[test]
        fn $name() {
            check_both(
                stringify!($name),
                &$specs,
                |$tape: &mut Tape<f32>, $v: &[Var]| $body,
                |$tape: &mut Tape<f64>, $v: &[Var]| $body,
            );
        }
    };
}

op_case!(grad_add, [spec(&[3, 4]), spec(&[3, 4])], |t, v| t.add(v[0], v[1]));
op_case!(grad_sub, [spec(&[3, 4]), spec(&[3, 4])], |t, v| t.sub(v[0], v[1]));
op_case!(grad_mul, [spec(&[3, 4]), spec(&[3, 4])], |t, v| t.mul(v[0], v[1]));
op_case!(grad_div, [spec(&[3, 4]), positive(&[3, 4])], |t, v| t.div(v[0], v[1]));
op_case!(grad_neg, [spec(&[5])], |t, v| t.neg(v[0]));
op_case!(grad_add_scalar, [spec(&[5])], |t, v| t.add_scalar(v[0], Scalar::c(0.7)));
op_case!(grad_mul_scalar, [spec(&[5])], |t, v| t.mul_scalar(v[0], Scalar::c(-1.3)));
op_case!(grad_exp, [spec(&[4, 2])], |t, v| t.exp(v[0]));
op_case!(grad_sqrt, [positive(&[6])], |t, v| t.sqrt(v[0]));
op_case!(grad_rsqrt, [positive(&[6])], |t, v| t.rsqrt(v[0], Scalar::c(1e-8)));
op_case!(grad_square, [spec(&[6])], |t, v| t.square(v[0]));
op_case!(grad_sigmoid, [spec(&[6])], |t, v| t.sigmoid(v[0]));
op_case!(grad_softplus, [spec(&[6])], |t, v| t.softplus(v[0]));
op_case!(grad_leaky_relu, [spec(&[16])], |t, v| t.leaky_relu(v[0], Scalar::c(0.2)));
op_case!(grad_matmul, [spec(&[3, 4]), spec(&[4, 5])], |t, v| t.matmul(v[0], v[1]));
op_case!(grad_transpose, [spec(&[3, 4])], |t, v| t.transpose(v[0]));
op_case!(grad_conv3x3, [spec(&[2, 3, 5, 5]), spec(&[4, 3, 3, 3])], |t, v| t
    .conv2d(v[0], v[1], 1, 1));
op_case!(grad_conv1x1, [spec(&[2, 3, 4, 4]), spec(&[2, 3, 1, 1])], |t, v| t
    .conv2d(v[0], v[1], 1, 0));
op_case!(grad_conv_stride2, [spec(&[2, 3, 6, 6]), spec(&[4, 3, 3, 3])], |t, v| t
    .conv2d(v[0], v[1], 2, 1));
op_case!(grad_conv_dx_op, [spec(&[1, 3, 4, 4]), spec(&[3, 2, 3, 3])], |t, v| t
    .conv2d_dx(v[0], v[1], 1, 1, 4, 4));
op_case!(grad_conv_dx_stride2, [spec(&[1, 3, 3, 3]), spec(&[3, 2, 3, 3])], |t, v| t
    .conv2d_dx(v[0], v[1], 2, 1, 6, 6));
op_case!(grad_conv_dw_op, [spec(&[1, 2, 4, 4]), spec(&[1, 3, 4, 4])], |t, v| t
    .conv2d_dw(v[0], v[1], 1, 1, 3, 3));
op_case!(grad_upsample2x, [spec(&[1, 2, 3, 3])], |t, v| t.upsample2x(v[0]));
op_case!(grad_downsum2x, [spec(&[1, 2, 4, 4])], |t, v| t.downsum2x(v[0]));
op_case!(grad_blur, [spec(&[1, 2, 6, 6])], |t, v| {
    let k = [Scalar::c(0.25), Scalar::c(0.5), Scalar::c(0.25)];
    t.blur(v[0], &k)
});
op_case!(grad_sum_all, [spec(&[3, 4])], |t, v| t.sum_all(v[0]));
op_case!(grad_mean_all, [spec(&[3, 4])], |t, v| t.mean_all(v[0]));
op_case!(grad_expand, [spec(&[1])], |t, v| t.expand(v[0], &[3, 4]));
op_case!(grad_sum_axis0, [spec(&[3, 4])], |t, v| t.sum_axis0(v[0]));
op_case!(grad_repeat_axis0, [spec(&[4])], |t, v| t.repeat_axis0(v[0], 3));
op_case!(grad_sum_axis1, [spec(&[3, 4])], |t, v| t.sum_axis1(v[0]));
op_case!(grad_repeat_axis1, [spec(&[3])], |t, v| t.repeat_axis1(v[0], 4));
op_case!(grad_sum_hw, [spec(&[2, 3, 4, 4])], |t, v| t.sum_hw(v[0]));
op_case!(grad_expand_spatial, [spec(&[2, 3])], |t, v| t.expand_spatial(v[0], 4, 4));
op_case!(grad_sum_c, [spec(&[2, 3, 4, 4])], |t, v| t.sum_c(v[0]));
op_case!(grad_repeat_c, [spec(&[2, 1, 4, 4])], |t, v| t.repeat_c(v[0], 3));
op_case!(grad_concat, [spec(&[2, 3]), spec(&[2, 2])], |t, v| t.concat(v, 1));
op_case!(grad_narrow, [spec(&[3, 5])], |t, v| t.narrow(v[0], 1, 1, 3));
op_case!(grad_pad_axis, [spec(&[3, 2])], |t, v| t.pad_axis(v[0], 1, 2, 1));
op_case!(grad_reshape, [spec(&[3, 4])], |t, v| t.reshape(v[0], &[2, 6]));

// A composite loss spanning matmul, conv, activations and reductions,
// checked against finite differences like the primitive cases.
op_case!(
    grad_composite_net,
    [spec(&[1, 2, 6, 6]), spec(&[3, 2, 3, 3]), spec(&[3]), spec(&[1, 3 * 9])],
    |t, v| {
        let mut h = t.conv2d(v[0], v[1], 2, 1);
        let b = t.repeat_axis0(v[2], 1);
        let bs = t.expand_spatial(b, 3, 3);
        h = t.add(h, bs);
        h = t.leaky_relu(h, Scalar::c(0.2));
        let flat = t.reshape(h, &[1, 3 * 9]);
        let prod = t.mul(flat, v[3]);
        let s = t.sum_axis1(prod);
        t.softplus(s)
    }
);

/// Double backprop: the gradient-norm penalty `sum(dD/dx ^ 2)` must itself
/// differentiate correctly with respect to the conv weights.
fn penalty_value<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let mut tape = Tape::<T>::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(b.clone());
    let p = penalty_graph(&mut tape, xv, wv, bv);
    tape.value(p).item().to_f64()
}

fn penalty_graph<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let mut h = tape.conv2d(x, w, 2, 1);
    let batch = tape.shape(h)[0];
    let (hh, ww) = (tape.shape(h)[2], tape.shape(h)[3]);
    let bb = tape.repeat_axis0(b, batch);
    let bs = tape.expand_spatial(bb, hh, ww);
    h = tape.add(h, bs);
    h = tape.softplus(h);
    let out = tape.sum_all(h);
    let grads = tape.backward(out);
    let gx = grads.var(x).expect("x gradient");
    let gsq = tape.square(gx);
    tape.sum_all(gsq)
}

fn double_backprop_case<T: Scalar>(h: f64, tol: f64) {
    for seed in 0..5u64 {
        let hub = SeedHub::new(7000 + seed);
        let mut stream = hub.stream("r1-style");
        let x: Tensor<T> = Tensor::from_fn(&[1, 2, 4, 4], |_| {
            T::from_f64(stream.uniform_range(-1.0, 1.0))
        });
        let w: Tensor<T> = Tensor::from_fn(&[2, 2, 3, 3], |_| {
            T::from_f64(stream.uniform_range(-0.8, 0.8))
        });
        let b: Tensor<T> = Tensor::from_fn(&[2], |_| T::from_f64(stream.uniform_range(-0.3, 0.3)));

        let mut tape = Tape::<T>::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let p = penalty_graph(&mut tape, xv, wv, bv);
        let grads = tape.backward(p);
        let gw = grads.tensor_or_zeros(&tape, wv);
        let gb = grads.tensor_or_zeros(&tape, bv);

        for _ in 0..6 {
            let idx = stream.below(w.numel());
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.data_mut()[idx] = T::from_f64(w.data()[idx].to_f64() + h);
            wm.data_mut()[idx] = T::from_f64(w.data()[idx].to_f64() - h);
            let fd = (penalty_value(&x, &wp, &b) - penalty_value(&x, &wm, &b)) / (2.0 * h);
            let an = gw.data()[idx].to_f64();
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            assert!(rel < tol, "seed {} w[{}]: {} vs {} (rel {})", seed, idx, an, fd, rel);
        }
        for idx in 0..b.numel() {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp.data_mut()[idx] = T::from_f64(b.data()[idx].to_f64() + h);
            bm.data_mut()[idx] = T::from_f64(b.data()[idx].to_f64() - h);
            let fd = (penalty_value(&x, &w, &bp) - penalty_value(&x, &w, &bm)) / (2.0 * h);
            let an = gb.data()[idx].to_f64();
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
            assert!(rel < tol, "seed {} b[{}]: {} vs {} (rel {})", seed, idx, an, fd, rel);
        }
    }
}

#[test]
fn grad_double_backprop_penalty() {
    double_backprop_case::<f32>(1e-3, 1e-3);
    double_backprop_case::<f64>(1e-6, 1e-6);
}

/// A full generator/discriminator forward with the adversarial loss,
/// finite-difference checked on a handful of parameters (f64 mode).
#[test]
fn grad_full_network_loss_f64() {
    use wrangan_core::nets;
    use wrangan_core::params::ParamSet;

    let spec = nets::GeneratorSpec {
        z_dim: 8,
        w_dim: 8,
        base_resolution: 4,
        final_resolution: 8,
        channels: vec![6, 4],
        convs_per_resolution: 2,
        n_randomized: 2,
        feature_seed: 3,
    };
    spec.validate().unwrap();
    let hub = SeedHub::new(99);
    let gen: ParamSet<f64> = nets::init_generator(&spec, &mut hub.stream("g"));
    let z: Tensor<f64> = hub.stream("z").normal_tensor(&[2, 8]);

    let loss_of = |params: &ParamSet<f64>| -> f64 {
        let mut tape = Tape::<f64>::new();
        let bound = BoundParams::trainable(&mut tape, params);
        let zv = tape.constant(z.clone());
        let w = nets::map_latent(&mut tape, zv, &bound);
        let img = nets::synthesize(
            &mut tape,
            &nets::Styles::Shared(w),
            &bound,
            &spec,
            nets::SynthOpts::default(),
        );
        let sq = tape.square(img);
        let s = tape.mean_all(sq);
        let sp = tape.softplus(s);
        tape.value(sp).item()
    };

    // analytic
    let mut tape = Tape::<f64>::new();
    let bound = BoundParams::trainable(&mut tape, &gen);
    let zv = tape.constant(z.clone());
    let w = nets::map_latent(&mut tape, zv, &bound);
    let img = nets::synthesize(
        &mut tape,
        &nets::Styles::Shared(w),
        &bound,
        &spec,
        nets::SynthOpts::default(),
    );
    let sq = tape.square(img);
    let s = tape.mean_all(sq);
    let loss = tape.softplus(s);
    let grads = tape.backward(loss);

    let h = 1e-6;
    let mut stream = hub.stream("picks");
    for name in ["map.fc0.weight", "synth.const", "synth.conv1.weight", "synth.conv3.affine.weight", "synth.torgb.weight"] {
        let analytic = grads.tensor_or_zeros(&tape, bound.var(name));
        let base = gen.get(name).clone();
        for _ in 0..3 {
            let idx = stream.below(base.numel());
            let mut pp = gen.clone();
            let mut pm = gen.clone();
            pp.get_mut(name).data_mut()[idx] += h;
            pm.get_mut(name).data_mut()[idx] -= h;
            let fd = (loss_of(&pp) - loss_of(&pm)) / (2.0 * h);
            let an = analytic.data()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-5, "{}[{}]: analytic {} vs fd {} rel {}", name, idx, an, fd, rel);
        }
    }
}

/// Identical graph construction twice gives bit-identical values.
#[test]
fn tape_replay_is_bit_deterministic() {
    let hub = SeedHub::new(5);
    let x: Tensor<f32> = hub.stream("x").normal_tensor(&[2, 3, 8, 8]);
    let w: Tensor<f32> = hub.stream("w").normal_scaled(&[4, 3, 3, 3], 0.2);
    let run = || -> (Tensor<f32>, Tensor<f32>) {
        let mut tape = Tape::<f32>::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let y = tape.conv2d(xv, wv, 1, 1);
        let l = tape.mean_all(y);
        let g = tape.backward(l);
        (tape.value(y).clone(), g.tensor_or_zeros(&tape, wv))
    };
    let (y1, g1) = run();
    let (y2, g2) = run();
    assert!(y1.bitwise_eq(&y2));
    assert!(g1.bitwise_eq(&g2));
}

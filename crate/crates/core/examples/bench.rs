//! Rough timing of the hot paths at desk scale.

use std::time::Instant;

use wrangan_core::invert::{invert, InversionConfig, Strategy};
use wrangan_core::nets::{self, GeneratorSpec};
use wrangan_core::params::ParamSet;
use wrangan_core::randparam::RandomizedParamStore;
use wrangan_core::rng::SeedHub;
use wrangan_core::train::{pretrain_base, ImageSet, TrainConfig};
use wrangan_core::Tensor;

fn main() {
    let spec = GeneratorSpec::desk();
    let hub = SeedHub::new(1);
    let mut s = hub.stream("data");
    let ds: ImageSet<f32> =
        ImageSet::new((0..64).map(|_| s.normal_scaled(&[3, 32, 32], 0.4)).collect());

    // forward-only synth
    let gen: ParamSet<f32> = nets::init_generator(&spec, &mut hub.stream("g"));
    let z: Tensor<f32> = hub.stream("z").normal_tensor(&[8, 32]);
    let w = nets::map_latent_plain(&gen, &z);
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let _ = nets::synthesize_plain(&gen, &spec, &w);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("synthesize fwd (batch 8): {:.1} ms  ({:.1} ms/img)", dt * 1e3, dt * 1e3 / 8.0);

    // full training iteration
    let cfg = TrainConfig { iterations: 20, seed: 3, ..Default::default() };
    let t0 = Instant::now();
    let (g0, _d0, _) = pretrain_base(&ds, &spec, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64() / cfg.iterations as f64;
    println!("pretrain iteration (batch 8, lazy r1/16): {:.1} ms", dt * 1e3);

    // inversion iterations
    let store = RandomizedParamStore::from_deterministic(&g0, &spec.randomized_names());
    let enc: ParamSet<f32> = nets::init_encoder(&spec, &mut hub.stream("e"));
    let target: Tensor<f32> = hub.stream("t").normal_scaled(&[3, 32, 32], 0.4);
    for strat in [Strategy::WOnly, Strategy::SimpleTune, Strategy::Wrangan] {
        let cfg = InversionConfig { iterations: 30, ..InversionConfig::for_strategy(strat, &spec) };
        let t0 = Instant::now();
        let _ = invert(&target, &store, &enc, &spec, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64() / cfg.iterations as f64;
        println!("{} iteration: {:.1} ms", strat.name(), dt * 1e3);
    }
}

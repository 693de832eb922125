//! Subcommand drivers. Every driver is an ordinary function over parsed
//! inputs so the full pipeline can run in-process (tests, determinism
//! checks) exactly as it runs from the command line.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use wrangan_core::eval::{
    self, CorruptionConfig, CorruptionContext, EvalReport, GridRow, StrategyRow,
};
use wrangan_core::invert::{self, InversionConfig, InversionResult, Strategy};
use wrangan_core::latent;
use wrangan_core::nets::GeneratorSpec;
use wrangan_core::params::ParamSet;
use wrangan_core::randparam::RandomizedParamStore;
use wrangan_core::rng::SeedHub;
use wrangan_core::tensor::Tensor;
use wrangan_core::train::{self, ImageSet};

use crate::checkpoint::{
    self, inversion_from_checkpoint, inversion_to_checkpoint, params_from_checkpoint,
    params_to_checkpoint, store_from_checkpoint, store_to_checkpoint, Checkpoint,
};
use crate::config::Config;
use crate::imageio;
use crate::report;
use crate::synthetic::{self, SyntheticSpec, ATTRIBUTES};

/// Deterministic parallel map: results are collected by item index, so any
/// job count produces the same output as `jobs = 1`.
pub fn par_map<I, R, F>(jobs: usize, items: Vec<I>, f: F) -> Vec<R>
where
    I: Send,
    R: Send,
    F: Fn(usize, I) -> R + Sync,
{
    let n = items.len();
    if jobs <= 1 || n <= 1 {
        return items.into_iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }
    let work: Vec<Mutex<Option<I>>> = items.into_iter().map(|i| Mutex::new(Some(i))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n) {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::Relaxed);
                if idx >= n {
                    break;
                }
                let item = work[idx].lock().unwrap().take().expect("item taken once");
                let r = f(idx, item);
                *results[idx].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
}

/// Provenance marker next to every artifact set.
fn write_run_info(out: &Path, cfg: &Config, command: &str) -> Result<()> {
    let text = format!(
        "command={}\nconfig_hash={}\nseed={}\n",
        command,
        cfg.hash(),
        cfg.run.seed
    );
    std::fs::write(out.join("run_info.txt"), text)
        .with_context(|| format!("cannot write run info under {}", out.display()))
}

pub fn load_dataset(data: &Path) -> Result<(ImageSet<f32>, Vec<String>)> {
    let (set, names) = imageio::load_image_folder(data)
        .with_context(|| format!("cannot load dataset from {}", data.display()))?;
    Ok((set, names))
}

fn split_base(params: ParamSet<f32>) -> (ParamSet<f32>, ParamSet<f32>) {
    let mut gen = ParamSet::new();
    let mut disc = ParamSet::new();
    for (name, t) in params.iter() {
        if name.starts_with("disc.") {
            disc.insert(name, t.clone());
        } else {
            gen.insert(name, t.clone());
        }
    }
    (gen, disc)
}

pub fn load_base(path: &Path) -> Result<(ParamSet<f32>, ParamSet<f32>)> {
    let ckpt = Checkpoint::load_expect(path, "base", None)?;
    Ok(split_base(params_from_checkpoint(&ckpt)))
}

pub fn load_store(path: &Path) -> Result<RandomizedParamStore<f32>> {
    let ckpt = Checkpoint::load_expect(path, "wrangan", None)?;
    Ok(store_from_checkpoint(&ckpt, &path.display().to_string())?)
}

pub fn load_encoder(path: &Path) -> Result<ParamSet<f32>> {
    let ckpt = Checkpoint::load_expect(path, "encoder", None)?;
    Ok(params_from_checkpoint(&ckpt))
}

// ---- gen-data ---------------------------------------------------------------

pub fn cmd_gen_data(cfg: &Config, out: &Path) -> Result<String> {
    ensure_dir(out)?;
    let spec = SyntheticSpec {
        n_images: cfg.data.n_images,
        seed: cfg.run.seed,
        size_jitter: cfg.data.size_jitter,
        hue_jitter: cfg.data.hue_jitter,
        background_jitter: cfg.data.background_jitter,
    };
    let (images, labels) = synthetic::generate(&spec);
    let mut names = Vec::with_capacity(images.len());
    for (i, img) in images.images.iter().enumerate() {
        let name = format!("img_{:05}.png", i);
        imageio::save_png(&out.join(&name), img)?;
        names.push(name);
    }
    report::write_labels(&out.join("labels.csv"), &names, &labels)?;
    write_run_info(out, cfg, "gen-data")?;
    Ok(format!(
        "gen-data: {} images + labels.csv under {} [config {}]",
        images.len(),
        out.display(),
        cfg.hash()
    ))
}

// ---- training ---------------------------------------------------------------

pub fn cmd_pretrain(cfg: &Config, data: &Path, out: &Path) -> Result<String> {
    ensure_dir(out)?;
    let (dataset, _) = load_dataset(data)?;
    if dataset.len() < 1000 {
        bail!(
            "pretraining expects a dataset of >= 1000 images, got {} (generate more with gen-data)",
            dataset.len()
        );
    }
    let spec = cfg.generator_spec();
    let tc = cfg.train_config(cfg.train.pretrain_iterations);
    let (gen, disc, log) = train::pretrain_base(&dataset, &spec, &tc)?;
    let mut merged = gen;
    for (name, t) in disc.iter() {
        merged.insert(name, t.clone());
    }
    params_to_checkpoint("base", &merged, &cfg.hash(), cfg.run.seed)
        .save(&out.join("base.ckpt"))?;
    report::write_loss_log(&out.join("pretrain_loss.csv"), &log)?;
    write_run_info(out, cfg, "pretrain")?;
    Ok(format!(
        "pretrain: {} iterations -> {} [config {}]",
        tc.iterations,
        out.join("base.ckpt").display(),
        cfg.hash()
    ))
}

pub fn cmd_train_wrangan(cfg: &Config, data: &Path, base: &Path, out: &Path) -> Result<String> {
    ensure_dir(out)?;
    let (dataset, _) = load_dataset(data)?;
    let (gen, disc) = load_base(base)?;
    let spec = cfg.generator_spec();
    let tc = cfg.train_config(cfg.train.wrangan_iterations);
    let (store, disc_out, log) =
        train::train_wrangan(&gen, Some(&disc), &dataset, &spec, &tc)?;
    store_to_checkpoint(&store, &cfg.hash(), cfg.run.seed).save(&out.join("wrangan.ckpt"))?;
    params_to_checkpoint("disc", &disc_out, &cfg.hash(), cfg.run.seed)
        .save(&out.join("wrangan_disc.ckpt"))?;
    report::write_loss_log(&out.join("wrangan_loss.csv"), &log)?;
    write_run_info(out, cfg, "train-wrangan")?;
    let counts = wrangan_core::randparam::count_params(&store);
    Ok(format!(
        "train-wrangan: {} iterations, {} randomized / {} total params ({:.1}%) -> {} [config {}]",
        tc.iterations,
        counts.randomized,
        counts.total,
        counts.relative_increase * 100.0,
        out.join("wrangan.ckpt").display(),
        cfg.hash()
    ))
}

pub fn cmd_train_encoder(cfg: &Config, data: &Path, store: &Path, out: &Path) -> Result<String> {
    ensure_dir(out)?;
    let (dataset, _) = load_dataset(data)?;
    let store = load_store(store)?;
    let spec = cfg.generator_spec();
    let tc = cfg.train_config(cfg.train.encoder_iterations);
    let (encoder, log) = train::train_encoder(&store, &dataset, &spec, &tc)?;
    params_to_checkpoint("encoder", &encoder, &cfg.hash(), cfg.run.seed)
        .save(&out.join("encoder.ckpt"))?;
    report::write_scalar_log(&out.join("encoder_loss.csv"), "loss", &log)?;
    write_run_info(out, cfg, "train-encoder")?;
    Ok(format!(
        "train-encoder: {} iterations -> {} [config {}]",
        tc.iterations,
        out.join("encoder.ckpt").display(),
        cfg.hash()
    ))
}

// ---- inversion ---------------------------------------------------------------

pub fn inversion_config(cfg: &Config, strategy: Strategy, spec: &GeneratorSpec) -> InversionConfig {
    InversionConfig {
        strategy,
        iterations: cfg.invert.iterations,
        lr: cfg.invert.lr,
        alpha_reg: match strategy {
            Strategy::WOnly | Strategy::WPlus => 0.0,
            Strategy::SimpleTune => cfg.invert.alpha_simple,
            Strategy::PtiStyle => cfg.invert.alpha_pti,
            Strategy::Wrangan => cfg.invert.alpha_wrangan,
        },
        eps_init: cfg.invert.eps_init,
        tune_layers: spec.n_randomized,
        seed: cfg.run.seed,
    }
}

/// `--image` accepts one file or a folder.
fn collect_targets(image: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    if image.is_dir() {
        let (set, names) = load_dataset(image)?;
        Ok(names.into_iter().zip(set.images).collect())
    } else {
        let t = imageio::load_image(image)
            .with_context(|| format!("cannot load image {}", image.display()))?;
        let stem = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".to_string());
        Ok(vec![(stem, t)])
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_invert(
    cfg: &Config,
    store_path: &Path,
    encoder_path: &Path,
    image: &Path,
    strategy: Strategy,
    out: &Path,
    alpha_override: Option<f64>,
    jobs: usize,
) -> Result<String> {
    ensure_dir(out)?;
    let store = load_store(store_path)?;
    let encoder = load_encoder(encoder_path)?;
    let spec = cfg.generator_spec();
    let mut icfg = inversion_config(cfg, strategy, &spec);
    if let Some(a) = alpha_override {
        icfg.alpha_reg = a;
    }
    let targets = collect_targets(image)?;
    let total = targets.len();
    let results = par_map(jobs, targets, |_, (stem, target)| {
        let r = invert::invert(&target, &store, &encoder, &spec, &icfg);
        (stem, r)
    });
    let mut mean_mse = 0.0;
    let mut failures = 0usize;
    for (stem, outcome) in &results {
        match outcome {
            Ok(result) => {
                let tag = format!("{}_{}", stem, strategy.name());
                inversion_to_checkpoint(result, &cfg.hash(), cfg.run.seed)
                    .save(&out.join(format!("inv_{}.ckpt", tag)))?;
                report::write_trace(&out.join(format!("trace_{}.csv", tag)), &result.loss_trace)?;
                imageio::save_png(
                    &out.join(format!("recon_{}.png", tag)),
                    &wrangan_core::metrics::clamp_image(&result.final_image),
                )?;
                mean_mse += result.distortion.mse;
            }
            Err(e) => {
                log::warn!("inversion of {} failed: {}", stem, e);
                failures += 1;
            }
        }
    }
    write_run_info(out, cfg, "invert")?;
    let succeeded = total - failures;
    if succeeded == 0 {
        bail!("all {} inversions failed", total);
    }
    Ok(format!(
        "invert[{}]: {}/{} images, mean mse {:.6} -> {} [config {}]",
        strategy.name(),
        succeeded,
        total,
        mean_mse / succeeded as f64,
        out.display(),
        cfg.hash()
    ))
}

// ---- evaluate ------------------------------------------------------------------

pub const PROTOCOLS: [&str; 3] = ["strategy-compare", "corruption", "model-quality"];

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    cfg: &Config,
    protocol: &str,
    data: &Path,
    store_path: &Path,
    encoder_path: &Path,
    out: &Path,
    jobs: usize,
) -> Result<String> {
    ensure_dir(out)?;
    let store = load_store(store_path)?;
    let encoder = load_encoder(encoder_path)?;
    let spec = cfg.generator_spec();
    let (dataset, _) = load_dataset(data)?;
    let feat: ParamSet<f32> = wrangan_core::nets::init_perceptual(spec.feature_seed);
    let hub = SeedHub::new(cfg.run.seed);

    let summary = match protocol {
        "strategy-compare" => {
            if cfg.eval.strategy_images < 20 {
                bail!(
                    "strategy-compare needs >= 20 test images, eval.strategy_images = {}",
                    cfg.eval.strategy_images
                );
            }
            let rows = run_strategy_compare(
                cfg,
                &dataset,
                &store,
                &encoder,
                &spec,
                &feat,
                &hub,
                jobs,
                true,
            )?;
            report::write_strategy_rows(&out.join("strategy_compare.csv"), &rows)?;
            format!("strategy-compare: {} rows -> strategy_compare.csv", rows.len())
        }
        "corruption" => {
            let rows = run_corruption_protocol(cfg, &dataset, &store, &encoder, &spec, &feat, &hub, jobs)?;
            report::write_strategy_rows(&out.join("corruption.csv"), &rows)?;
            let mean = |s: Strategy| -> f64 {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.strategy == s && r.ok)
                    .map(|r| r.corruption_fid)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            };
            format!(
                "corruption: mean fid simple_tune {:.3} / wrangan {:.3} / pti_style {:.3} -> corruption.csv",
                mean(Strategy::SimpleTune),
                mean(Strategy::Wrangan),
                mean(Strategy::PtiStyle)
            )
        }
        "model-quality" => {
            let mut report_out = eval::model_quality(
                &store.to_deterministic(),
                &spec,
                &dataset,
                &feat,
                cfg.eval.model_quality_images,
                cfg.eval.knn_k,
                &mut hub.stream("eval.model_quality"),
            )?;
            report_out.seed = cfg.run.seed;
            report_out.config_hash = cfg.hash();
            std::fs::write(out.join("model_quality.json"), report::report_to_json(&report_out))?;
            format!(
                "model-quality: fid {:.3} kid {:.5} precision {:.3} recall {:.3} -> model_quality.json",
                report_out.get("fid").unwrap_or(f64::NAN),
                report_out.get("kid").unwrap_or(f64::NAN),
                report_out.get("precision").unwrap_or(f64::NAN),
                report_out.get("recall").unwrap_or(f64::NAN)
            )
        }
        other => bail!("unknown protocol {:?}; available: {}", other, PROTOCOLS.join(", ")),
    };
    write_run_info(out, cfg, &format!("evaluate --protocol {}", protocol))?;
    Ok(format!("{} [config {}]", summary, cfg.hash()))
}

#[allow(clippy::too_many_arguments)]
pub fn run_strategy_compare(
    cfg: &Config,
    dataset: &ImageSet<f32>,
    store: &RandomizedParamStore<f32>,
    encoder: &ParamSet<f32>,
    spec: &GeneratorSpec,
    feat: &ParamSet<f32>,
    hub: &SeedHub,
    jobs: usize,
    with_corruption: bool,
) -> Result<Vec<StrategyRow>> {
    let n = cfg.eval.strategy_images.min(dataset.len());
    let targets: Vec<Tensor<f32>> = dataset.images[..n].to_vec();
    let det = store.to_deterministic();
    let char_size = eval::characteristic_size(
        &det,
        spec,
        cfg.eval.char_size_samples,
        &mut hub.stream("eval.char_size"),
    );
    let (ref_stats, ref_feats) = eval::reference_features(dataset, feat, dataset.len())?;
    let corruption_cfg = CorruptionConfig {
        n_images: cfg.eval.corruption_images,
        shift_scale: cfg.eval.shift_scale,
    };
    let rows: Vec<Vec<StrategyRow>> = par_map(jobs, targets, |i, target| {
        let ctx = CorruptionContext {
            ref_stats: &ref_stats,
            ref_features: &ref_feats,
            feat_params: feat,
            char_size,
            config: corruption_cfg,
        };
        let make_cfg = |s: Strategy| inversion_config(cfg, s, spec);
        let start = Instant::now();
        let _ = start;
        eval::strategy_compare_single(
            i,
            &target,
            store,
            encoder,
            spec,
            &make_cfg,
            if with_corruption { Some(&ctx) } else { None },
            hub,
            &mut wall_clock(),
        )
    });
    Ok(rows.into_iter().flatten().collect())
}

fn wall_clock() -> impl FnMut() -> f64 {
    let t0 = Instant::now();
    move || t0.elapsed().as_secs_f64()
}

/// Corruption scoring of the three tuning strategies over inverted images.
#[allow(clippy::too_many_arguments)]
fn run_corruption_protocol(
    cfg: &Config,
    dataset: &ImageSet<f32>,
    store: &RandomizedParamStore<f32>,
    encoder: &ParamSet<f32>,
    spec: &GeneratorSpec,
    feat: &ParamSet<f32>,
    hub: &SeedHub,
    jobs: usize,
) -> Result<Vec<StrategyRow>> {
    let n = cfg.eval.strategy_images.min(dataset.len());
    let targets: Vec<Tensor<f32>> = dataset.images[..n].to_vec();
    let det = store.to_deterministic();
    let char_size = eval::characteristic_size(
        &det,
        spec,
        cfg.eval.char_size_samples,
        &mut hub.stream("eval.char_size"),
    );
    let (ref_stats, ref_feats) = eval::reference_features(dataset, feat, dataset.len())?;
    let corruption_cfg = CorruptionConfig {
        n_images: cfg.eval.corruption_images,
        shift_scale: cfg.eval.shift_scale,
    };
    let strategies = [Strategy::SimpleTune, Strategy::Wrangan, Strategy::PtiStyle];
    let rows: Vec<Vec<StrategyRow>> = par_map(jobs, targets, |i, target| {
        let mut out = Vec::new();
        for strategy in strategies {
            let icfg = inversion_config(cfg, strategy, spec);
            let mut timer = wall_clock();
            let t0 = timer();
            match invert::invert(&target, store, encoder, spec, &icfg) {
                Ok(result) => {
                    let mut stream =
                        hub.stream(&format!("eval.corruption.{}.{}", i, strategy.name()));
                    let (fid, kid) = eval::corruption_fid(
                        &result.final_weights,
                        spec,
                        &ref_stats,
                        &ref_feats,
                        feat,
                        char_size,
                        &corruption_cfg,
                        &mut stream,
                    )
                    .unwrap_or((f64::NAN, f64::NAN));
                    out.push(StrategyRow {
                        image_id: i,
                        strategy,
                        ok: true,
                        mse: result.distortion.mse,
                        perceptual: result.distortion.perceptual,
                        ms_ssim: result.distortion.ms_ssim,
                        corruption_fid: fid,
                        corruption_kid: kid,
                        wall_seconds: timer() - t0,
                        params_optimized: result.params_optimized,
                    });
                }
                Err(e) => {
                    log::warn!("corruption protocol: {} failed on image {}: {}", strategy.name(), i, e);
                    out.push(StrategyRow {
                        image_id: i,
                        strategy,
                        ok: false,
                        mse: f64::NAN,
                        perceptual: f64::NAN,
                        ms_ssim: f64::NAN,
                        corruption_fid: f64::NAN,
                        corruption_kid: f64::NAN,
                        wall_seconds: timer() - t0,
                        params_optimized: 0,
                    });
                }
            }
        }
        out
    });
    Ok(rows.into_iter().flatten().collect())
}

// ---- grid ---------------------------------------------------------------------

pub fn cmd_grid(
    cfg: &Config,
    data: &Path,
    base: &Path,
    encoder_path: &Path,
    out: &Path,
    jobs: usize,
) -> Result<String> {
    ensure_dir(out)?;
    let (gen, _) = load_base(base)?;
    let encoder = load_encoder(encoder_path)?;
    let spec = cfg.generator_spec();
    let (dataset, _) = load_dataset(data)?;
    let n = cfg.eval.grid_images.min(dataset.len());
    let images: Vec<Tensor<f32>> = dataset.images[..n].to_vec();
    let mut cells = Vec::new();
    for &layers in &cfg.eval.grid_layers {
        for &alpha in &cfg.eval.grid_alphas {
            cells.push((layers, alpha));
        }
    }
    let rows: Vec<Result<GridRow, wrangan_core::invert::InvertError>> =
        par_map(jobs, cells, |_, (layers, alpha)| {
            eval::grid_cell(
                &gen,
                &encoder,
                &spec,
                &images,
                layers,
                alpha,
                cfg.eval.grid_iterations,
                cfg.invert.lr,
            )
        });
    let rows: Vec<GridRow> = rows.into_iter().collect::<Result<_, _>>()?;
    report::write_grid(&out.join("layer_grid.csv"), &rows)?;
    write_run_info(out, cfg, "grid")?;
    Ok(format!(
        "grid: {} cells over {} images -> layer_grid.csv [config {}]",
        rows.len(),
        n,
        cfg.hash()
    ))
}

// ---- analyze ---------------------------------------------------------------------

pub const ANALYSES: [&str; 5] =
    ["variance-hist", "layer-influence", "epsilon-stats", "hyperplanes", "pca"];

pub struct AnalyzeInputs<'a> {
    pub store: Option<&'a Path>,
    pub encoder: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub results: Option<&'a Path>,
}

pub fn cmd_analyze(
    cfg: &Config,
    protocol: &str,
    inputs: &AnalyzeInputs<'_>,
    out: &Path,
) -> Result<String> {
    ensure_dir(out)?;
    let spec = cfg.generator_spec();
    let hub = SeedHub::new(cfg.run.seed);
    let need_store = || -> Result<RandomizedParamStore<f32>> {
        load_store(inputs.store.context("this analysis needs --store")?)
    };
    let summary = match protocol {
        "variance-hist" => {
            let store = need_store()?;
            let rows = eval::variance_histogram(&store);
            report::write_variance_hist(&out.join("variance_hist.csv"), &rows)?;
            format!("variance-hist: {} layers -> variance_hist.csv", rows.len())
        }
        "layer-influence" => {
            let store = need_store()?;
            let rows = eval::layer_influence(
                &store,
                &spec,
                cfg.eval.influence_samples,
                &mut hub.stream("analyze.influence"),
            );
            report::write_layer_influence(&out.join("layer_influence.csv"), &rows)?;
            format!("layer-influence: {} layers -> layer_influence.csv", rows.len())
        }
        "epsilon-stats" => {
            let store = need_store()?;
            let dir = inputs.results.context("epsilon-stats needs --results DIR")?;
            let results = load_inversions(dir, Some(Strategy::Wrangan))?;
            let refs: Vec<&InversionResult<f32>> = results.iter().collect();
            let rows = eval::epsilon_statistics(&refs, &store)?;
            report::write_epsilon_stats(&out.join("epsilon_stats.csv"), &rows)?;
            format!(
                "epsilon-stats: {} results, {} layers -> epsilon_stats.csv",
                results.len(),
                rows.len()
            )
        }
        "hyperplanes" => {
            let store = need_store()?;
            let encoder = load_encoder(inputs.encoder.context("hyperplanes needs --encoder")?)?;
            let data = inputs.data.context("hyperplanes needs --data")?;
            let (dataset, _) = load_dataset(data)?;
            let labels = report::read_labels(&data.join("labels.csv"))
                .context("hyperplanes needs labels.csv next to the images")?;
            if labels.rows.len() != dataset.len() {
                bail!(
                    "labels.csv has {} rows for {} images",
                    labels.rows.len(),
                    dataset.len()
                );
            }
            let codes = encode_dataset(&store, &encoder, &dataset);
            let mut ckpt = Checkpoint::new("directions", &cfg.hash(), cfg.run.seed);
            let mut csv_rows = Vec::new();
            for attr in ATTRIBUTES {
                let labelled: Vec<(Tensor<f32>, bool)> = codes
                    .iter()
                    .cloned()
                    .zip(labels.attribute(attr).unwrap())
                    .collect();
                let (plane, accuracy) = latent::fit_hyperplane_holdout(
                    &labelled,
                    &mut hub.stream(&format!("analyze.hyperplane.{}", attr)),
                )?;
                let normal = Tensor::new(
                    &[spec.w_dim],
                    plane.normal.iter().map(|v| *v as f32).collect(),
                );
                ckpt.push(&format!("attr.{}", attr), normal);
                ckpt.meta.insert(format!("offset.{}", attr), format!("{:e}", plane.offset));
                ckpt.meta
                    .insert(format!("accuracy.{}", attr), format!("{}", accuracy));
                csv_rows.push(vec![
                    attr.to_string(),
                    report::fnum(accuracy),
                    report::fnum(plane.offset),
                ]);
            }
            ckpt.save(&out.join("directions.ckpt"))?;
            report::write_csv(
                &out.join("hyperplanes.csv"),
                &["attribute", "holdout_accuracy", "offset"],
                csv_rows,
            )?;
            "hyperplanes: 3 attributes -> directions.ckpt, hyperplanes.csv".to_string()
        }
        "pca" => {
            let store = need_store()?;
            let det = store.to_deterministic();
            let codes = eval::sample_codes(
                &det,
                &spec,
                cfg.eval.char_size_samples,
                &mut hub.stream("analyze.pca"),
            );
            let (dirs, eigenvalues) = latent::pca_directions(&codes, cfg.eval.pca_directions)?;
            let mut ckpt = Checkpoint::new("directions", &cfg.hash(), cfg.run.seed);
            let mut csv_rows = Vec::new();
            for (i, (d, ev)) in dirs.iter().zip(&eigenvalues).enumerate() {
                ckpt.push(
                    &format!("pca.{}", i),
                    Tensor::new(&[spec.w_dim], d.iter().map(|v| *v as f32).collect()),
                );
                ckpt.meta.insert(format!("eigenvalue.{}", i), format!("{}", ev));
                csv_rows.push(vec![i.to_string(), report::fnum(*ev)]);
            }
            ckpt.save(&out.join("pca_directions.ckpt"))?;
            report::write_csv(&out.join("pca.csv"), &["direction", "eigenvalue"], csv_rows)?;
            format!("pca: {} directions -> pca_directions.ckpt, pca.csv", dirs.len())
        }
        other => bail!("unknown analysis {:?}; available: {}", other, ANALYSES.join(", ")),
    };
    write_run_info(out, cfg, &format!("analyze --protocol {}", protocol))?;
    Ok(format!("{} [config {}]", summary, cfg.hash()))
}

/// Encoder initialization codes `w = f(E(x))` for every dataset image.
pub fn encode_dataset(
    store: &RandomizedParamStore<f32>,
    encoder: &ParamSet<f32>,
    dataset: &ImageSet<f32>,
) -> Vec<Tensor<f32>> {
    let det = store.to_deterministic();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.images.chunks(32) {
        let batch = wrangan_core::metrics::stack_images(chunk);
        let w = wrangan_core::nets::encoder_init_w(&det, encoder, &batch);
        let dim = w.shape()[1];
        for i in 0..chunk.len() {
            out.push(Tensor::new(&[dim], w.data()[i * dim..(i + 1) * dim].to_vec()));
        }
    }
    out
}

pub fn load_inversions(
    dir: &Path,
    strategy: Option<Strategy>,
) -> Result<Vec<InversionResult<f32>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read results dir {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().map(|e| e == "ckpt").unwrap_or(false)
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("inv_"))
                    .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut results = Vec::new();
    for p in paths {
        let ckpt = Checkpoint::load_expect(&p, "inversion", None)?;
        let r = inversion_from_checkpoint(&ckpt, &p.display().to_string())?;
        if strategy.map_or(true, |s| r.strategy == s) {
            results.push(r);
        }
    }
    if results.is_empty() {
        bail!("no matching inversion results under {}", dir.display());
    }
    Ok(results)
}

// ---- edit / interpolate -------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_edit(
    cfg: &Config,
    result_path: &Path,
    directions_path: &Path,
    attr: &str,
    step: f64,
    out: &Path,
) -> Result<String> {
    ensure_dir(out)?;
    let spec = cfg.generator_spec();
    let result = inversion_from_checkpoint(
        &Checkpoint::load_expect(result_path, "inversion", None)?,
        &result_path.display().to_string(),
    )?;
    let dirs = Checkpoint::load_expect(directions_path, "directions", None)?;
    let entry = format!("attr.{}", attr);
    let tensor = match dirs.tensor(&entry, &directions_path.display().to_string()) {
        Ok(t) => t,
        Err(_) => dirs.tensor(attr, &directions_path.display().to_string())?,
    };
    let direction: Vec<f64> = tensor.data().iter().map(|v| *v as f64).collect();
    let edited = latent::edit(&result, &direction, step, &spec);
    imageio::save_png(
        &out.join("reconstruction.png"),
        &wrangan_core::metrics::clamp_image(&result.final_image),
    )?;
    imageio::save_png(
        &out.join(format!("edited_{}_{:+.2}.png", attr, step)),
        &wrangan_core::metrics::clamp_image(&edited),
    )?;
    write_run_info(out, cfg, "edit")?;
    Ok(format!(
        "edit: {} step {:+.2} -> {} [config {}]",
        attr,
        step,
        out.display(),
        cfg.hash()
    ))
}

pub fn cmd_interpolate(
    cfg: &Config,
    store_path: &Path,
    result_a: &Path,
    result_b: &Path,
    alphas: &[f64],
    out: &Path,
) -> Result<String> {
    ensure_dir(out)?;
    let spec = cfg.generator_spec();
    let store = load_store(store_path)?;
    let load = |p: &Path| -> Result<InversionResult<f32>> {
        Ok(inversion_from_checkpoint(
            &Checkpoint::load_expect(p, "inversion", None)?,
            &p.display().to_string(),
        )?)
    };
    let a = load(result_a)?;
    let b = load(result_b)?;
    let frames = latent::interpolate(&store, &a, &b, alphas, &spec)?;
    for (alpha, frame) in alphas.iter().zip(&frames) {
        imageio::save_png(
            &out.join(format!("interp_{:.3}.png", alpha)),
            &wrangan_core::metrics::clamp_image(frame),
        )?;
    }
    write_run_info(out, cfg, "interpolate")?;
    Ok(format!(
        "interpolate: {} frames -> {} [config {}]",
        frames.len(),
        out.display(),
        cfg.hash()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_matches_sequential_and_preserves_order() {
        let items: Vec<usize> = (0..57).collect();
        let seq = par_map(1, items.clone(), |i, v| i * 1000 + v * v);
        let par = par_map(4, items, |i, v| i * 1000 + v * v);
        assert_eq!(seq, par);
    }
}

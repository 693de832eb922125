use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wrangan_core::invert::Strategy;
use wrangan::config::Config;
use wrangan::pipeline::{self, AnalyzeInputs};

/// Randomized-weight GAN training, inversion and evaluation.
#[derive(Parser)]
#[command(name = "wrangan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply for every key it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override (defaults to the config value).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-image work; 1 is the determinism reference.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labeled dataset (PNG images + labels.csv).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Adversarially pretrain the deterministic base generator.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (from gen-data or any PNG/PPM folder).
        #[arg(long)]
        data: PathBuf,
        /// Override train.pretrain_iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train mean/variance pairs on the last N conv layers.
    TrainWrangan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained base checkpoint (base.ckpt).
        #[arg(long)]
        base: PathBuf,
        /// Override train.wrangan_iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override networks.n_randomized.
        #[arg(long)]
        n_randomized: Option<usize>,
    },
    /// Train the encoder against the frozen generator.
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Trained store checkpoint (wrangan.ckpt).
        #[arg(long)]
        store: PathBuf,
        /// Override train.encoder_iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Invert one image or a folder of images.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        /// Target image file or directory.
        #[arg(long)]
        image: PathBuf,
        /// One of: w_only, w_plus, simple_tune, pti_style, wrangan.
        #[arg(long, default_value = "wrangan")]
        strategy: String,
        /// Override the regularization coefficient for this strategy.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override invert.iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run an evaluation protocol: strategy-compare, corruption or
    /// model-quality.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        /// Override invert.iterations for the protocol's inversions.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Reconstruction-error grid over layer counts and coefficients.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained base checkpoint (the grid tunes from it).
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
    },
    /// Model analyses: variance-hist, layer-influence, epsilon-stats,
    /// hyperplanes or pca.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of inversion checkpoints (epsilon-stats).
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Move an inversion along a stored attribute/PCA direction.
    Edit {
        #[command(flatten)]
        common: Common,
        /// Inversion result checkpoint.
        #[arg(long)]
        result: PathBuf,
        /// Directions checkpoint (from analyze hyperplanes/pca).
        #[arg(long)]
        directions: PathBuf,
        /// Direction name, e.g. fill_light or pca.0.
        #[arg(long)]
        attr: String,
        /// Step along the unit direction.
        #[arg(long)]
        step: f64,
    },
    /// Interpolate between two inversions of the same store.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        result_a: PathBuf,
        #[arg(long)]
        result_b: PathBuf,
        /// Comma-separated interpolation positions, e.g. 0,0.25,0.5,1.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        alphas: String,
    },
}

fn load_config(common: &Common) -> anyhow::Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn run() -> anyhow::Result<String> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            pipeline::cmd_gen_data(&cfg, &common.out)
        }
        Command::Pretrain { common, data, iterations } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.train.pretrain_iterations = n;
            }
            pipeline::cmd_pretrain(&cfg, &data, &common.out)
        }
        Command::TrainWrangan { common, data, base, iterations, n_randomized } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.train.wrangan_iterations = n;
            }
            if let Some(n) = n_randomized {
                cfg.networks.n_randomized = n;
                cfg.generator_spec().validate().map_err(anyhow::Error::msg)?;
            }
            pipeline::cmd_train_wrangan(&cfg, &data, &base, &common.out)
        }
        Command::TrainEncoder { common, data, store, iterations } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.train.encoder_iterations = n;
            }
            pipeline::cmd_train_encoder(&cfg, &data, &store, &common.out)
        }
        Command::Invert { common, store, encoder, image, strategy, alpha, iterations } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.invert.iterations = n;
            }
            let strategy = Strategy::parse(&strategy).ok_or_else(|| {
                anyhow::anyhow!(
                    "unknown strategy {:?}; one of w_only, w_plus, simple_tune, pti_style, wrangan",
                    strategy
                )
            })?;
            pipeline::cmd_invert(
                &cfg,
                &store,
                &encoder,
                &image,
                strategy,
                &common.out,
                alpha,
                common.jobs,
            )
        }
        Command::Evaluate { common, protocol, data, store, encoder, iterations } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.invert.iterations = n;
            }
            pipeline::cmd_evaluate(
                &cfg,
                &protocol,
                &data,
                &store,
                &encoder,
                &common.out,
                common.jobs,
            )
        }
        Command::Grid { common, data, base, encoder } => {
            let cfg = load_config(&common)?;
            pipeline::cmd_grid(&cfg, &data, &base, &encoder, &common.out, common.jobs)
        }
        Command::Analyze { common, protocol, store, encoder, data, results } => {
            let cfg = load_config(&common)?;
            let inputs = AnalyzeInputs {
                store: store.as_deref(),
                encoder: encoder.as_deref(),
                data: data.as_deref(),
                results: results.as_deref(),
            };
            pipeline::cmd_analyze(&cfg, &protocol, &inputs, &common.out)
        }
        Command::Edit { common, result, directions, attr, step } => {
            let cfg = load_config(&common)?;
            pipeline::cmd_edit(&cfg, &result, &directions, &attr, step, &common.out)
        }
        Command::Interpolate { common, store, result_a, result_b, alphas } => {
            let cfg = load_config(&common)?;
            let alphas: Vec<f64> = alphas
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| anyhow::anyhow!("bad --alphas list: {}", e))?;
            pipeline::cmd_interpolate(&cfg, &store, &result_a, &result_b, &alphas, &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(summary) => {
            println!("{}", summary);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {:#}", err);
            ExitCode::FAILURE
        }
    }
}

//! Run configuration: a flat key-value text file with one section per
//! subsystem. Unknown sections or keys are hard errors, so a typo in a
//! hyperparameter name cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;
use wrangan_core::nets::GeneratorSpec;
use wrangan_core::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("unknown config section [{section}]")]
    UnknownSection { section: String },
    #[error("invalid value for [{section}] {key}: {message}")]
    BadValue { section: String, key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub n_images: usize,
    /// Half-range of the object size jitter, in pixels.
    pub size_jitter: f64,
    /// Per-channel color jitter amplitude.
    pub hue_jitter: f64,
    /// Background level amplitude.
    pub background_jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworksConfig {
    pub z_dim: usize,
    pub w_dim: usize,
    pub base_resolution: usize,
    pub final_resolution: usize,
    pub channels: Vec<usize>,
    pub convs_per_resolution: usize,
    pub n_randomized: usize,
    pub feature_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub pretrain_iterations: usize,
    pub wrangan_iterations: usize,
    pub encoder_iterations: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub r1_gamma: f64,
    pub r1_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertSection {
    pub iterations: usize,
    pub lr: f64,
    pub alpha_wrangan: f64,
    pub alpha_simple: f64,
    pub alpha_pti: f64,
    pub eps_init: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub corruption_images: usize,
    pub shift_scale: f64,
    pub char_size_samples: usize,
    pub strategy_images: usize,
    pub grid_images: usize,
    pub grid_iterations: usize,
    pub grid_alphas: Vec<f64>,
    pub grid_layers: Vec<usize>,
    pub influence_samples: usize,
    pub model_quality_images: usize,
    pub knn_k: usize,
    pub pca_directions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub run: RunConfig,
    pub data: DataConfig,
    pub networks: NetworksConfig,
    pub train: TrainSection,
    pub invert: InvertSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            run: RunConfig { seed: 7 },
            data: DataConfig {
                n_images: 2000,
                size_jitter: 1.5,
                hue_jitter: 0.25,
                background_jitter: 0.15,
            },
            networks: NetworksConfig {
                z_dim: 32,
                w_dim: 32,
                base_resolution: 4,
                final_resolution: 32,
                channels: vec![64, 32, 32, 16],
                convs_per_resolution: 2,
                n_randomized: 6,
                feature_seed: 1405,
            },
            train: TrainSection {
                batch_size: 8,
                pretrain_iterations: 20_000,
                wrangan_iterations: 10_000,
                encoder_iterations: 4_000,
                lr_g: 1e-3,
                lr_d: 1e-3,
                r1_gamma: 1.0,
                r1_every: 16,
            },
            invert: InvertSection {
                iterations: 500,
                lr: 1e-3,
                alpha_wrangan: 1e-4,
                alpha_simple: 1e-6,
                alpha_pti: 1e-2,
                eps_init: 1e-4,
            },
            eval: EvalSection {
                corruption_images: 256,
                shift_scale: 1.0,
                char_size_samples: 10_000,
                strategy_images: 20,
                grid_images: 50,
                grid_iterations: 150,
                grid_alphas: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
                grid_layers: vec![4, 6, 8],
                influence_samples: 100,
                model_quality_images: 256,
                knn_k: 3,
                pca_directions: 4,
            },
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parse overrides on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: lineno + 1,
                    message: format!("malformed section header {:?}", raw.trim()),
                })?;
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "run" | "data" | "networks" | "train" | "invert" | "eval"
                ) {
                    return Err(ConfigError::UnknownSection { section });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: lineno + 1,
                message: format!("expected key = value, got {:?}", raw.trim()),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            message,
        };
        macro_rules! set {
            ($slot:expr, $ty:ty) => {
                $slot = value.parse::<$ty>().map_err(|e| bad(e.to_string()))?
            };
        }
        match (section, key) {
            ("run", "seed") => set!(self.run.seed, u64),
            ("data", "n_images") => set!(self.data.n_images, usize),
            ("data", "size_jitter") => set!(self.data.size_jitter, f64),
            ("data", "hue_jitter") => set!(self.data.hue_jitter, f64),
            ("data", "background_jitter") => set!(self.data.background_jitter, f64),
            ("networks", "z_dim") => set!(self.networks.z_dim, usize),
            ("networks", "w_dim") => set!(self.networks.w_dim, usize),
            ("networks", "base_resolution") => set!(self.networks.base_resolution, usize),
            ("networks", "final_resolution") => set!(self.networks.final_resolution, usize),
            ("networks", "channels") => {
                self.networks.channels = parse_list::<usize>(value).map_err(bad)?
            }
            ("networks", "convs_per_resolution") => {
                set!(self.networks.convs_per_resolution, usize)
            }
            ("networks", "n_randomized") => set!(self.networks.n_randomized, usize),
            ("networks", "feature_seed") => set!(self.networks.feature_seed, u64),
            ("train", "batch_size") => set!(self.train.batch_size, usize),
            ("train", "pretrain_iterations") => set!(self.train.pretrain_iterations, usize),
            ("train", "wrangan_iterations") => set!(self.train.wrangan_iterations, usize),
            ("train", "encoder_iterations") => set!(self.train.encoder_iterations, usize),
            ("train", "lr_g") => set!(self.train.lr_g, f64),
            ("train", "lr_d") => set!(self.train.lr_d, f64),
            ("train", "r1_gamma") => set!(self.train.r1_gamma, f64),
            ("train", "r1_every") => set!(self.train.r1_every, usize),
            ("invert", "iterations") => set!(self.invert.iterations, usize),
            ("invert", "lr") => set!(self.invert.lr, f64),
            ("invert", "alpha_wrangan") => set!(self.invert.alpha_wrangan, f64),
            ("invert", "alpha_simple") => set!(self.invert.alpha_simple, f64),
            ("invert", "alpha_pti") => set!(self.invert.alpha_pti, f64),
            ("invert", "eps_init") => set!(self.invert.eps_init, f64),
            ("eval", "corruption_images") => set!(self.eval.corruption_images, usize),
            ("eval", "shift_scale") => set!(self.eval.shift_scale, f64),
            ("eval", "char_size_samples") => set!(self.eval.char_size_samples, usize),
            ("eval", "strategy_images") => set!(self.eval.strategy_images, usize),
            ("eval", "grid_images") => set!(self.eval.grid_images, usize),
            ("eval", "grid_iterations") => set!(self.eval.grid_iterations, usize),
            ("eval", "grid_alphas") => {
                self.eval.grid_alphas = parse_list::<f64>(value).map_err(bad)?
            }
            ("eval", "grid_layers") => {
                self.eval.grid_layers = parse_list::<usize>(value).map_err(bad)?
            }
            ("eval", "influence_samples") => set!(self.eval.influence_samples, usize),
            ("eval", "model_quality_images") => set!(self.eval.model_quality_images, usize),
            ("eval", "knn_k") => set!(self.eval.knn_k, usize),
            ("eval", "pca_directions") => set!(self.eval.pca_directions, usize),
            ("", _) => {
                return Err(ConfigError::Parse {
                    line: 0,
                    message: format!("key {:?} appears before any section", key),
                })
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.generator_spec()
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.data.n_images == 0 {
            return Err(ConfigError::Invalid("data.n_images must be positive".into()));
        }
        if self.eval.knn_k == 0 {
            return Err(ConfigError::Invalid("eval.knn_k must be positive".into()));
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            z_dim: self.networks.z_dim,
            w_dim: self.networks.w_dim,
            base_resolution: self.networks.base_resolution,
            final_resolution: self.networks.final_resolution,
            channels: self.networks.channels.clone(),
            convs_per_resolution: self.networks.convs_per_resolution,
            n_randomized: self.networks.n_randomized,
            feature_seed: self.networks.feature_seed,
        }
    }

    pub fn train_config(&self, iterations: usize) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            iterations,
            lr_g: self.train.lr_g,
            lr_d: self.train.lr_d,
            r1_gamma: self.train.r1_gamma,
            r1_every: self.train.r1_every,
            seed: self.run.seed,
        }
    }

    /// Canonical serialization: every key, sorted, one per line.
    pub fn canonical(&self) -> String {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("run.seed", self.run.seed.to_string());
        put("data.n_images", self.data.n_images.to_string());
        put("data.size_jitter", fmt_f64(self.data.size_jitter));
        put("data.hue_jitter", fmt_f64(self.data.hue_jitter));
        put("data.background_jitter", fmt_f64(self.data.background_jitter));
        put("networks.z_dim", self.networks.z_dim.to_string());
        put("networks.w_dim", self.networks.w_dim.to_string());
        put("networks.base_resolution", self.networks.base_resolution.to_string());
        put("networks.final_resolution", self.networks.final_resolution.to_string());
        put("networks.channels", join_list(&self.networks.channels));
        put(
            "networks.convs_per_resolution",
            self.networks.convs_per_resolution.to_string(),
        );
        put("networks.n_randomized", self.networks.n_randomized.to_string());
        put("networks.feature_seed", self.networks.feature_seed.to_string());
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.pretrain_iterations", self.train.pretrain_iterations.to_string());
        put("train.wrangan_iterations", self.train.wrangan_iterations.to_string());
        put("train.encoder_iterations", self.train.encoder_iterations.to_string());
        put("train.lr_g", fmt_f64(self.train.lr_g));
        put("train.lr_d", fmt_f64(self.train.lr_d));
        put("train.r1_gamma", fmt_f64(self.train.r1_gamma));
        put("train.r1_every", self.train.r1_every.to_string());
        put("invert.iterations", self.invert.iterations.to_string());
        put("invert.lr", fmt_f64(self.invert.lr));
        put("invert.alpha_wrangan", fmt_f64(self.invert.alpha_wrangan));
        put("invert.alpha_simple", fmt_f64(self.invert.alpha_simple));
        put("invert.alpha_pti", fmt_f64(self.invert.alpha_pti));
        put("invert.eps_init", fmt_f64(self.invert.eps_init));
        put("eval.corruption_images", self.eval.corruption_images.to_string());
        put("eval.shift_scale", fmt_f64(self.eval.shift_scale));
        put("eval.char_size_samples", self.eval.char_size_samples.to_string());
        put("eval.strategy_images", self.eval.strategy_images.to_string());
        put("eval.grid_images", self.eval.grid_images.to_string());
        put("eval.grid_iterations", self.eval.grid_iterations.to_string());
        put(
            "eval.grid_alphas",
            self.eval.grid_alphas.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","),
        );
        put("eval.grid_layers", join_list(&self.eval.grid_layers));
        put("eval.influence_samples", self.eval.influence_samples.to_string());
        put("eval.model_quality_images", self.eval.model_quality_images.to_string());
        put("eval.knn_k", self.eval.knn_k.to_string());
        put("eval.pca_directions", self.eval.pca_directions.to_string());
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// FNV-1a hash of the canonical serialization, as 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{:016x}", h)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{:e}", v)
}

fn join_list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_hash_is_stable() {
        let cfg = Config::default();
        cfg.generator_spec().validate().unwrap();
        assert_eq!(cfg.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn overrides_apply() {
        let cfg = Config::parse("[run]\nseed = 99\n[networks]\nn_randomized = 4\n").unwrap();
        assert_eq!(cfg.run.seed, 99);
        assert_eq!(cfg.networks.n_randomized, 4);
        assert_ne!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let err = Config::parse("[run]\nsede = 99\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }), "{err}");
    }

    #[test]
    fn unknown_section_is_a_hard_error() {
        let err = Config::parse("[runs]\nseed = 99\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection { .. }), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = Config::parse("# comment\n\n[run]\nseed = 3 # trailing\n").unwrap();
        assert_eq!(cfg.run.seed, 3);
    }

    #[test]
    fn lists_parse() {
        let cfg =
            Config::parse("[eval]\ngrid_alphas = 1e-6, 1e-4\ngrid_layers = 4,8\n").unwrap();
        assert_eq!(cfg.eval.grid_alphas, vec![1e-6, 1e-4]);
        assert_eq!(cfg.eval.grid_layers, vec![4, 8]);
    }

    #[test]
    fn invalid_network_shape_is_rejected() {
        let err = Config::parse("[networks]\nchannels = 64,32\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    }
}

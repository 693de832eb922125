//! Checkpoint file format.
//!
//! Layout: the magic string `WRGN1`, a little-endian u64 manifest length,
//! the UTF-8 manifest, then the blob of f32 tensor data in little-endian
//! byte order. The manifest lists the format version, kind, config hash,
//! seed, free-form metadata and one line per tensor with shape, element
//! offset and element count. Loading validates the manifest before touching
//! the blob; round trips are bit-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;
use wrangan_core::invert::{
    DistortionReport, InversionResult, LatentCodes, Strategy,
};
use wrangan_core::params::ParamSet;
use wrangan_core::randparam::{EpsilonVector, RandEntry, RandomizedParamStore};
use wrangan_core::Tensor;

pub const MAGIC: &[u8; 5] = b"WRGN1";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic (not a checkpoint)")]
    BadMagic { path: String },
    #[error("{path}: format version {found}, this build reads {expected}")]
    Version { path: String, found: u64, expected: u64 },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: String, message: String },
    #[error("{path}: blob truncated: entry {entry} needs bytes {need}, file has {have}")]
    Truncated { path: String, entry: String, need: u64, have: u64 },
    #[error("{path}: unknown entry {entry} for {context}")]
    UnknownEntry { path: String, entry: String, context: String },
    #[error("{path}: missing entry {entry}")]
    MissingEntry { path: String, entry: String },
    #[error("{path}: checkpoint kind {found:?}, expected {expected:?}")]
    Kind { path: String, found: String, expected: String },
    #[error("{path}: config hash {found} does not match expected {expected}")]
    HashMismatch { path: String, found: String, expected: String },
}

type CkptResult<V> = Result<V, CheckpointError>;

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, config_hash: &str, seed: u64) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor<f32>) {
        self.tensors.push((name.to_string(), tensor));
    }

    pub fn tensor(&self, name: &str, path_for_err: &str) -> CkptResult<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingEntry {
                path: path_for_err.to_string(),
                entry: name.to_string(),
            })
    }

    pub fn save(&self, path: &Path) -> CkptResult<()> {
        let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
        let mut manifest = String::new();
        manifest.push_str(&format!("format_version={}\n", FORMAT_VERSION));
        manifest.push_str(&format!("kind={}\n", self.kind));
        manifest.push_str(&format!("config_hash={}\n", self.config_hash));
        manifest.push_str(&format!("seed={}\n", self.seed));
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta.{}={}\n", k, v));
        }
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!(
                "tensor={}|{}|{}|{}\n",
                name,
                shape.join(","),
                offset,
                t.numel()
            ));
            offset += t.numel() as u64;
        }
        let mut f = std::fs::File::create(path).map_err(io_err)?;
        f.write_all(MAGIC).map_err(io_err)?;
        f.write_all(&(manifest.len() as u64).to_le_bytes()).map_err(io_err)?;
        f.write_all(manifest.as_bytes()).map_err(io_err)?;
        let mut blob = Vec::with_capacity((offset as usize) * 4);
        for (_, t) in &self.tensors {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&blob).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CkptResult<Self> {
        let pstr = path.display().to_string();
        let io_err = |source| CheckpointError::Io { path: pstr.clone(), source };
        let mut f = std::fs::File::open(path).map_err(io_err)?;
        let mut magic = [0u8; 5];
        f.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic { path: pstr });
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes).map_err(io_err)?;
        let manifest_len = u64::from_le_bytes(len_bytes) as usize;
        let mut manifest_bytes = vec![0u8; manifest_len];
        f.read_exact(&mut manifest_bytes).map_err(io_err)?;
        let manifest = String::from_utf8(manifest_bytes).map_err(|e| {
            CheckpointError::Manifest { path: pstr.clone(), message: e.to_string() }
        })?;
        let mut blob = Vec::new();
        f.read_to_end(&mut blob).map_err(io_err)?;
        let blob_elems = (blob.len() / 4) as u64;

        let mut out = Checkpoint::default();
        let mut entries: Vec<(String, Vec<usize>, u64, u64)> = Vec::new();
        for line in manifest.lines() {
            let (key, value) = line.split_once('=').ok_or_else(|| CheckpointError::Manifest {
                path: pstr.clone(),
                message: format!("line without '=': {:?}", line),
            })?;
            match key {
                "format_version" => {
                    let found = value.parse::<u64>().map_err(|e| CheckpointError::Manifest {
                        path: pstr.clone(),
                        message: e.to_string(),
                    })?;
                    if found != FORMAT_VERSION {
                        return Err(CheckpointError::Version {
                            path: pstr,
                            found,
                            expected: FORMAT_VERSION,
                        });
                    }
                }
                "kind" => out.kind = value.to_string(),
                "config_hash" => out.config_hash = value.to_string(),
                "seed" => {
                    out.seed = value.parse().map_err(|e: std::num::ParseIntError| {
                        CheckpointError::Manifest { path: pstr.clone(), message: e.to_string() }
                    })?
                }
                "tensor" => {
                    let parts: Vec<&str> = value.split('|').collect();
                    if parts.len() != 4 {
                        return Err(CheckpointError::Manifest {
                            path: pstr,
                            message: format!("tensor entry needs 4 fields: {:?}", value),
                        });
                    }
                    let shape: Result<Vec<usize>, _> =
                        parts[1].split(',').map(|d| d.parse::<usize>()).collect();
                    let shape = shape.map_err(|e| CheckpointError::Manifest {
                        path: pstr.clone(),
                        message: e.to_string(),
                    })?;
                    let offset: u64 = parts[2].parse().map_err(|e: std::num::ParseIntError| {
                        CheckpointError::Manifest { path: pstr.clone(), message: e.to_string() }
                    })?;
                    let numel: u64 = parts[3].parse().map_err(|e: std::num::ParseIntError| {
                        CheckpointError::Manifest { path: pstr.clone(), message: e.to_string() }
                    })?;
                    entries.push((parts[0].to_string(), shape, offset, numel));
                }
                k if k.starts_with("meta.") => {
                    out.meta.insert(k["meta.".len()..].to_string(), value.to_string());
                }
                other => {
                    return Err(CheckpointError::Manifest {
                        path: pstr,
                        message: format!("unknown manifest key {:?}", other),
                    })
                }
            }
        }
        for (name, shape, offset, numel) in entries {
            let expect: usize = shape.iter().product();
            if expect as u64 != numel {
                return Err(CheckpointError::Manifest {
                    path: pstr,
                    message: format!(
                        "entry {} shape {:?} disagrees with element count {}",
                        name, shape, numel
                    ),
                });
            }
            if offset + numel > blob_elems {
                return Err(CheckpointError::Truncated {
                    path: pstr,
                    entry: name,
                    need: (offset + numel) * 4,
                    have: blob.len() as u64,
                });
            }
            let start = (offset as usize) * 4;
            let data: Vec<f32> = blob[start..start + (numel as usize) * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            out.tensors.push((name, Tensor::new(&shape, data)));
        }
        Ok(out)
    }

    /// Load and validate kind (and config hash when provided).
    pub fn load_expect(
        path: &Path,
        kind: &str,
        config_hash: Option<&str>,
    ) -> CkptResult<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.kind != kind {
            return Err(CheckpointError::Kind {
                path: path.display().to_string(),
                found: ckpt.kind,
                expected: kind.to_string(),
            });
        }
        if let Some(expected) = config_hash {
            if ckpt.config_hash != expected {
                return Err(CheckpointError::HashMismatch {
                    path: path.display().to_string(),
                    found: ckpt.config_hash,
                    expected: expected.to_string(),
                });
            }
        }
        Ok(ckpt)
    }
}

// ---- typed wrappers ---------------------------------------------------------

pub fn params_to_checkpoint(
    kind: &str,
    params: &ParamSet<f32>,
    config_hash: &str,
    seed: u64,
) -> Checkpoint {
    let mut ckpt = Checkpoint::new(kind, config_hash, seed);
    for (name, t) in params.iter() {
        ckpt.push(name, t.clone());
    }
    ckpt
}

pub fn params_from_checkpoint(ckpt: &Checkpoint) -> ParamSet<f32> {
    let mut p = ParamSet::new();
    for (name, t) in &ckpt.tensors {
        p.insert(name, t.clone());
    }
    p
}

const MU_PREFIX: &str = "rand.mu.";
const LS_PREFIX: &str = "rand.log_sigma.";
const FROZEN_PREFIX: &str = "frozen.";

pub fn store_to_checkpoint(
    store: &RandomizedParamStore<f32>,
    config_hash: &str,
    seed: u64,
) -> Checkpoint {
    let mut ckpt = Checkpoint::new("wrangan", config_hash, seed);
    ckpt.meta.insert("randomized_entries".into(), store.entries.len().to_string());
    for e in &store.entries {
        ckpt.push(&format!("{}{}", MU_PREFIX, e.name), e.mu.clone());
        ckpt.push(&format!("{}{}", LS_PREFIX, e.name), e.log_sigma.clone());
    }
    for (name, t) in store.frozen.iter() {
        ckpt.push(&format!("{}{}", FROZEN_PREFIX, name), t.clone());
    }
    ckpt
}

pub fn store_from_checkpoint(
    ckpt: &Checkpoint,
    path_for_err: &str,
) -> CkptResult<RandomizedParamStore<f32>> {
    let mut entries: Vec<RandEntry<f32>> = Vec::new();
    let mut frozen = ParamSet::new();
    for (name, t) in &ckpt.tensors {
        if let Some(layer) = name.strip_prefix(MU_PREFIX) {
            entries.push(RandEntry {
                name: layer.to_string(),
                mu: t.clone(),
                log_sigma: Tensor::zeros(t.shape()),
            });
        } else if name.strip_prefix(LS_PREFIX).is_some() {
            // paired below
        } else if let Some(f) = name.strip_prefix(FROZEN_PREFIX) {
            frozen.insert(f, t.clone());
        } else {
            return Err(CheckpointError::UnknownEntry {
                path: path_for_err.to_string(),
                entry: name.clone(),
                context: "wrangan store".to_string(),
            });
        }
    }
    for e in entries.iter_mut() {
        let ls_name = format!("{}{}", LS_PREFIX, e.name);
        e.log_sigma = ckpt.tensor(&ls_name, path_for_err)?.clone();
    }
    Ok(RandomizedParamStore { entries, frozen })
}

pub fn inversion_to_checkpoint(
    result: &InversionResult<f32>,
    config_hash: &str,
    seed: u64,
) -> Checkpoint {
    let mut ckpt = Checkpoint::new("inversion", config_hash, seed);
    ckpt.meta.insert("strategy".into(), result.strategy.name().to_string());
    ckpt.meta.insert("store_fingerprint".into(), result.store_fingerprint.to_string());
    ckpt.meta.insert("params_optimized".into(), result.params_optimized.to_string());
    ckpt.meta.insert("mse".into(), format!("{:e}", result.distortion.mse));
    ckpt.meta.insert("perceptual".into(), format!("{:e}", result.distortion.perceptual));
    ckpt.meta.insert("ms_ssim".into(), format!("{:e}", result.distortion.ms_ssim));
    match &result.codes {
        LatentCodes::Single(w) => ckpt.push("code", w.clone()),
        LatentCodes::PerLayer(ws) => {
            for (i, w) in ws.iter().enumerate() {
                ckpt.push(&format!("code.{}", i), w.clone());
            }
        }
    }
    if let Some(eps) = &result.epsilon {
        for (i, e) in eps.entries.iter().enumerate() {
            ckpt.push(&format!("eps.{}", i), e.clone());
        }
    }
    for (name, t) in result.final_weights.iter() {
        ckpt.push(&format!("weights.{}", name), t.clone());
    }
    ckpt.push("final_image", result.final_image.clone());
    ckpt
}

/// Rebuild an inversion result. The loss trace is not persisted; editing,
/// interpolation and epsilon statistics do not need it.
pub fn inversion_from_checkpoint(
    ckpt: &Checkpoint,
    path_for_err: &str,
) -> CkptResult<InversionResult<f32>> {
    let manifest_err = |message: String| CheckpointError::Manifest {
        path: path_for_err.to_string(),
        message,
    };
    let strategy_name = ckpt
        .meta
        .get("strategy")
        .ok_or_else(|| manifest_err("missing meta.strategy".into()))?;
    let strategy = Strategy::parse(strategy_name)
        .ok_or_else(|| manifest_err(format!("unknown strategy {:?}", strategy_name)))?;
    let meta_f64 = |key: &str| -> CkptResult<f64> {
        ckpt.meta
            .get(key)
            .ok_or_else(|| manifest_err(format!("missing meta.{}", key)))?
            .parse::<f64>()
            .map_err(|e| manifest_err(format!("meta.{}: {}", key, e)))
    };

    let mut per_layer: Vec<(usize, Tensor<f32>)> = Vec::new();
    let mut single: Option<Tensor<f32>> = None;
    let mut eps: Vec<(usize, Tensor<f32>)> = Vec::new();
    let mut weights = ParamSet::new();
    let mut final_image = None;
    for (name, t) in &ckpt.tensors {
        if name == "code" {
            single = Some(t.clone());
        } else if let Some(i) = name.strip_prefix("code.") {
            let idx = i.parse::<usize>().map_err(|e| manifest_err(e.to_string()))?;
            per_layer.push((idx, t.clone()));
        } else if let Some(i) = name.strip_prefix("eps.") {
            let idx = i.parse::<usize>().map_err(|e| manifest_err(e.to_string()))?;
            eps.push((idx, t.clone()));
        } else if let Some(w) = name.strip_prefix("weights.") {
            weights.insert(w, t.clone());
        } else if name == "final_image" {
            final_image = Some(t.clone());
        } else {
            return Err(CheckpointError::UnknownEntry {
                path: path_for_err.to_string(),
                entry: name.clone(),
                context: "inversion result".to_string(),
            });
        }
    }
    let codes = if let Some(w) = single {
        LatentCodes::Single(w)
    } else {
        per_layer.sort_by_key(|(i, _)| *i);
        LatentCodes::PerLayer(per_layer.into_iter().map(|(_, t)| t).collect())
    };
    eps.sort_by_key(|(i, _)| *i);
    let epsilon = if eps.is_empty() {
        None
    } else {
        Some(EpsilonVector { entries: eps.into_iter().map(|(_, t)| t).collect() })
    };
    Ok(InversionResult {
        strategy,
        codes,
        epsilon,
        final_weights: weights,
        loss_trace: Vec::new(),
        distortion: DistortionReport {
            mse: meta_f64("mse")?,
            perceptual: meta_f64("perceptual")?,
            ms_ssim: meta_f64("ms_ssim")?,
        },
        final_image: final_image
            .ok_or_else(|| manifest_err("missing final_image".into()))?,
        store_fingerprint: ckpt
            .meta
            .get("store_fingerprint")
            .ok_or_else(|| manifest_err("missing meta.store_fingerprint".into()))?
            .parse()
            .map_err(|e: std::num::ParseIntError| manifest_err(e.to_string()))?,
        params_optimized: ckpt
            .meta
            .get("params_optimized")
            .map(|v| v.parse().unwrap_or(0))
            .unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use wrangan_core::rng::SeedHub;

    fn sample_params() -> ParamSet<f32> {
        let hub = SeedHub::new(8);
        let mut s = hub.stream("p");
        let mut p = ParamSet::new();
        p.insert("a.weight", s.normal_tensor(&[4, 3]));
        p.insert("a.bias", s.normal_tensor(&[4]));
        p.insert("b.weight", s.normal_tensor(&[2, 4, 3, 3]));
        p
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let params = sample_params();
        let ckpt = params_to_checkpoint("base", &params, "deadbeef00000000", 5);
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind, "base");
        assert_eq!(back.seed, 5);
        assert_eq!(back.config_hash, "deadbeef00000000");
        let restored = params_from_checkpoint(&back);
        assert_eq!(restored.fingerprint(), params.fingerprint());
        // manifest entry count matches the tensor count of the source
        assert_eq!(back.tensors.len(), params.len());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        params_to_checkpoint("base", &sample_params(), "h", 1).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        params_to_checkpoint("base", &sample_params(), "h", 1).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 13]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn version_mismatch_reports_both_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let ckpt = Checkpoint::new("base", "h", 0);
        ckpt.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // manifest begins right after magic + u64; rewrite the version digit
        let pos = 5 + 8 + "format_version=".len();
        bytes[pos] = b'9';
        std::fs::write(&path, bytes).unwrap();
        match Checkpoint::load(&path) {
            Err(CheckpointError::Version { found, expected, .. }) => {
                assert_eq!(found, 9);
                assert_eq!(expected, FORMAT_VERSION);
            }
            other => panic!("expected version error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn kind_and_hash_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        params_to_checkpoint("base", &sample_params(), "abc", 1).save(&path).unwrap();
        assert!(Checkpoint::load_expect(&path, "encoder", None).is_err());
        assert!(Checkpoint::load_expect(&path, "base", Some("abc")).is_ok());
        assert!(matches!(
            Checkpoint::load_expect(&path, "base", Some("zzz")),
            Err(CheckpointError::HashMismatch { .. })
        ));
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let params = sample_params();
        let store = RandomizedParamStore::from_deterministic(
            &params,
            &["a.weight".to_string(), "a.bias".to_string()],
        );
        store_to_checkpoint(&store, "h", 2).save(&path).unwrap();
        let back =
            store_from_checkpoint(&Checkpoint::load(&path).unwrap(), "s.ckpt").unwrap();
        assert_eq!(back.fingerprint(), store.fingerprint());
        assert_eq!(back.entries.len(), 2);
    }
}

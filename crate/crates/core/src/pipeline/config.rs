//! The resolved configuration shared by every command, plus output
//! directory and provenance handling.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PiddError, Result};
use crate::learned::{NetworkConfig, TrainConfig};
use crate::recon::ReconConfig;
use crate::synth::dataset::{read_json, write_json, SynthesisSpec, INCOMPLETE_MARKER};

pub const CONFIG_SCHEMA: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
/// Environment variable consulted when no `--seed` flag is given.
pub const SEED_ENV: &str = "PIDD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Samples written by `synth`.
    pub count: u64,
    pub synth: SynthesisSpec,
    pub recon: ReconConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA,
            seed: 0,
            count: 100,
            synth: SynthesisSpec::default(),
            recon: ReconConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PiddError::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PiddError::InvalidConfig(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            return Err(PiddError::InvalidConfig(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// File contents if a path is given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
    }
}

/// Explicit flag, then the `PIDD_SEED` environment variable, then `fallback`.
pub fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| PiddError::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}

/// Create `dir` for a fresh run. An existing non-empty directory is an
/// error unless `force` is set, in which case it is replaced.
pub fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir).map_err(|e| PiddError::io(dir, e))?.next().is_some();
        if nonempty && !force {
            return Err(PiddError::InvalidConfig(format!(
                "output {} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| PiddError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| PiddError::io(dir, e))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, b"").map_err(|e| PiddError::io(&marker, e))
}

pub fn mark_complete(dir: &Path) -> Result<()> {
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::remove_file(&marker).map_err(|e| PiddError::io(&marker, e))
}

pub fn require_complete(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(PiddError::InvalidInput(format!("{} does not exist", dir.display())));
    }
    if dir.join(INCOMPLETE_MARKER).exists() {
        return Err(PiddError::InvalidInput(format!("{} is incomplete", dir.display())));
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PiddError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of several files, in the given order.
pub fn sha256_files(paths: &[std::path::PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(fs::read(p).map_err(|e| PiddError::io(p, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub config_sha256: String,
    /// Input role to content hash.
    pub inputs: BTreeMap<String, String>,
}

/// Write `config.json` and `provenance.json` into `dir`.
pub fn write_provenance(
    dir: &Path,
    command: &str,
    cfg: &PipelineConfig,
    inputs: BTreeMap<String, String>,
) -> Result<()> {
    let cfg_path = dir.join(CONFIG_FILE);
    write_json(&cfg_path, cfg)?;
    let prov = Provenance {
        command: command.into(),
        config_sha256: sha256_file(&cfg_path)?,
        inputs,
    };
    write_json(&dir.join(PROVENANCE_FILE), &prov)
}

pub fn read_provenance(dir: &Path) -> Result<Provenance> {
    read_json(&dir.join(PROVENANCE_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_and_schema_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"schema_version": 1, "bogus": 3}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(PiddError::InvalidConfig(_))));
        fs::write(&p, r#"{"schema_version": 7}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(PiddError::InvalidConfig(_))));
        fs::write(&p, r#"{"recon": {"iters": 7}}"#).unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.recon.iters, 7);
        assert_eq!(cfg.network, NetworkConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            seed: 9,
            ..PipelineConfig::default()
        };
        write_provenance(dir.path(), "test", &cfg, BTreeMap::new()).unwrap();
        assert_eq!(PipelineConfig::load(&dir.path().join(CONFIG_FILE)).unwrap(), cfg);
        let prov = read_provenance(dir.path()).unwrap();
        assert_eq!(prov.config_sha256, sha256_file(&dir.path().join(CONFIG_FILE)).unwrap());
    }

    #[test]
    fn output_directories_need_force() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        prepare_output(&out, false).unwrap();
        assert!(require_complete(&out).is_err());
        mark_complete(&out).unwrap();
        require_complete(&out).unwrap();
        fs::write(out.join("x"), b"1").unwrap();
        assert!(matches!(prepare_output(&out, false), Err(PiddError::InvalidConfig(_))));
        prepare_output(&out, true).unwrap();
        assert!(!out.join("x").exists());
    }

    #[test]
    fn explicit_seed_wins() {
        assert_eq!(resolve_seed(Some(4), 1).unwrap(), 4);
    }
}

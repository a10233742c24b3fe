//! Run configuration files. Anything structural lives in JSON; flags only
//! override scalars (seed, paths, fractions), so a run is reproducible from
//! its config alone.

use std::path::{Path, PathBuf};

use hepa_core::data::generate_synthetic;
use hepa_core::Result;
use hepa_core::{Dataset, DatasetSpec, FinetuneConfig, HepaError, PretrainConfig, SyntheticSpec};
use serde::{Deserialize, Serialize};

/// Where episodes come from: a CSV pair on disk or the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv(DatasetSpec),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    /// Resolves relative CSV paths against `HEPA_DATA_DIR` when set.
    pub fn resolve(&mut self, root: Option<&Path>) {
        if let (DataSource::Csv(spec), Some(root)) = (&mut *self, root) {
            for p in [&mut spec.train_csv].into_iter().chain(spec.test_csv.as_mut()) {
                if p.is_relative() {
                    *p = root.join(&p);
                }
            }
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv(spec) => Dataset::load(spec),
            DataSource::Synthetic(spec) => Ok(generate_synthetic(spec)),
        }
    }

    pub fn rul_cap(&self) -> Option<usize> {
        match self {
            DataSource::Csv(spec) => spec.rul_cap,
            DataSource::Synthetic(_) => None,
        }
    }
}

pub fn data_root() -> Option<PathBuf> {
    std::env::var_os("HEPA_DATA_DIR").map(PathBuf::from)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainRun {
    pub data: DataSource,
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneRun {
    pub data: DataSource,
    pub finetune: FinetuneConfig,
    /// Pretrained weights; `--checkpoint` overrides.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRun {
    pub data: DataSource,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_fractions() -> Vec<f64> {
    vec![1.0, 0.10, 0.05, 0.02, 0.01]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelCurveRun {
    pub data: DataSource,
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Label fractions to visit; 1.0 is required (retention denominator).
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Parses a JSON config file into any of the run types, with the raw bytes
/// returned for config hashing.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| HepaError::config(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = serde_json::from_slice(&bytes)
        .map_err(|e| HepaError::config(format!("{}: {e}", path.display())))?;
    Ok((parsed, bytes))
}

/// `--seeds 0,1,2` style lists.
pub fn parse_seed_list(raw: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| HepaError::config(format!("bad seed {s:?} in seed list")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(HepaError::config("empty seed list"));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_source_json_shapes() {
        let syn: DataSource = serde_json::from_str(
            r#"{"synthetic": {"n_episodes": 4, "channels": 2, "steps": 50,
                "beta": 2.0, "noise": 0.1, "hazard_base": 0.5, "seed": 7}}"#,
        )
        .unwrap();
        assert!(matches!(syn, DataSource::Synthetic(_)));
        let csv: DataSource =
            serde_json::from_str(r#"{"csv": {"name": "d", "train_csv": "train.csv", "k": 8}}"#).unwrap();
        assert!(matches!(csv, DataSource::Csv(_)));
    }

    #[test]
    fn relative_paths_pick_up_the_data_root() {
        let mut src: DataSource = serde_json::from_str(
            r#"{"csv": {"name": "d", "train_csv": "sub/train.csv", "test_csv": "/abs/test.csv", "k": 8}}"#,
        )
        .unwrap();
        src.resolve(Some(Path::new("/data")));
        let DataSource::Csv(spec) = &src else { unreachable!() };
        assert_eq!(spec.train_csv, Path::new("/data/sub/train.csv"));
        assert_eq!(spec.test_csv.as_deref(), Some(Path::new("/abs/test.csv")));
    }

    #[test]
    fn seed_lists_parse_and_reject_junk() {
        assert_eq!(parse_seed_list("0,1,2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seed_list(" 5 ").unwrap(), vec![5]);
        assert!(parse_seed_list("1,x").is_err());
        assert!(parse_seed_list("").is_err());
    }
}

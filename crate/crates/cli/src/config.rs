//! Optional JSON run configuration; command-line flags take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use snippetgraph_core::{Error, Result};

/// Every field mirrors the flag of the same name with dashes as underscores.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub raw_scores: Option<PathBuf>,
    pub subset: Option<String>,
    pub seed: Option<u64>,

    pub preset: Option<String>,
    pub width: Option<usize>,
    pub cardinality: Option<usize>,
    pub blocks: Option<usize>,
    pub k_neighbors: Option<usize>,
    pub tau1: Option<usize>,
    pub tau2: Option<usize>,
    pub max_duration: Option<usize>,
    pub hidden: Option<[usize; 2]>,
    pub rescale_len: Option<usize>,
    pub window_len: Option<usize>,
    pub stride: Option<usize>,

    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub lr_drop: Option<f64>,
    pub batch_size: Option<usize>,
    pub lambda_reg: Option<f64>,
    pub lambda_l2: Option<f64>,

    pub alpha: Option<f64>,
    pub nms_method: Option<String>,
    pub nms_threshold: Option<f64>,
    pub nms_sigma: Option<f64>,
    pub top_m: Option<usize>,
    pub class_agnostic: Option<bool>,
    pub thresholds: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// Flag value, else file value.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

/// Flag value, else file value, else an error naming the flag.
pub fn require<T: Clone>(flag: &Option<T>, file: &Option<T>, name: &str) -> Result<T> {
    pick(flag, file).ok_or_else(|| Error::Config(format!("missing required --{name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win() {
        assert_eq!(pick(&Some(3), &Some(4)), Some(3));
        assert_eq!(pick(&None, &Some(4)), Some(4));
        assert_eq!(pick::<u8>(&None, &None), None);
        assert!(require::<u8>(&None, &None, "manifest").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"seed": 3}"#).is_ok());
        assert!(serde_json::from_str::<FileConfig>(r#"{"sede": 3}"#).is_err());
    }
}

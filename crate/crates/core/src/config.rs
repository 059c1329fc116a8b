//! Run configuration, read from TOML.
//!
//! ```toml
//! [data]
//! pairs = "pairs.tsv"      # query \t label_id [\t count]
//! catalog = "labels.tsv"   # optional: label_id \t title
//! test = "test.tsv"        # optional: query \t id1,id2,...
//! threshold = 1.0
//!
//! [vectorizer]
//! max_unigrams = 1000000
//! max_bigrams = 3000000
//! max_char_trigrams = 200000
//! lowercase = true
//!
//! [tree]
//! branching = 32
//! max_leaf = 100
//! seed = 0
//!
//! [train]
//! lambda = 1.0
//! solver_tol = 0.1
//! neg_sampling = "tfn"     # or "full"
//! prune_epsilon = 0.1
//! seed = 0
//!
//! [inference]
//! activation = "l3-hinge"  # or "sigmoid"
//! beam = 10
//! k = 100
//! ```
//!
//! Every section and key is optional. Relative data paths are resolved
//! against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::indexer::TreeConfig;
use crate::inference::Activation;
use crate::text::VectorizerConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pairs: None,
            catalog: None,
            test: None,
            threshold: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub activation: Activation,
    pub beam: usize,
    pub k: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            activation: Activation::L3Hinge,
            beam: 10,
            k: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub vectorizer: VectorizerConfig,
    pub tree: TreeConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|msg| Error::Config(vec![format!("{}: {}", path.display(), msg.trim_end())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.pairs, &mut cfg.data.catalog, &mut cfg.data.test]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.data.threshold.is_finite() && self.data.threshold > 0.0) {
            errs.push(format!("data.threshold must be > 0, got {}", self.data.threshold));
        }
        if let Err(e) = self.tree.validate() {
            errs.extend(e);
        }
        if let Err(e) = self.train.validate() {
            errs.extend(e);
        }
        if self.inference.beam == 0 {
            errs.push("inference.beam must be >= 1".to_string());
        }
        if self.inference.k == 0 {
            errs.push("inference.k must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// The settings that determine a trained model, without file locations.
    /// This is what a model directory records, so models trained from the
    /// same inputs match regardless of where those inputs live.
    pub fn model_echo(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.data.pairs = None;
        c.data.catalog = None;
        c.data.test = None;
        c
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::NegativeSampling;

    #[test]
    fn empty_config_uses_defaults() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.tree.branching, 32);
        assert_eq!(c.tree.max_leaf, 100);
        assert_eq!(c.train.neg_sampling, NegativeSampling::Tfn);
        assert_eq!(c.inference.activation, Activation::L3Hinge);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.data.pairs = Some("x/pairs.tsv".into());
        c.train.neg_sampling = NegativeSampling::Full;
        c.inference.activation = Activation::Sigmoid;
        c.train.lambda = 0.5;
        let back = PipelineConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation_lists_every_violation() {
        let c = PipelineConfig::from_toml_str(
            "[tree]\nbranching = 1\nmax_leaf = 0\n[train]\nlambda = -1.0\n[inference]\nbeam = 0\n",
        )
        .unwrap();
        match c.validate() {
            Err(Error::Config(errs)) => {
                assert_eq!(errs.len(), 4, "{errs:?}");
                for key in ["tree.branching", "tree.max_leaf", "train.lambda", "inference.beam"] {
                    assert!(errs.iter().any(|e| e.contains(key)), "{key} missing in {errs:?}");
                }
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("[tree]\nbranchng = 4\n").is_err());
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

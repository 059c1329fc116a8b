//! On-disk model directories and run manifests.
//!
//! A model directory holds:
//!
//! ```text
//! manifest.json    format name and version, shapes, hashes of every file
//! config.toml      effective settings (without input file locations)
//! vocab.txt        vectorizer vocabulary
//! chain.txt        label tree
//! labels.tsv       internal -> external label ids
//! layer-<t>.csc    weights of layer t, binary CSC
//! ```
//!
//! Nothing time- or host-dependent is written, so the same inputs and
//! settings produce byte-identical directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{file_sha256, sha256_hex, PipelineConfig};
use crate::data::{self, LabelMap};
use crate::error::{Error, Result};
use crate::indexer::ClusterChain;
use crate::inference::Model;
use crate::text::Vocabulary;
use crate::train::{prune, LayeredWeights};

pub const MODEL_FORMAT: &str = "treematch-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const RUN_FORMAT: &str = "treematch-run";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub activation: String,
    pub default_beam: usize,
    pub dim: usize,
    pub n_labels: usize,
    pub layers: Vec<LayerInfo>,
    pub prune_epsilon: f64,
    pub config_sha256: String,
    /// Hashes of the data the model was trained from.
    pub inputs: BTreeMap<String, String>,
    /// Hashes of every other file in the directory.
    pub files: BTreeMap<String, String>,
}

/// Everything needed to answer raw-text queries.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub model: Model,
    pub vocab: Vocabulary,
    pub labels: LabelMap,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, String>,
}

fn layer_file(t: usize) -> String {
    format!("layer-{t}.csc")
}

impl ModelBundle {
    /// Writes the bundle into `dir`, creating it if needed and replacing any
    /// model files already there.
    pub fn save(&self, dir: &Path) -> Result<ModelManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Ok(entries) = fs::read_dir(dir) {
            for entry in entries.flatten() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.starts_with("layer-") && name.ends_with(".csc") {
                    let p = entry.path();
                    fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }

        let config = self.config.model_echo();
        let weights = self.model.weights();
        let mut blobs: Vec<(String, Vec<u8>)> = vec![
            ("config.toml".into(), config.to_toml().into_bytes()),
            ("vocab.txt".into(), self.vocab.to_text().into_bytes()),
            ("chain.txt".into(), self.model.chain().to_text().into_bytes()),
            ("labels.tsv".into(), self.labels.to_text().into_bytes()),
        ];
        for (t, w) in weights.layers().iter().enumerate() {
            blobs.push((layer_file(t + 1), data::csc_to_bytes(w)));
        }

        let mut files = BTreeMap::new();
        for (name, bytes) in &blobs {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            files.insert(name.clone(), sha256_hex(bytes));
        }
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            tool_version: TOOL_VERSION.into(),
            activation: self.model.activation().name().into(),
            default_beam: self.model.default_beam(),
            dim: self.model.dim(),
            n_labels: self.model.n_labels(),
            layers: weights
                .layers()
                .iter()
                .map(|w| LayerInfo {
                    rows: w.n_rows(),
                    cols: w.n_cols(),
                    nnz: w.nnz(),
                })
                .collect(),
            prune_epsilon: config.train.prune_epsilon,
            config_sha256: config.sha256(),
            inputs: self.inputs.clone(),
            files,
        };
        let p = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }

    /// Loads a model directory, checking the format version and every file
    /// hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        for (name, hash) in &manifest.files {
            let p = dir.join(name);
            if &file_sha256(&p)? != hash {
                return Err(Error::format(&p, "content does not match the manifest hash"));
            }
        }
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let config = PipelineConfig::from_toml_str(&read("config.toml")?)
            .map_err(|m| Error::format(dir.join("config.toml"), m))?;
        let vocab = Vocabulary::from_text(&read("vocab.txt")?).map_err(|m| Error::format(dir.join("vocab.txt"), m))?;
        let chain =
            ClusterChain::from_text(&read("chain.txt")?).map_err(|m| Error::format(dir.join("chain.txt"), m))?;
        let labels = LabelMap::load(&dir.join("labels.tsv"))?;
        let layers = (1..=manifest.layers.len())
            .map(|t| data::read_csc(&dir.join(layer_file(t))))
            .collect::<Result<Vec<_>>>()?;
        let weights = LayeredWeights::new(layers)?;
        let activation = manifest
            .activation
            .parse()
            .map_err(|e: Error| Error::format(dir.join("manifest.json"), e.to_string()))?;
        if labels.len() != chain.n_labels() || vocab.dim() != weights.dim() {
            return Err(Error::format(dir, "label map, vocabulary and weights disagree in shape"));
        }
        let model = Model::new(&weights, chain, activation, manifest.default_beam)?;
        Ok(Self {
            model,
            vocab,
            labels,
            config,
            inputs: manifest.inputs,
        })
    }

    /// A copy whose weights are thresholded at `max(current, epsilon)`.
    pub fn pruned(&self, epsilon: f64) -> Result<Self> {
        let eps = self.config.train.prune_epsilon.max(epsilon);
        let weights = prune(&self.model.weights(), eps);
        let model = Model::new(
            &weights,
            self.model.chain().clone(),
            self.model.activation(),
            self.model.default_beam(),
        )?;
        let mut config = self.config.clone();
        config.train.prune_epsilon = eps;
        Ok(Self {
            model,
            config,
            ..self.clone()
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&p, "missing model manifest"),
        _ => Error::io(&p, e),
    })?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&p, format!("unreadable manifest: {e}")))?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::format(&p, format!("not a model manifest (format {:?})", manifest.format)));
    }
    if manifest.version != MODEL_FORMAT_VERSION {
        return Err(Error::format(
            &p,
            format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                manifest.version
            ),
        ));
    }
    Ok(manifest)
}

/// Provenance record written next to the output of every command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            format: RUN_FORMAT.into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            ..Self::default()
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    /// Records the hash of an input file under `key`.
    pub fn input(mut self, key: &str, path: &Path) -> Result<Self> {
        self.inputs.insert(key.into(), file_sha256(path)?);
        Ok(self)
    }

    pub fn output(mut self, key: &str, path: &Path) -> Result<Self> {
        self.outputs.insert(key.into(), file_sha256(path)?);
        Ok(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

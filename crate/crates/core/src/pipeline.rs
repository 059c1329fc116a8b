//! End-to-end steps shared by the command-line tool and the tests:
//! vectorize, index, train, predict, evaluate.

use std::collections::{BTreeMap, HashSet};

use crate::config::PipelineConfig;
use crate::data::{IngestedData, LabelMap, TestQuery};
use crate::error::Result;
use crate::eval::{mean_recall, InvertedIndex, RecallSummary};
use crate::indexer::{build_tree, pifa_embeddings, ClusterChain};
use crate::inference::{Model, Prediction};
use crate::model_dir::ModelBundle;
use crate::par::Executor;
use crate::sparse::{CsrMatrix, SparseVector};
use crate::text::Vocabulary;
use crate::train::{train, TrainReport};

/// Fits the vocabulary on the training queries and featurizes them.
pub fn featurize(data: &IngestedData, config: &PipelineConfig, executor: &Executor) -> Result<(Vocabulary, CsrMatrix)> {
    let vocab = Vocabulary::fit_with(&data.queries, &config.vectorizer, executor)?;
    let x = vocab.transform_batch(&data.queries, executor);
    Ok((vocab, x))
}

/// Builds the label tree from PIFA embeddings of the training data.
pub fn index_labels(x: &CsrMatrix, y: &CsrMatrix, config: &PipelineConfig, executor: &Executor) -> Result<ClusterChain> {
    let z = pifa_embeddings(x, y, executor)?;
    build_tree(&z, &config.tree, executor)
}

/// Trains a model from already-prepared parts.
pub fn train_model(
    vocab: Vocabulary,
    x: &CsrMatrix,
    data: &IngestedData,
    chain: ClusterChain,
    config: &PipelineConfig,
    inputs: BTreeMap<String, String>,
    executor: &Executor,
) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    let (weights, report) = train(x, &data.y, &chain, &config.train, executor)?;
    let model = Model::new(&weights, chain, config.inference.activation, config.inference.beam)?;
    let bundle = ModelBundle {
        model,
        vocab,
        labels: data.labels.clone(),
        config: config.clone(),
        inputs,
    };
    Ok((bundle, report))
}

/// Vectorizer, tree and weights in one go.
pub fn fit(
    data: &IngestedData,
    config: &PipelineConfig,
    inputs: BTreeMap<String, String>,
    executor: &Executor,
) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    let (vocab, x) = featurize(data, config, executor)?;
    let chain = index_labels(&x, &data.y, config, executor)?;
    train_model(vocab, &x, data, chain, config, inputs, executor)
}

impl ModelBundle {
    pub fn featurize(&self, texts: &[String], executor: &Executor) -> Vec<SparseVector> {
        let vocab = &self.vocab;
        executor.map(texts.len(), |i| vocab.transform(&texts[i]))
    }

    pub fn predict(&self, texts: &[String], beam: usize, k: usize, executor: &Executor) -> Vec<Prediction> {
        let queries = self.featurize(texts, executor);
        self.model.batch_predict(&queries, beam, k, executor)
    }
}

/// Maps external relevant ids onto the label space of `labels`. Ids the map
/// does not know get fresh ids past the end, so they count towards `|y|` but
/// can never be retrieved.
pub fn truth_sets(test: &[TestQuery], labels: &LabelMap) -> Vec<HashSet<u32>> {
    let mut extended = labels.clone();
    test.iter()
        .map(|q| q.relevant.iter().map(|id| extended.intern(id)).collect())
        .collect()
}

pub fn evaluate_predictions(
    predictions: &[Prediction],
    test: &[TestQuery],
    labels: &LabelMap,
    ks: &[usize],
) -> RecallSummary {
    mean_recall(predictions, &truth_sets(test, labels), ks)
}

/// BM25 over a label catalog. Doc ids are catalog positions, which are the
/// internal ids of the returned label map.
pub struct Bm25Baseline {
    pub index: InvertedIndex,
    pub labels: LabelMap,
}

impl Bm25Baseline {
    pub fn new(labels: LabelMap, titles: &[String], config: &PipelineConfig) -> Result<Self> {
        let index = InvertedIndex::build(titles, Default::default(), &config.vectorizer)?;
        Ok(Self { index, labels })
    }

    pub fn predict(&self, texts: &[String], k: usize, executor: &Executor) -> Vec<Prediction> {
        executor.map(texts.len(), |i| self.index.top_k(&texts[i], k))
    }
}

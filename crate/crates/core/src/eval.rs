//! Retrieval evaluation: Recall@k, an Okapi BM25 lexical baseline, and a
//! single-threaded latency benchmark.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Prediction;
use crate::text::{normalize_text, tokenize, VectorizerConfig};

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 3] = [10, 50, 100];

/// `|top_k(predicted) ∩ truth| / |truth|`. `None` when `truth` is empty.
pub fn recall_at_k(predicted: &Prediction, truth: &HashSet<u32>, k: usize) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let hits = predicted
        .labels
        .iter()
        .take(k)
        .filter(|l| truth.contains(l))
        .count();
    Some(hits as f64 / truth.len() as f64)
}

/// Macro-averaged recall over queries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub recall_at: BTreeMap<usize, f64>,
    pub evaluated_queries: usize,
    /// Queries skipped because their ground truth is empty.
    pub excluded_queries: usize,
}

pub fn mean_recall(predictions: &[Prediction], truths: &[HashSet<u32>], ks: &[usize]) -> RecallSummary {
    assert_eq!(predictions.len(), truths.len());
    let mut sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut evaluated = 0;
    let mut excluded = 0;
    for (pred, truth) in predictions.iter().zip(truths) {
        if truth.is_empty() {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        for &k in ks {
            *sums.get_mut(&k).unwrap() += recall_at_k(pred, truth, k).unwrap();
        }
    }
    let recall_at = sums
        .into_iter()
        .map(|(k, s)| (k, if evaluated > 0 { s / evaluated as f64 } else { 0.0 }))
        .collect();
    RecallSummary {
        recall_at,
        evaluated_queries: evaluated,
        excluded_queries: excluded,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.5, b: 0.45 }
    }
}

/// Token -> postings index over label documents.
///
/// Scoring uses the Okapi form
///
/// ```text
/// score(q, d) = sum_{t in q} idf(t) * tf(t,d) * (k1 + 1) / (tf(t,d) + k1 * (1 - b + b * len(d) / avgdl))
/// idf(t)      = ln((N - df(t) + 0.5) / (df(t) + 0.5) + 1)
/// ```
///
/// where query tokens are counted with multiplicity and `len(d)` is the
/// number of unigram tokens of document `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
    params: Bm25Params,
    text: VectorizerConfig,
}

impl InvertedIndex {
    /// Tokenizes documents with the same normalization as the vectorizer
    /// (word unigrams only).
    pub fn build<S: AsRef<str>>(docs: &[S], params: Bm25Params, text: &VectorizerConfig) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (id, doc) in docs.iter().enumerate() {
            let norm = normalize_text(doc.as_ref(), text);
            let tokens = tokenize(&norm);
            doc_len.push(tokens.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, c) in tf {
                postings.entry(t.to_string()).or_default().push((id as u32, c));
            }
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = (total as f64 / docs.len() as f64).max(f64::MIN_POSITIVE);
        Ok(Self {
            postings,
            doc_len,
            avgdl,
            params,
            text: text.clone(),
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Replaces the average document length (used to isolate idf effects).
    pub fn with_avgdl(mut self, avgdl: f64) -> Self {
        self.avgdl = avgdl;
        self
    }

    pub fn doc_freq(&self, token: &str) -> usize {
        self.postings.get(token).map_or(0, Vec::len)
    }

    pub fn idf(&self, token: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.doc_freq(token) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores of every document with at least one matching token.
    pub fn score_all(&self, query: &str) -> Vec<(u32, f64)> {
        let norm = normalize_text(query, &self.text);
        let Bm25Params { k1, b } = self.params;
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokenize(&norm) {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(doc, tf) in list {
                let tf = tf as f64;
                let len_norm = 1.0 - b + b * self.doc_len[doc as usize] as f64 / self.avgdl;
                *acc.entry(doc).or_insert(0.0) += idf * tf * (k1 + 1.0) / (tf + k1 * len_norm);
            }
        }
        acc.into_iter().collect()
    }

    /// Top-k documents; ties go to the lower document id.
    pub fn top_k(&self, query: &str, k: usize) -> Prediction {
        Prediction::from_candidates(self.score_all(query), k)
    }
}

/// Latency statistics from [`bench_latency`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub queries: usize,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    /// Measured queries divided by the total measured wall time.
    pub throughput_qps: f64,
}

/// Times `run` on every query, one at a time on the calling thread. The first
/// `warmup` queries of the stream are run but not timed; the stream is then
/// timed `repetitions` times.
pub fn bench_latency<Q, F>(queries: &[Q], warmup: usize, repetitions: usize, mut run: F) -> LatencyReport
where
    F: FnMut(&Q),
{
    for q in queries.iter().cycle().take(warmup.min(queries.len() * 4)) {
        run(q);
    }
    let mut times_ms = Vec::with_capacity(queries.len() * repetitions.max(1));
    let mut total = 0.0;
    for _ in 0..repetitions.max(1) {
        for q in queries {
            let start = Instant::now();
            run(q);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            total += ms;
            times_ms.push(ms);
        }
    }
    if times_ms.is_empty() {
        return LatencyReport::default();
    }
    times_ms.sort_by(f64::total_cmp);
    let pick = |q: f64| times_ms[((times_ms.len() - 1) as f64 * q).round() as usize];
    LatencyReport {
        queries: times_ms.len(),
        median_ms: pick(0.5),
        p99_ms: pick(0.99),
        mean_ms: total / times_ms.len() as f64,
        throughput_qps: if total > 0.0 { times_ms.len() as f64 / (total / 1e3) } else { f64::INFINITY },
    }
}

/// Evaluation output: recall figures, optional latency, and an echo of the
/// settings that produced them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: RecallSummary,
    pub latency: Option<LatencyReport>,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    /// `key=value` lines, one metric per line, sorted by key.
    pub fn to_key_values(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in &self.recall.recall_at {
            kv.insert(format!("recall@{k}"), format!("{v}"));
        }
        if !self.recall.recall_at.is_empty() {
            kv.insert("evaluated_queries".into(), self.recall.evaluated_queries.to_string());
            kv.insert("excluded_queries".into(), self.recall.excluded_queries.to_string());
        }
        if let Some(l) = &self.latency {
            kv.insert("latency_median_ms".into(), format!("{}", l.median_ms));
            kv.insert("latency_p99_ms".into(), format!("{}", l.p99_ms));
            kv.insert("latency_mean_ms".into(), format!("{}", l.mean_ms));
            kv.insert("throughput_qps".into(), format!("{}", l.throughput_qps));
            kv.insert("timed_queries".into(), l.queries.to_string());
        }
        for (k, v) in &self.config {
            kv.insert(format!("config.{k}"), v.clone());
        }
        let mut s = String::new();
        for (k, v) in kv {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.recall.recall_at.is_empty() {
            writeln!(s, "queries evaluated: {}", self.recall.evaluated_queries).unwrap();
        }
        if self.recall.excluded_queries > 0 {
            writeln!(s, "queries excluded (empty ground truth): {}", self.recall.excluded_queries).unwrap();
        }
        for (k, v) in &self.recall.recall_at {
            writeln!(s, "Recall@{k:<4} {:6.2}%", v * 100.0).unwrap();
        }
        if let Some(l) = &self.latency {
            writeln!(
                s,
                "latency: median {:.4} ms/q, p99 {:.4} ms/q; throughput {:.1} q/s",
                l.median_ms, l.p99_ms, l.throughput_qps
            )
            .unwrap();
        }
        if !self.config.is_empty() {
            writeln!(s, "settings:").unwrap();
            for (k, v) in &self.config {
                writeln!(s, "  {k} = {v}").unwrap();
            }
        }
        s
    }
}

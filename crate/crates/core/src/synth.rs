//! Synthetic query/product data with a controllable lexical gap.
//!
//! Labels are grouped into topics. A label title is made of topic words,
//! one label-specific word and a shared attribute word. Every title word has
//! a synonym that never appears in any title. Queries name a label by its
//! topic and specific words; a configurable share of them replaces every
//! word by its synonym, so those queries share no token with any title.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TestQuery;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_labels: usize,
    pub n_queries: usize,
    pub topic_size: usize,
    pub topic_words: usize,
    /// Probability that a query uses synonyms for all of its words.
    pub synonym_rate: f64,
    /// Each label has this many related labels in its topic (the next ones
    /// in topic order); a query for the label is also relevant to each of
    /// them with probability `related_rate`.
    pub related: usize,
    pub related_rate: f64,
    /// Share of queries that only name a topic.
    pub generic_rate: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_labels: 5_000,
            n_queries: 20_000,
            topic_size: 25,
            topic_words: 3,
            synonym_rate: 0.5,
            related: 2,
            related_rate: 0.5,
            generic_rate: 0.05,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.n_labels == 0 {
            errs.push("synth.n_labels must be >= 1".to_string());
        }
        if self.n_queries == 0 {
            errs.push("synth.n_queries must be >= 1".to_string());
        }
        if self.topic_size == 0 {
            errs.push("synth.topic_size must be >= 1".to_string());
        }
        if self.topic_words == 0 {
            errs.push("synth.topic_words must be >= 1".to_string());
        }
        for (name, v) in [
            ("synonym_rate", self.synonym_rate),
            ("generic_rate", self.generic_rate),
            ("related_rate", self.related_rate),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("synth.{name} must be in [0, 1], got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// One generated query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthQuery {
    pub text: String,
    /// Relevant label indices, primary label first.
    pub relevant: Vec<u32>,
    pub synonym: bool,
    pub test: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub label_ids: Vec<String>,
    pub titles: Vec<String>,
    pub queries: Vec<SynthQuery>,
}

struct WordSource {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "gr", "sk",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

impl WordSource {
    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(VOWELS.choose(&mut self.rng).unwrap());
            }
            if self.rng.gen_bool(0.5) {
                w.push_str(["n", "x", "r", "m", "k"].choose(&mut self.rng).unwrap());
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }

    fn pair(&mut self) -> (String, String) {
        (self.word(), self.word())
    }
}

/// Generates a dataset; identical configs give identical datasets.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate().map_err(Error::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = WordSource {
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed),
        seen: HashSet::new(),
    };

    let n_topics = config.n_labels.div_ceil(config.topic_size);
    // (title word, synonym)
    let topic_words: Vec<Vec<(String, String)>> = (0..n_topics)
        .map(|_| (0..config.topic_words).map(|_| words.pair()).collect())
        .collect();
    let attributes: Vec<String> = (0..16).map(|_| words.word()).collect();
    let query_fillers: Vec<String> = (0..16).map(|_| words.word()).collect();

    let topic_of = |l: usize| l / config.topic_size;
    let mut specific = Vec::with_capacity(config.n_labels);
    let mut titles = Vec::with_capacity(config.n_labels);
    for l in 0..config.n_labels {
        let (w, s) = words.pair();
        let tw = &topic_words[topic_of(l)];
        let mut title: Vec<&str> = tw.iter().map(|(w, _)| w.as_str()).collect();
        title.push(&w);
        title.push(attributes.choose(&mut rng).unwrap());
        titles.push(title.join(" "));
        specific.push((w, s));
    }
    let label_ids: Vec<String> = (0..config.n_labels).map(|l| format!("P{l:06}")).collect();

    let mut primaries: Vec<usize> = (0..config.n_queries).map(|i| i % config.n_labels).collect();
    primaries.shuffle(&mut rng);

    let mut queries = Vec::with_capacity(config.n_queries);
    for primary in primaries {
        let topic = topic_of(primary);
        let members: Vec<usize> =
            (topic * config.topic_size..((topic + 1) * config.topic_size).min(config.n_labels)).collect();
        let synonym = rng.gen_bool(config.synonym_rate);
        let pick = |(w, s): &(String, String)| if synonym { s.clone() } else { w.clone() };
        let generic = rng.gen_bool(config.generic_rate);

        let mut tokens: Vec<String> = Vec::new();
        let mut relevant: Vec<u32> = Vec::new();
        if generic {
            let n = rng.gen_range(1..=config.topic_words.min(2));
            for tw in topic_words[topic].choose_multiple(&mut rng, n) {
                tokens.push(pick(tw));
            }
            let n_rel = members.len().min(3);
            relevant.extend(members.choose_multiple(&mut rng, n_rel).map(|&l| l as u32));
        } else {
            tokens.push(pick(topic_words[topic].choose(&mut rng).unwrap()));
            tokens.push(pick(&specific[primary]));
            relevant.push(primary as u32);
            let pos = primary - members[0];
            for j in 1..=config.related.min(members.len() - 1) {
                if rng.gen_bool(config.related_rate) {
                    relevant.push(members[(pos + j) % members.len()] as u32);
                }
            }
        }
        if rng.gen_bool(0.3) {
            tokens.push(query_fillers.choose(&mut rng).unwrap().clone());
        }
        tokens.shuffle(&mut rng);
        let test = rng.gen_bool(config.test_fraction);
        queries.push(SynthQuery {
            text: tokens.join(" "),
            relevant,
            synonym,
            test,
        });
    }

    Ok(SynthDataset {
        label_ids,
        titles,
        queries,
    })
}

impl SynthDataset {
    pub fn n_labels(&self) -> usize {
        self.titles.len()
    }

    pub fn train_queries(&self) -> impl Iterator<Item = &SynthQuery> {
        self.queries.iter().filter(|q| !q.test)
    }

    pub fn test_queries(&self) -> impl Iterator<Item = &SynthQuery> {
        self.queries.iter().filter(|q| q.test)
    }

    /// `query \t label_id` lines for the training split.
    pub fn pairs_text(&self) -> String {
        let mut s = String::new();
        for q in self.train_queries() {
            for &l in &q.relevant {
                writeln!(s, "{}\t{}", q.text, self.label_ids[l as usize]).unwrap();
            }
        }
        s
    }

    pub fn test_set(&self) -> Vec<TestQuery> {
        self.test_queries()
            .map(|q| TestQuery {
                text: q.text.clone(),
                relevant: q.relevant.iter().map(|&l| self.label_ids[l as usize].clone()).collect(),
            })
            .collect()
    }

    /// `label_id \t title` lines.
    pub fn catalog_text(&self) -> String {
        let mut s = String::new();
        for (id, t) in self.label_ids.iter().zip(&self.titles) {
            writeln!(s, "{id}\t{t}").unwrap();
        }
        s
    }

    /// Writes `labels.tsv`, `pairs.tsv` and `test.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("labels.tsv", self.catalog_text())?;
        put("pairs.tsv", self.pairs_text())?;
        crate::data::write_test_set(&dir.join("test.tsv"), &self.test_set())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_labels: 100,
            n_queries: 400,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn synonym_queries_share_no_word_with_titles() {
        let d = generate(&small()).unwrap();
        let title_words: HashSet<&str> = d.titles.iter().flat_map(|t| t.split(' ')).collect();
        let syn: Vec<_> = d.queries.iter().filter(|q| q.synonym).collect();
        assert!(!syn.is_empty());
        for q in syn {
            assert!(q.text.split(' ').all(|w| !title_words.contains(w)), "{}", q.text);
        }
    }

    #[test]
    fn relevant_labels_stay_within_topic() {
        let cfg = small();
        let d = generate(&cfg).unwrap();
        for q in &d.queries {
            let t = q.relevant[0] as usize / cfg.topic_size;
            assert!(q.relevant.iter().all(|&l| l as usize / cfg.topic_size == t));
            let uniq: HashSet<_> = q.relevant.iter().collect();
            assert_eq!(uniq.len(), q.relevant.len());
        }
    }
}

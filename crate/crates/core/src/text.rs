//! Text featurization: normalization, whitespace tokenization, word n-grams,
//! word-boundary character trigrams, and an n-gram TF-IDF vocabulary.
//!
//! Feature ids are laid out family by family (word unigrams, word bigrams,
//! character trigrams) followed by a single shared out-of-vocabulary slot.
//! Term weights are `tf * idf` with `idf = ln((n_docs + 1) / (df + 1)) + 1`,
//! and every transformed vector is scaled to unit Euclidean norm.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Executor;
use crate::sparse::{CsrMatrix, SparseVector};

/// Separator used to join adjacent words into a word n-gram, and to pad words
/// at their boundaries for character trigrams.
pub const NGRAM_JOINER: char = '#';

const VOCAB_MAGIC: &str = "treematch-vocab";
const VOCAB_VERSION: u32 = 1;

fn default_punctuation() -> String {
    (0u8..128)
        .map(char::from)
        .filter(|c| c.is_ascii_punctuation())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorizerConfig {
    pub max_unigrams: usize,
    pub max_bigrams: usize,
    pub max_char_trigrams: usize,
    pub lowercase: bool,
    /// Characters replaced by a space during normalization.
    pub punctuation: String,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        Self {
            max_unigrams: 1_000_000,
            max_bigrams: 3_000_000,
            max_char_trigrams: 200_000,
            lowercase: true,
            punctuation: default_punctuation(),
        }
    }
}

impl VectorizerConfig {
    fn budget(&self, family: Family) -> usize {
        match family {
            Family::Unigram => self.max_unigrams,
            Family::Bigram => self.max_bigrams,
            Family::CharTrigram => self.max_char_trigrams,
        }
    }
}

/// Token families making up the feature space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Unigram,
    Bigram,
    CharTrigram,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Unigram, Family::Bigram, Family::CharTrigram];

    fn name(self) -> &'static str {
        match self {
            Family::Unigram => "unigram",
            Family::Bigram => "bigram",
            Family::CharTrigram => "char_trigram",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Lowercases (if configured), replaces punctuation with spaces, collapses
/// whitespace runs and trims.
pub fn normalize_text(raw: &str, config: &VectorizerConfig) -> String {
    let punct: HashSet<char> = config.punctuation.chars().collect();
    normalize_with(raw, config.lowercase, &punct)
}

fn normalize_with(raw: &str, lowercase: bool, punct: &HashSet<char>) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    let mut push = |c: char, out: &mut String| {
        if c.is_whitespace() || punct.contains(&c) {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    };
    for c in raw.chars() {
        if lowercase {
            for lc in c.to_lowercase() {
                push(lc, &mut out);
            }
        } else {
            push(c, &mut out);
        }
    }
    out
}

/// Splits on whitespace runs.
pub fn tokenize(normalized: &str) -> Vec<&str> {
    normalized.split_whitespace().collect()
}

/// Adjacent-word n-grams joined with `#`. Empty when there are fewer than `n`
/// tokens.
pub fn word_ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> Vec<String> {
    assert!(n >= 1, "n-gram order must be at least 1");
    if tokens.len() < n {
        return Vec::new();
    }
    tokens
        .windows(n)
        .map(|w| {
            let mut s = String::new();
            for (i, t) in w.iter().enumerate() {
                if i > 0 {
                    s.push(NGRAM_JOINER);
                }
                s.push_str(t.as_ref());
            }
            s
        })
        .collect()
}

/// Character trigrams inside word boundaries: each word `w` is padded to
/// `#w#` and every 3-character window is emitted.
pub fn char_trigrams<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    let mut padded: Vec<char> = Vec::new();
    for t in tokens {
        padded.clear();
        padded.push(NGRAM_JOINER);
        padded.extend(t.as_ref().chars());
        padded.push(NGRAM_JOINER);
        out.extend(padded.windows(3).map(|w| w.iter().collect::<String>()));
    }
    out
}

/// Per-family n-gram tokens of an already tokenized document. Families with a
/// zero budget produce nothing.
fn family_tokens(tokens: &[&str], family: Family) -> Vec<String> {
    match family {
        Family::Unigram => tokens.iter().map(|t| t.to_string()).collect(),
        Family::Bigram => word_ngrams(tokens, 2),
        Family::CharTrigram => char_trigrams(tokens),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct FamilyVocab {
    tokens: Vec<String>,
    doc_freq: Vec<u64>,
    index: HashMap<String, u32>,
}

impl FamilyVocab {
    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i as u32))
            .collect();
        let (tokens, doc_freq) = entries.into_iter().unzip();
        Self {
            tokens,
            doc_freq,
            index,
        }
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Fitted n-gram vocabulary with document frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    config: VectorizerConfig,
    n_docs: u64,
    families: [FamilyVocab; 3],
    offsets: [u32; 3],
    punct: HashSet<char>,
}

impl Vocabulary {
    /// Fits on the corpus with one worker per core.
    pub fn fit<S: AsRef<str> + Sync>(corpus: &[S], config: &VectorizerConfig) -> Result<Self> {
        Self::fit_with(corpus, config, &Executor::default())
    }

    /// Keeps, per family, the `budget` tokens with the highest document
    /// frequency (ties broken by ascending token).
    pub fn fit_with<S: AsRef<str> + Sync>(
        corpus: &[S],
        config: &VectorizerConfig,
        executor: &Executor,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let punct: HashSet<char> = config.punctuation.chars().collect();
        let enabled: Vec<Family> = Family::ALL
            .into_iter()
            .filter(|f| config.budget(*f) > 0)
            .collect();

        let n_chunks = (executor.threads() * 4).clamp(1, corpus.len());
        let chunk_len = corpus.len().div_ceil(n_chunks);
        let partial: Vec<[HashMap<String, u64>; 3]> = executor.map(n_chunks, |c| {
            let mut counts: [HashMap<String, u64>; 3] = Default::default();
            let lo = (c * chunk_len).min(corpus.len());
            let hi = ((c + 1) * chunk_len).min(corpus.len());
            for doc in &corpus[lo..hi] {
                let text = normalize_with(doc.as_ref(), config.lowercase, &punct);
                let tokens = tokenize(&text);
                for &family in &enabled {
                    let unique: HashSet<String> = family_tokens(&tokens, family).into_iter().collect();
                    let map = &mut counts[family.slot()];
                    for tok in unique {
                        *map.entry(tok).or_insert(0) += 1;
                    }
                }
            }
            counts
        });

        let mut merged: [HashMap<String, u64>; 3] = Default::default();
        for counts in partial {
            for (slot, map) in counts.into_iter().enumerate() {
                for (tok, df) in map {
                    *merged[slot].entry(tok).or_insert(0) += df;
                }
            }
        }

        let mut families: [FamilyVocab; 3] = Default::default();
        for family in Family::ALL {
            let mut entries: Vec<(String, u64)> = std::mem::take(&mut merged[family.slot()])
                .into_iter()
                .collect();
            entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            entries.truncate(config.budget(family));
            families[family.slot()] = FamilyVocab::from_entries(entries);
        }
        Ok(Self::assemble(config.clone(), corpus.len() as u64, families))
    }

    fn assemble(config: VectorizerConfig, n_docs: u64, families: [FamilyVocab; 3]) -> Self {
        let mut offsets = [0u32; 3];
        let mut acc = 0u32;
        for (slot, fam) in families.iter().enumerate() {
            offsets[slot] = acc;
            acc += fam.len() as u32;
        }
        let punct = config.punctuation.chars().collect();
        Self {
            config,
            n_docs,
            families,
            offsets,
            punct,
        }
    }

    pub fn config(&self) -> &VectorizerConfig {
        &self.config
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    /// Feature dimensionality, including the out-of-vocabulary slot.
    pub fn dim(&self) -> usize {
        self.families.iter().map(FamilyVocab::len).sum::<usize>() + 1
    }

    pub fn oov_id(&self) -> u32 {
        (self.dim() - 1) as u32
    }

    pub fn family_len(&self, family: Family) -> usize {
        self.families[family.slot()].len()
    }

    /// Feature id of `token` within `family`, if kept.
    pub fn feature_id(&self, family: Family, token: &str) -> Option<u32> {
        self.families[family.slot()]
            .index
            .get(token)
            .map(|i| i + self.offsets[family.slot()])
    }

    /// Family and token behind a feature id; `None` for the OOV slot.
    pub fn feature(&self, id: u32) -> Option<(Family, &str)> {
        for family in Family::ALL.into_iter().rev() {
            let off = self.offsets[family.slot()];
            let fam = &self.families[family.slot()];
            if id >= off && ((id - off) as usize) < fam.len() {
                return Some((family, &fam.tokens[(id - off) as usize]));
            }
        }
        None
    }

    pub fn doc_freq(&self, id: u32) -> Option<u64> {
        self.feature(id).map(|(family, _)| {
            self.families[family.slot()].doc_freq[(id - self.offsets[family.slot()]) as usize]
        })
    }

    /// Smoothed inverse document frequency; 1 for the OOV slot.
    pub fn idf(&self, id: u32) -> f64 {
        match self.doc_freq(id) {
            Some(df) => ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0,
            None => 1.0,
        }
    }

    /// Unit-norm TF-IDF vector of a raw document.
    pub fn transform(&self, raw: &str) -> SparseVector {
        let text = normalize_with(raw, self.config.lowercase, &self.punct);
        let tokens = tokenize(&text);
        let oov = self.oov_id();
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for family in Family::ALL {
            if self.config.budget(family) == 0 {
                continue;
            }
            for tok in family_tokens(&tokens, family) {
                let id = self.feature_id(family, &tok).unwrap_or(oov);
                *tf.entry(id).or_insert(0) += 1;
            }
        }
        let (indices, values): (Vec<u32>, Vec<f64>) = tf
            .into_iter()
            .map(|(id, count)| (id, count as f64 * self.idf(id)))
            .unzip();
        let mut v = SparseVector::new(self.dim(), indices, values)
            .expect("tf-idf weights are positive and ids sorted");
        v.l2_normalize();
        v
    }

    pub fn transform_batch<S: AsRef<str> + Sync>(&self, docs: &[S], executor: &Executor) -> CsrMatrix {
        let rows = executor.map(docs.len(), |i| self.transform(docs[i].as_ref()));
        CsrMatrix::from_rows(self.dim(), &rows).expect("rows share the vocabulary dimension")
    }

    /// Serializes to the versioned text format:
    ///
    /// ```text
    /// treematch-vocab 1
    /// n_docs <N>
    /// lowercase <true|false>
    /// punctuation <JSON string>
    /// budgets <max_unigrams> <max_bigrams> <max_char_trigrams>
    /// family unigram <count>
    /// <df>\t<token>          (one line per kept token, in feature-id order)
    /// family bigram <count>
    /// ...
    /// family char_trigram <count>
    /// ...
    /// end
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        writeln!(s, "{VOCAB_MAGIC} {VOCAB_VERSION}").unwrap();
        writeln!(s, "n_docs {}", self.n_docs).unwrap();
        writeln!(s, "lowercase {}", c.lowercase).unwrap();
        writeln!(
            s,
            "punctuation {}",
            serde_json::to_string(&c.punctuation).unwrap()
        )
        .unwrap();
        writeln!(
            s,
            "budgets {} {} {}",
            c.max_unigrams, c.max_bigrams, c.max_char_trigrams
        )
        .unwrap();
        for family in Family::ALL {
            let fam = &self.families[family.slot()];
            writeln!(s, "family {} {}", family.name(), fam.len()).unwrap();
            for (tok, df) in fam.tokens.iter().zip(&fam.doc_freq) {
                writeln!(s, "{df}\t{tok}").unwrap();
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|msg| Error::format(path, msg))
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| format!("unexpected end of file, expected {what}"))
        };
        let (_, header) = next("header")?;
        if header != format!("{VOCAB_MAGIC} {VOCAB_VERSION}") {
            return Err(format!("bad header {header:?}"));
        }
        let field = |line: (usize, &str), key: &str| -> std::result::Result<String, String> {
            line.1
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| format!("line {}: expected '{key}'", line.0))
        };
        let n_docs: u64 = field(next("n_docs")?, "n_docs")?
            .parse()
            .map_err(|e| format!("n_docs: {e}"))?;
        let lowercase: bool = field(next("lowercase")?, "lowercase")?
            .parse()
            .map_err(|e| format!("lowercase: {e}"))?;
        let punctuation: String =
            serde_json::from_str(&field(next("punctuation")?, "punctuation")?)
                .map_err(|e| format!("punctuation: {e}"))?;
        let budgets: Vec<usize> = field(next("budgets")?, "budgets")?
            .split(' ')
            .map(|b| b.parse().map_err(|e| format!("budgets: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if budgets.len() != 3 {
            return Err("budgets: expected three values".into());
        }
        let config = VectorizerConfig {
            max_unigrams: budgets[0],
            max_bigrams: budgets[1],
            max_char_trigrams: budgets[2],
            lowercase,
            punctuation,
        };
        let mut families: [FamilyVocab; 3] = Default::default();
        for family in Family::ALL {
            let line = next("family section")?;
            let rest = field(line, &format!("family {}", family.name()))?;
            let count: usize = rest.parse().map_err(|e| format!("line {}: {e}", line.0))?;
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                let (no, l) = next("token record")?;
                let (df, tok) = l
                    .split_once('\t')
                    .ok_or_else(|| format!("line {no}: expected '<df>\\t<token>'"))?;
                let df: u64 = df.parse().map_err(|e| format!("line {no}: {e}"))?;
                if df == 0 || df > n_docs {
                    return Err(format!("line {no}: document frequency {df} out of range"));
                }
                entries.push((tok.to_string(), df));
            }
            let unique: BTreeSet<&str> = entries.iter().map(|(t, _)| t.as_str()).collect();
            if unique.len() != entries.len() {
                return Err(format!("duplicate token in {} family", family.name()));
            }
            families[family.slot()] = FamilyVocab::from_entries(entries);
        }
        let (no, end) = next("end")?;
        if end != "end" {
            return Err(format!("line {no}: expected 'end'"));
        }
        Ok(Self::assemble(config, n_docs, families))
    }
}

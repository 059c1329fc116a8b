//! Dataset files: query/label pair ingestion, label id maps, the binary
//! CSR/CSC matrix format, SVMLight-style sparse text, test sets and
//! prediction files.
//!
//! Binary matrices are little-endian:
//!
//! ```text
//! magic      8 bytes   "TMCSR001" (rows compressed) or "TMCSC001" (columns compressed)
//! n_rows     u64
//! n_cols     u64
//! nnz        u64
//! ptr        u64 x (n_major + 1)
//! indices    u32 x nnz
//! values     f64 x nnz
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::Prediction;
use crate::sparse::{CscMatrix, CsrMatrix, SparseVector};

const CSR_MAGIC: &[u8; 8] = b"TMCSR001";
const CSC_MAGIC: &[u8; 8] = b"TMCSC001";

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Bidirectional map between external label ids and contiguous internal ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    external: Vec<String>,
    index: HashMap<String, u32>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_external(ids: Vec<String>) -> Result<Self> {
        let mut map = Self::new();
        for id in ids {
            if map.index.contains_key(&id) {
                return Err(Error::InvalidInput(format!("duplicate label id {id:?}")));
            }
            map.intern(&id);
        }
        Ok(map)
    }

    /// Internal id of `external`, assigning the next id when unseen.
    pub fn intern(&mut self, external: &str) -> u32 {
        if let Some(&id) = self.index.get(external) {
            return id;
        }
        let id = self.external.len() as u32;
        self.external.push(external.to_string());
        self.index.insert(external.to_string(), id);
        id
    }

    pub fn get(&self, external: &str) -> Option<u32> {
        self.index.get(external).copied()
    }

    pub fn external(&self, internal: u32) -> &str {
        &self.external[internal as usize]
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// `<internal id>\t<external id>` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.external.iter().enumerate() {
            writeln!(s, "{i}\t{e}").unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut ids = Vec::new();
        for (no, line) in read_lines(path)?.iter().enumerate() {
            let (i, e) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(path, no + 1, "expected '<internal>\\t<external>'"))?;
            if i.parse::<usize>().ok() != Some(no) {
                return Err(parse_err(path, no + 1, "internal ids must be 0, 1, 2, ... in order"));
            }
            ids.push(e.to_string());
        }
        Self::from_external(ids)
    }
}

/// Output of [`ingest_pairs`].
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedData {
    /// Distinct query texts, in order of first appearance.
    pub queries: Vec<String>,
    /// Binary relevance, one row per query.
    pub y: CsrMatrix,
    pub labels: LabelMap,
}

/// A pairs-file line with its 1-based line number.
pub type NumberedLine = (usize, String);

fn numbered(lines: Vec<String>) -> Vec<NumberedLine> {
    lines.into_iter().enumerate().map(|(i, l)| (i + 1, l)).collect()
}

/// Distinct queries and labels in first-appearance order with the summed
/// count of every (query, label) pair.
struct PairTotals {
    queries: Vec<String>,
    labels: Vec<String>,
    /// Keyed by (query index, label index).
    totals: BTreeMap<(usize, usize), f64>,
}

impl PairTotals {
    fn positives(&self, threshold: f64) -> Vec<(usize, usize)> {
        self.totals
            .iter()
            .filter(|(_, c)| **c >= threshold)
            .map(|(k, _)| *k)
            .collect()
    }
}

fn fields_of(path: &Path, no: usize, line: &str) -> Result<Vec<String>> {
    let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
    if fields.len() < 2 {
        return Err(parse_err(path, no, "expected 'query\\tlabel_id[\\tcount]'"));
    }
    Ok(fields)
}

fn aggregate_pairs(path: &Path, lines: &[NumberedLine], catalog: Option<&LabelMap>) -> Result<PairTotals> {
    let mut out = PairTotals {
        queries: Vec::new(),
        labels: Vec::new(),
        totals: BTreeMap::new(),
    };
    let mut query_ids: HashMap<String, usize> = HashMap::new();
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    for (no, line) in lines {
        let no = *no;
        if line.trim().is_empty() {
            continue;
        }
        let fields = fields_of(path, no, line)?;
        let (query, label) = (&fields[0], &fields[1]);
        if query.is_empty() || label.is_empty() {
            return Err(parse_err(path, no, "empty query or label id"));
        }
        if label.contains(',') {
            return Err(parse_err(path, no, "label ids may not contain ','"));
        }
        let count: f64 = match fields.get(2).filter(|c| !c.is_empty()) {
            Some(c) => c
                .parse()
                .ok()
                .filter(|c: &f64| c.is_finite() && *c >= 0.0)
                .ok_or_else(|| parse_err(path, no, format!("invalid count {c:?}")))?,
            None => 1.0,
        };
        if let Some(cat) = catalog {
            if cat.get(label).is_none() {
                return Err(parse_err(path, no, format!("label {label:?} is not in the catalog")));
            }
        }
        let q = *query_ids.entry(query.clone()).or_insert_with(|| {
            out.queries.push(query.clone());
            out.queries.len() - 1
        });
        let l = *label_ids.entry(label.clone()).or_insert_with(|| {
            out.labels.push(label.clone());
            out.labels.len() - 1
        });
        *out.totals.entry((q, l)).or_insert(0.0) += count;
    }
    Ok(out)
}

/// Parses `query \t label_id [\t count [\t ...]]` lines; columns after the
/// count are ignored. Counts of repeated pairs are summed and a pair is
/// positive when its total reaches `threshold`. Without a count column a
/// line counts once.
///
/// When `catalog` is given the label id map follows its order and every
/// label referenced by a pair must be in it; otherwise labels are numbered
/// in order of first appearance among positive pairs.
pub fn ingest_pairs(path: &Path, threshold: f64, catalog: Option<&LabelMap>) -> Result<IngestedData> {
    ingest_lines(path, &numbered(read_lines(path)?), threshold, catalog)
}

/// [`ingest_pairs`] over lines already read from `path`.
pub fn ingest_lines(
    path: &Path,
    lines: &[NumberedLine],
    threshold: f64,
    catalog: Option<&LabelMap>,
) -> Result<IngestedData> {
    let agg = aggregate_pairs(path, lines, catalog)?;
    let positives = agg.positives(threshold);
    if positives.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no query/label pairs reach the threshold {threshold}",
            path.display()
        )));
    }

    // Positives are sorted by first-appearance (query, label) indices, so
    // rows come out in file order.
    let mut kept_query: Vec<Option<usize>> = vec![None; agg.queries.len()];
    let mut queries = Vec::new();
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for &(q, l) in &positives {
        let row = *kept_query[q].get_or_insert_with(|| {
            queries.push(agg.queries[q].clone());
            rows.push(Vec::new());
            rows.len() - 1
        });
        rows[row].push(l as u32);
    }

    let labels = match catalog {
        Some(cat) => cat.clone(),
        None => {
            let mut kept: Vec<u32> = rows.iter().flatten().copied().collect();
            kept.sort_unstable();
            kept.dedup();
            let mut map = LabelMap::new();
            for raw in kept {
                map.intern(&agg.labels[raw as usize]);
            }
            map
        }
    };
    for row in &mut rows {
        for l in row.iter_mut() {
            *l = labels.get(&agg.labels[*l as usize]).expect("label was interned");
        }
        row.sort_unstable();
    }
    let y = CsrMatrix::from_binary_rows(labels.len(), &rows)?;
    Ok(IngestedData { queries, y, labels })
}

/// Test queries from pair lines, using the same aggregation and threshold as
/// [`ingest_lines`]. Queries left without positives are dropped.
pub fn test_set_from_lines(path: &Path, lines: &[NumberedLine], threshold: f64) -> Result<Vec<TestQuery>> {
    let agg = aggregate_pairs(path, lines, None)?;
    let mut out: Vec<TestQuery> = Vec::new();
    let mut slot: Vec<Option<usize>> = vec![None; agg.queries.len()];
    for (q, l) in agg.positives(threshold) {
        let i = *slot[q].get_or_insert_with(|| {
            out.push(TestQuery {
                text: agg.queries[q].clone(),
                relevant: Vec::new(),
            });
            out.len() - 1
        });
        out[i].relevant.push(agg.labels[l].clone());
    }
    Ok(out)
}

/// How to divide a pairs file into training and test parts.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitRule {
    /// Each distinct query goes to the test side with this probability.
    Random { test_fraction: f64, seed: u64 },
    /// Lines whose 0-based `column` is `>= cutoff` (string order, which
    /// suits ISO dates and zero-padded numbers) go to the test side.
    Column { column: usize, cutoff: String },
}

/// Splits the lines of a pairs file; returns `(train, test)`.
pub fn split_pairs(path: &Path, rule: &SplitRule) -> Result<(Vec<NumberedLine>, Vec<NumberedLine>)> {
    use rand::{Rng, SeedableRng};

    let lines = numbered(read_lines(path)?);
    let mut train = Vec::new();
    let mut test = Vec::new();
    match rule {
        SplitRule::Random { test_fraction, seed } => {
            if !(0.0..=1.0).contains(test_fraction) {
                return Err(Error::InvalidInput(format!("test fraction {test_fraction} is outside [0, 1]")));
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let mut side: HashMap<String, bool> = HashMap::new();
            for (no, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let query = fields_of(path, no, &line)?.swap_remove(0);
                let is_test = *side.entry(query).or_insert_with(|| rng.gen_bool(*test_fraction));
                if is_test { &mut test } else { &mut train }.push((no, line));
            }
        }
        SplitRule::Column { column, cutoff } => {
            for (no, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let fields = fields_of(path, no, &line)?;
                let value = fields
                    .get(*column)
                    .ok_or_else(|| parse_err(path, no, format!("line has no column {column}")))?;
                if value.as_str() >= cutoff.as_str() { &mut test } else { &mut train }.push((no, line));
            }
        }
    }
    Ok((train, test))
}

/// Reads a `label_id \t text` catalog (e.g. product titles).
pub fn read_catalog(path: &Path) -> Result<(LabelMap, Vec<String>)> {
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (no, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, no + 1, "expected '<label id>\\t<text>'"))?;
        ids.push(id.trim().to_string());
        texts.push(text.to_string());
    }
    Ok((LabelMap::from_external(ids)?, texts))
}

/// One test query with its relevant external label ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestQuery {
    pub text: String,
    pub relevant: Vec<String>,
}

/// Reads `query \t id1,id2,...` lines.
pub fn read_test_set(path: &Path) -> Result<Vec<TestQuery>> {
    let mut out = Vec::new();
    for (no, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (text, ids) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, no + 1, "expected '<query>\\t<comma separated label ids>'"))?;
        let relevant = ids
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        out.push(TestQuery {
            text: text.to_string(),
            relevant,
        });
    }
    Ok(out)
}

pub fn write_test_set(path: &Path, queries: &[TestQuery]) -> Result<()> {
    let mut s = String::new();
    for q in queries {
        writeln!(s, "{}\t{}", q.text, q.relevant.join(",")).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// `query_id \t label_id \t score` lines, best first within each query.
/// Scores use the shortest representation that parses back to the same
/// `f64`.
pub fn format_predictions(predictions: &[Prediction], labels: &LabelMap) -> String {
    let mut s = String::new();
    for (q, pred) in predictions.iter().enumerate() {
        for (l, score) in pred.iter() {
            writeln!(s, "{q}\t{}\t{score}", labels.external(l)).unwrap();
        }
    }
    s
}

/// Parses a predictions file back into per-query lists of
/// `(external label id, score)`. Queries without any line are absent.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<usize, Vec<(String, f64)>>> {
    let mut out: BTreeMap<usize, Vec<(String, f64)>> = BTreeMap::new();
    for (no, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(path, no + 1, "expected 'query_id\\tlabel_id\\tscore'"));
        }
        let q: usize = f[0].parse().map_err(|_| parse_err(path, no + 1, "bad query id"))?;
        let score: f64 = f[2].parse().map_err(|_| parse_err(path, no + 1, "bad score"))?;
        out.entry(q).or_default().push((f[1].to_string(), score));
    }
    Ok(out)
}

fn encode(magic: &[u8; 8], n_rows: usize, n_cols: usize, ptr: &[usize], idx: &[u32], val: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + ptr.len() * 8 + idx.len() * 12);
    buf.extend_from_slice(magic);
    for v in [n_rows as u64, n_cols as u64, idx.len() as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &p in ptr {
        buf.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &i in idx {
        buf.extend_from_slice(&i.to_le_bytes());
    }
    for &v in val {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

type Decoded = (usize, usize, Vec<usize>, Vec<u32>, Vec<f64>);

fn decode(magic: &[u8; 8], bytes: &[u8], column_major: bool) -> std::result::Result<Decoded, String> {
    if bytes.len() < 32 || &bytes[..8] != magic {
        return Err("bad magic".into());
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (n_rows, n_cols, nnz) = (u64_at(8) as usize, u64_at(16) as usize, u64_at(24) as usize);
    let n_major = if column_major { n_cols } else { n_rows };
    let expected = 32 + (n_major + 1) * 8 + nnz * 12;
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    let mut off = 32;
    let ptr: Vec<usize> = (0..=n_major).map(|i| u64_at(off + i * 8) as usize).collect();
    off += (n_major + 1) * 8;
    let idx: Vec<u32> = (0..nnz)
        .map(|i| u32::from_le_bytes(bytes[off + i * 4..off + i * 4 + 4].try_into().unwrap()))
        .collect();
    off += nnz * 4;
    let val: Vec<f64> = (0..nnz)
        .map(|i| f64::from_le_bytes(bytes[off + i * 8..off + i * 8 + 8].try_into().unwrap()))
        .collect();
    Ok((n_rows, n_cols, ptr, idx, val))
}

pub fn csr_to_bytes(m: &CsrMatrix) -> Vec<u8> {
    encode(CSR_MAGIC, m.n_rows(), m.n_cols(), m.indptr(), m.indices(), m.values())
}

pub fn csc_to_bytes(m: &CscMatrix) -> Vec<u8> {
    encode(CSC_MAGIC, m.n_rows(), m.n_cols(), m.col_ptr(), m.row_idx(), m.values())
}

pub fn write_csr(path: &Path, m: &CsrMatrix) -> Result<()> {
    fs::write(path, csr_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn read_csr(path: &Path) -> Result<CsrMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (r, c, p, i, v) = decode(CSR_MAGIC, &bytes, false).map_err(|m| Error::format(path, m))?;
    CsrMatrix::from_raw(r, c, p, i, v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_csc(path: &Path, m: &CscMatrix) -> Result<()> {
    fs::write(path, csc_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn read_csc(path: &Path) -> Result<CscMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (r, c, p, i, v) = decode(CSC_MAGIC, &bytes, true).map_err(|m| Error::format(path, m))?;
    CscMatrix::from_raw(r, c, p, i, v).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads SVMLight-style multi-label text: `l1,l2,... f:v f:v ...` per line,
/// with an optional `n_rows n_features n_labels` header. Without a header the
/// dimensions are inferred from the largest ids seen.
pub fn read_svmlight(path: &Path) -> Result<(CsrMatrix, CsrMatrix)> {
    let lines = read_lines(path)?;
    let mut iter = lines.iter().enumerate().peekable();
    let mut dims: Option<(usize, usize, usize)> = None;
    if let Some((_, first)) = iter.peek() {
        let parts: Vec<&str> = first.split_whitespace().collect();
        if parts.len() == 3 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
            let p: Vec<usize> = parts.iter().map(|p| p.parse().unwrap()).collect();
            dims = Some((p[0], p[1], p[2]));
            iter.next();
        }
    }
    let mut feats: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut labels: Vec<Vec<u32>> = Vec::new();
    let (mut max_f, mut max_l) = (0usize, 0usize);
    for (no, line) in iter {
        let no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace().peekable();
        let mut ls = Vec::new();
        if let Some(first) = parts.peek() {
            if !first.contains(':') {
                for l in first.split(',').filter(|s| !s.is_empty()) {
                    let l: u32 = l.parse().map_err(|_| parse_err(path, no, format!("bad label {l:?}")))?;
                    max_l = max_l.max(l as usize + 1);
                    ls.push(l);
                }
                parts.next();
            }
        }
        let mut fs_ = Vec::new();
        for p in parts {
            let (f, v) = p
                .split_once(':')
                .ok_or_else(|| parse_err(path, no, format!("expected feature:value, got {p:?}")))?;
            let f: u32 = f.parse().map_err(|_| parse_err(path, no, format!("bad feature id {f:?}")))?;
            let v: f64 = v.parse().map_err(|_| parse_err(path, no, format!("bad value {v:?}")))?;
            max_f = max_f.max(f as usize + 1);
            fs_.push((f, v));
        }
        feats.push(fs_);
        labels.push(ls);
    }
    let (n_feat, n_lab) = match dims {
        Some((n, d, l)) => {
            if n != feats.len() || max_f > d || max_l > l {
                return Err(Error::format(path, "header dimensions disagree with the data"));
            }
            (d, l)
        }
        None => (max_f, max_l),
    };
    let rows: Vec<SparseVector> = feats.into_iter().map(|p| SparseVector::from_pairs(n_feat, p)).collect();
    let x = CsrMatrix::from_rows(n_feat, &rows)?;
    let y = CsrMatrix::from_binary_rows(n_lab, &labels)?;
    Ok((x, y))
}

/// Writes SVMLight-style multi-label text with a dimension header.
pub fn write_svmlight(path: &Path, x: &CsrMatrix, y: &CsrMatrix) -> Result<()> {
    if x.n_rows() != y.n_rows() {
        return Err(Error::DimensionMismatch("X and Y row counts differ".into()));
    }
    let mut s = String::new();
    writeln!(s, "{} {} {}", x.n_rows(), x.n_cols(), y.n_cols()).unwrap();
    for r in 0..x.n_rows() {
        let ls: Vec<String> = y.row_pattern(r).iter().map(u32::to_string).collect();
        s.push_str(&ls.join(","));
        for (f, v) in x.row(r).iter() {
            write!(s, " {f}:{v}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

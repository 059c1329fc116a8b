//! Label indexing: PIFA label embeddings and a balanced B-ary label tree built
//! by recursive spherical k-means.
//!
//! A tree of depth `D` is stored as a [`ClusterChain`]: one parent array per
//! layer `t = 1..=D`, where layer `t` has `K_t` nodes and every node points at
//! one node of layer `t - 1` (`K_0 = 1` is the root and `K_D = L` are the
//! labels themselves).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::par::Executor;
use crate::sparse::{CsrMatrix, SparseVector, SparseView};

const CHAIN_MAGIC: &str = "treematch-chain";
const CHAIN_VERSION: u32 = 1;

/// One embedding row per label. Nonzero rows have unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddings(CsrMatrix);

impl LabelEmbeddings {
    /// Wraps a pre-built label feature matrix (e.g. featurized product titles),
    /// normalizing every nonzero row.
    pub fn from_matrix(matrix: &CsrMatrix) -> Self {
        let rows: Vec<SparseVector> = matrix
            .rows()
            .map(|r| {
                let mut v = r.to_owned(matrix.n_cols());
                v.l2_normalize();
                v
            })
            .collect();
        Self(CsrMatrix::from_rows(matrix.n_cols(), &rows).expect("same shape"))
    }

    pub fn n_labels(&self) -> usize {
        self.0.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.0.n_cols()
    }

    pub fn row(&self, label: usize) -> SparseView<'_> {
        self.0.row(label)
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }
}

/// Positive-instance feature aggregation: `z_l = v_l / |v_l|` with
/// `v_l = sum_i Y[i, l] x_i`. Labels without positives get a zero row.
pub fn pifa_embeddings(x: &CsrMatrix, y: &CsrMatrix, executor: &Executor) -> Result<LabelEmbeddings> {
    if x.n_rows() != y.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but Y has {}",
            x.n_rows(),
            y.n_rows()
        )));
    }
    let d = x.n_cols();
    let yt = y.transpose();
    let rows = executor.map_init(
        yt.n_rows(),
        || (vec![0.0f64; d], Vec::<u32>::new()),
        |(acc, touched), label| {
            for &i in yt.row_pattern(label) {
                for (f, v) in x.row(i as usize).iter() {
                    if acc[f as usize] == 0.0 {
                        touched.push(f);
                    }
                    acc[f as usize] += v;
                }
            }
            touched.sort_unstable();
            let pairs: Vec<(u32, f64)> = touched
                .drain(..)
                .map(|f| (f, std::mem::take(&mut acc[f as usize])))
                .collect();
            let mut v = SparseVector::from_pairs(d, pairs);
            v.l2_normalize();
            v
        },
    );
    Ok(LabelEmbeddings(CsrMatrix::from_rows(d, &rows)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Branching factor `B`.
    pub branching: usize,
    pub max_leaf: usize,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            branching: 32,
            max_leaf: 100,
            seed: 0,
            kmeans_max_iters: 20,
            kmeans_tol: 1e-4,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.branching < 2 {
            errs.push(format!("tree.branching must be >= 2, got {}", self.branching));
        }
        if self.max_leaf < 1 {
            errs.push(format!("tree.max_leaf must be >= 1, got {}", self.max_leaf));
        }
        if self.kmeans_tol.is_nan() || self.kmeans_tol < 0.0 {
            errs.push(format!("tree.kmeans_tol must be >= 0, got {}", self.kmeans_tol));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Depth `D = max(1, ceil(log_B(L / max_leaf)) + 1)`, computed in integers.
pub fn tree_depth(n_labels: usize, branching: usize, max_leaf: usize) -> usize {
    let mut clusters: u128 = 1;
    let mut depth = 1;
    while clusters * (max_leaf as u128) < n_labels as u128 {
        clusters *= branching as u128;
        depth += 1;
    }
    depth
}

/// Layer widths `K_1..=K_D` produced by balanced recursive splitting, where a
/// cluster of `m` labels is split into `min(B, m)` near-equal parts.
pub fn planned_widths(n_labels: usize, branching: usize, max_leaf: usize) -> Vec<usize> {
    let depth = tree_depth(n_labels, branching, max_leaf);
    // (cluster size, multiplicity); balanced splits keep at most two sizes.
    let mut sizes: Vec<(usize, usize)> = vec![(n_labels, 1)];
    let mut widths = Vec::with_capacity(depth);
    for _ in 1..depth {
        let mut next: Vec<(usize, usize)> = Vec::new();
        for &(size, mult) in &sizes {
            let parts = branching.min(size);
            let (base, extra) = (size / parts, size % parts);
            if extra > 0 {
                next.push((base + 1, extra * mult));
            }
            if parts > extra {
                next.push((base, (parts - extra) * mult));
            }
        }
        next.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::new();
        for (s, m) in next {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += m,
                _ => merged.push((s, m)),
            }
        }
        widths.push(merged.iter().map(|p| p.1).sum());
        sizes = merged;
    }
    widths.push(n_labels);
    widths
}

/// Group sizes for splitting `n` items into `g` near-equal parts.
fn balanced_sizes(n: usize, g: usize) -> Vec<usize> {
    (0..g).map(|c| n / g + usize::from(c < n % g)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansOutcome {
    /// Group index of every input row.
    pub assignment: Vec<u32>,
    /// Objective (sum of member cosine to group centroid) after each accepted
    /// iteration, over the nonzero rows.
    pub objective_history: Vec<f64>,
}

/// Sum of cosine similarities between rows and their group's normalized mean,
/// which equals the sum over groups of the norm of the group's row sum.
pub fn clustering_objective(rows: &[SparseView<'_>], assignment: &[u32], n_groups: usize) -> f64 {
    let mut sums: Vec<std::collections::BTreeMap<u32, f64>> = vec![Default::default(); n_groups];
    for (row, &g) in rows.iter().zip(assignment) {
        for (f, v) in row.iter() {
            *sums[g as usize].entry(f).or_insert(0.0) += v;
        }
    }
    sums.iter()
        .map(|s| s.values().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

/// Rows re-indexed into a compact local feature space.
struct LocalRows {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl LocalRows {
    fn new(rows: &[SparseView<'_>]) -> Self {
        let mut feats: Vec<u32> = rows.iter().flat_map(|r| r.indices.iter().copied()).collect();
        feats.sort_unstable();
        feats.dedup();
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            for (f, v) in r.iter() {
                indices.push(feats.binary_search(&f).unwrap() as u32);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            dim: feats.len(),
            indptr,
            indices,
            values,
        }
    }

    fn len(&self) -> usize {
        self.indptr.len() - 1
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi]
            .iter()
            .map(|&f| f as usize)
            .zip(self.values[lo..hi].iter().copied())
    }

    fn dot_dense(&self, i: usize, dense: &[f64]) -> f64 {
        self.row(i).map(|(f, v)| v * dense[f]).sum()
    }
}

/// Balanced spherical k-means: splits `rows` into `n_groups` groups whose
/// sizes differ by at most one.
///
/// Centroids are seeded by k-means++ on cosine distance. Each iteration ranks
/// rows by the margin between their best and second-best centroid similarity
/// and lets them claim their most similar group that still has capacity, then
/// recomputes centroids as normalized group means. Iteration stops when the
/// objective improves by less than `tol`, after `max_iters`, or when an
/// iteration would lower the objective (that iteration is discarded). Zero
/// rows take no part in clustering and are dealt round-robin to the smallest
/// groups at the end.
pub fn balanced_spherical_kmeans(
    rows: &[SparseView<'_>],
    n_groups: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansOutcome> {
    if n_groups == 0 || rows.len() < n_groups {
        return Err(Error::InvalidInput(format!(
            "cannot split {} rows into {n_groups} groups",
            rows.len()
        )));
    }
    let (nonzero, zero): (Vec<usize>, Vec<usize>) =
        (0..rows.len()).partition(|&i| rows[i].squared_norm() > 0.0);
    let mut assignment = vec![u32::MAX; rows.len()];
    let mut sizes = vec![0usize; n_groups];
    let mut history = Vec::new();

    if nonzero.len() <= n_groups {
        for (g, &i) in nonzero.iter().enumerate() {
            assignment[i] = g as u32;
            sizes[g] += 1;
        }
    } else {
        let sub: Vec<SparseView<'_>> = nonzero.iter().map(|&i| rows[i]).collect();
        let local = LocalRows::new(&sub);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids = kmeanspp_init(&local, n_groups, &mut rng);
        let mut current: Option<(Vec<u32>, f64)> = None;
        for _ in 0..max_iters.max(1) {
            let assign = balanced_assign(&local, &centroids, n_groups);
            let (next_centroids, objective) = recompute_centroids(&local, &assign, n_groups);
            if let Some((_, prev)) = &current {
                if objective < *prev {
                    break;
                }
                let improvement = objective - prev;
                current = Some((assign, objective));
                history.push(objective);
                if improvement < tol {
                    break;
                }
            } else {
                current = Some((assign, objective));
                history.push(objective);
            }
            centroids = next_centroids;
        }
        let (assign, _) = current.expect("at least one iteration");
        for (k, &i) in nonzero.iter().enumerate() {
            assignment[i] = assign[k];
            sizes[assign[k] as usize] += 1;
        }
    }

    for &i in &zero {
        let g = (0..n_groups).min_by_key(|&g| (sizes[g], g)).unwrap();
        assignment[i] = g as u32;
        sizes[g] += 1;
    }
    Ok(KMeansOutcome {
        assignment,
        objective_history: history,
    })
}

fn kmeanspp_init(local: &LocalRows, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = local.len();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut best_sim = vec![f64::NEG_INFINITY; n];
    let mut centroid = vec![0.0; local.dim];
    let mut centroids = Vec::with_capacity(k);
    let mut pick = rng.gen_range(0..n);
    loop {
        chosen.push(pick);
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (f, v) in local.row(pick) {
            centroid[f] = v;
        }
        centroids.push(centroid.clone());
        if chosen.len() == k {
            break;
        }
        for (i, best) in best_sim.iter_mut().enumerate() {
            *best = best.max(local.dot_dense(i, &centroid));
        }
        let weights: Vec<f64> = best_sim
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if chosen.contains(&i) {
                    0.0
                } else {
                    let dist = (1.0 - s).max(0.0);
                    dist * dist
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    if target < *w {
                        idx = i;
                        break;
                    }
                    target -= w;
                }
            }
            if chosen.contains(&idx) {
                (0..n).rev().find(|i| weights[*i] > 0.0).unwrap()
            } else {
                idx
            }
        } else {
            let remaining: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            remaining[rng.gen_range(0..remaining.len())]
        };
    }
    centroids
}

fn balanced_assign(local: &LocalRows, centroids: &[Vec<f64>], n_groups: usize) -> Vec<u32> {
    let n = local.len();
    let sims: Vec<Vec<f64>> = (0..n)
        .map(|i| centroids.iter().map(|c| local.dot_dense(i, c)).collect())
        .collect();
    let margin = |s: &[f64]| {
        let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &v in s {
            if v > best {
                second = best;
                best = v;
            } else if v > second {
                second = v;
            }
        }
        if second.is_finite() {
            best - second
        } else {
            0.0
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    let margins: Vec<f64> = sims.iter().map(|s| margin(s)).collect();
    order.sort_by(|&a, &b| margins[b].total_cmp(&margins[a]).then(a.cmp(&b)));

    let base = n / n_groups;
    let extra = n % n_groups;
    let mut sizes = vec![0usize; n_groups];
    let mut ceil_used = 0;
    let mut assign = vec![0u32; n];
    let mut prefs: Vec<usize> = Vec::with_capacity(n_groups);
    for i in order {
        prefs.clear();
        prefs.extend(0..n_groups);
        prefs.sort_by(|&a, &b| sims[i][b].total_cmp(&sims[i][a]).then(a.cmp(&b)));
        let g = *prefs
            .iter()
            .find(|&&g| sizes[g] < base || (sizes[g] == base && ceil_used < extra))
            .expect("total capacity equals row count");
        if sizes[g] == base {
            ceil_used += 1;
        }
        sizes[g] += 1;
        assign[i] = g as u32;
    }
    assign
}

fn recompute_centroids(local: &LocalRows, assign: &[u32], n_groups: usize) -> (Vec<Vec<f64>>, f64) {
    let mut centroids = vec![vec![0.0; local.dim]; n_groups];
    for (i, &g) in assign.iter().enumerate() {
        let c = &mut centroids[g as usize];
        for (f, v) in local.row(i) {
            c[f] += v;
        }
    }
    let mut objective = 0.0;
    for c in &mut centroids {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        objective += norm;
        if norm > 0.0 {
            c.iter_mut().for_each(|v| *v /= norm);
        }
    }
    (centroids, objective)
}

/// One layer of a [`ClusterChain`]: the indicator matrix `C(t)` stored as a
/// parent array, plus its transpose as grouped child lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainLayer {
    parent: Vec<u32>,
    n_parents: usize,
    child_ptr: Vec<usize>,
    children: Vec<u32>,
}

impl ChainLayer {
    fn new(parent: Vec<u32>, n_parents: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_parents + 1];
        for &p in &parent {
            if p as usize >= n_parents {
                return Err(Error::InvalidInput(format!(
                    "parent id {p} out of range for {n_parents} parents"
                )));
            }
            counts[p as usize + 1] += 1;
        }
        for k in 0..n_parents {
            counts[k + 1] += counts[k];
        }
        let child_ptr = counts.clone();
        let mut next = counts;
        let mut children = vec![0u32; parent.len()];
        for (j, &p) in parent.iter().enumerate() {
            children[next[p as usize]] = j as u32;
            next[p as usize] += 1;
        }
        Ok(Self {
            parent,
            n_parents,
            child_ptr,
            children,
        })
    }

    /// `K_t`.
    pub fn width(&self) -> usize {
        self.parent.len()
    }

    /// `K_{t-1}`.
    pub fn n_parents(&self) -> usize {
        self.n_parents
    }

    pub fn parent(&self, node: usize) -> u32 {
        self.parent[node]
    }

    pub fn parents(&self) -> &[u32] {
        &self.parent
    }

    /// Children of `parent`, in ascending node id.
    pub fn children(&self, parent: usize) -> &[u32] {
        &self.children[self.child_ptr[parent]..self.child_ptr[parent + 1]]
    }

    pub fn max_children(&self) -> usize {
        self.child_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }
}

/// The label tree as the chain of indicator matrices `C(1..=D)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterChain {
    layers: Vec<ChainLayer>,
}

impl ClusterChain {
    /// Builds a chain from per-layer parent arrays, `parents[t-1][j]` being the
    /// parent (in layer `t - 1`) of node `j` of layer `t`.
    pub fn from_parents(parents: Vec<Vec<u32>>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::InvalidInput("a cluster chain needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(parents.len());
        let mut n_parents = 1;
        for p in parents {
            let layer = ChainLayer::new(p, n_parents)?;
            if (0..n_parents).any(|k| layer.children(k).is_empty()) {
                return Err(Error::InvalidInput(format!(
                    "layer {}: every node of the previous layer needs a child",
                    layers.len() + 1
                )));
            }
            n_parents = layer.width();
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    /// Balanced tree over labels in id order: every split cuts a contiguous
    /// run into `min(B, m)` near-equal parts. Used for synthetic models.
    pub fn contiguous(n_labels: usize, branching: usize, max_leaf: usize) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::InvalidInput("empty label set".into()));
        }
        let depth = tree_depth(n_labels, branching, max_leaf);
        let mut clusters: Vec<(usize, usize)> = vec![(0, n_labels)];
        let mut parents = Vec::with_capacity(depth);
        for _ in 1..depth {
            let mut next = Vec::new();
            let mut parent = Vec::new();
            for (k, &(lo, hi)) in clusters.iter().enumerate() {
                let mut start = lo;
                for size in balanced_sizes(hi - lo, branching.min(hi - lo)) {
                    next.push((start, start + size));
                    parent.push(k as u32);
                    start += size;
                }
            }
            parents.push(parent);
            clusters = next;
        }
        let mut leaf = vec![0u32; n_labels];
        for (k, &(lo, hi)) in clusters.iter().enumerate() {
            leaf[lo..hi].iter_mut().for_each(|p| *p = k as u32);
        }
        parents.push(leaf);
        Self::from_parents(parents)
    }

    /// Depth `D`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n_labels(&self) -> usize {
        self.layers.last().unwrap().width()
    }

    /// Layer `t` for `t` in `1..=D`.
    pub fn layer(&self, t: usize) -> &ChainLayer {
        &self.layers[t - 1]
    }

    pub fn layers(&self) -> &[ChainLayer] {
        &self.layers
    }

    /// `(K_1, ..., K_D)`.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(ChainLayer::width).collect()
    }

    /// Node ids of the ancestors of `label` at layers `1..=D` (the last entry
    /// is the label itself).
    pub fn path(&self, label: usize) -> Vec<u32> {
        let mut path = vec![0u32; self.depth()];
        let mut node = label as u32;
        for t in (1..=self.depth()).rev() {
            path[t - 1] = node;
            node = self.layer(t).parent(node as usize);
        }
        path
    }

    /// Checks the chain invariants: every node reaches the root, sibling
    /// groups within a layer differ in size by at most one, and leaf clusters
    /// hold at most `max_leaf` labels.
    pub fn check_invariants(&self, max_leaf: usize) -> std::result::Result<(), String> {
        let mut expected_parents = 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let t = i + 1;
            if layer.n_parents() != expected_parents {
                return Err(format!("layer {t}: parent count mismatch"));
            }
            let sizes: Vec<usize> = (0..layer.n_parents()).map(|k| layer.children(k).len()).collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            if *lo == 0 {
                return Err(format!("layer {t}: a parent has no children"));
            }
            if hi - lo > 1 {
                return Err(format!("layer {t}: cluster sizes range {lo}..{hi}"));
            }
            expected_parents = layer.width();
        }
        // Sibling balance is checked per parent at the intermediate layers:
        // every split of m labels yields parts of near-equal label counts.
        let leaf_sizes = self.leaf_label_counts();
        for t in 1..self.depth() {
            let counts = self.label_counts_at(t);
            for k in 0..self.layer(t).n_parents() {
                let kids = self.layer(t).children(k);
                let c: Vec<usize> = kids.iter().map(|&j| counts[j as usize]).collect();
                if c.iter().max().unwrap() - c.iter().min().unwrap() > 1 {
                    return Err(format!("layer {t}: siblings under {k} are unbalanced: {c:?}"));
                }
            }
        }
        if self.depth() > 1 {
            if let Some(big) = leaf_sizes.iter().find(|&&s| s > max_leaf) {
                return Err(format!("leaf cluster with {big} labels exceeds max_leaf {max_leaf}"));
            }
        }
        for label in 0..self.n_labels() {
            let path = self.path(label);
            if self.layer(1).parent(path[0] as usize) != 0 {
                return Err(format!("label {label} does not reach the root"));
            }
        }
        Ok(())
    }

    /// Number of labels under each node of layer `t`.
    pub fn label_counts_at(&self, t: usize) -> Vec<usize> {
        let mut counts = vec![1usize; self.n_labels()];
        for s in (t + 1..=self.depth()).rev() {
            let layer = self.layer(s);
            let mut up = vec![0usize; layer.n_parents()];
            for (j, c) in counts.iter().enumerate() {
                up[layer.parent(j) as usize] += c;
            }
            counts = up;
        }
        counts
    }

    fn leaf_label_counts(&self) -> Vec<usize> {
        let last = self.layers.last().unwrap();
        (0..last.n_parents()).map(|k| last.children(k).len()).collect()
    }

    /// Versioned text form:
    ///
    /// ```text
    /// treematch-chain 1
    /// depth <D>
    /// layer <t> <K_t> <K_{t-1}>
    /// <space separated parent id of every node of layer t>
    /// ...
    /// end
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHAIN_MAGIC} {CHAIN_VERSION}").unwrap();
        writeln!(s, "depth {}", self.depth()).unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(s, "layer {} {} {}", i + 1, layer.width(), layer.n_parents()).unwrap();
            let mut first = true;
            for p in &layer.parent {
                if !first {
                    s.push(' ');
                }
                first = false;
                write!(s, "{p}").unwrap();
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| format!("unexpected end of file, expected {what}"));
        let header = next("header")?;
        if header != format!("{CHAIN_MAGIC} {CHAIN_VERSION}") {
            return Err(format!("bad header {header:?}"));
        }
        let depth: usize = next("depth")?
            .strip_prefix("depth ")
            .ok_or("expected 'depth'")?
            .parse()
            .map_err(|e| format!("depth: {e}"))?;
        let mut parents = Vec::with_capacity(depth);
        for t in 1..=depth {
            let head: Vec<usize> = next("layer header")?
                .strip_prefix("layer ")
                .ok_or("expected 'layer'")?
                .split(' ')
                .map(|v| v.parse().map_err(|e| format!("layer header: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if head.len() != 3 || head[0] != t {
                return Err(format!("malformed header for layer {t}"));
            }
            let ids: Vec<u32> = next("parent ids")?
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|v| v.parse().map_err(|e| format!("layer {t}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if ids.len() != head[1] {
                return Err(format!("layer {t}: expected {} ids, found {}", head[1], ids.len()));
            }
            parents.push(ids);
        }
        if next("end")? != "end" {
            return Err("expected 'end'".into());
        }
        let chain = Self::from_parents(parents).map_err(|e| e.to_string())?;
        Ok(chain)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|msg| Error::format(path, msg))
    }
}

/// Recursively partitions the labels top-down with balanced spherical
/// k-means. Sibling clusters of a layer are split concurrently.
pub fn build_tree(z: &LabelEmbeddings, config: &TreeConfig, executor: &Executor) -> Result<ClusterChain> {
    config.validate().map_err(Error::Config)?;
    let n_labels = z.n_labels();
    if n_labels == 0 {
        return Err(Error::InvalidInput("empty label set".into()));
    }
    let depth = tree_depth(n_labels, config.branching, config.max_leaf);
    let mut clusters: Vec<Vec<u32>> = vec![(0..n_labels as u32).collect()];
    let mut parents = Vec::with_capacity(depth);
    for t in 1..depth {
        let splits: Vec<Result<Vec<Vec<u32>>>> = executor.map(clusters.len(), |k| {
            let members = &clusters[k];
            let groups = config.branching.min(members.len());
            let rows: Vec<SparseView<'_>> = members.iter().map(|&l| z.row(l as usize)).collect();
            let outcome = balanced_spherical_kmeans(
                &rows,
                groups,
                derive_seed(config.seed, t as u64, k as u64),
                config.kmeans_max_iters,
                config.kmeans_tol,
            )?;
            let mut parts = vec![Vec::new(); groups];
            for (&label, &g) in members.iter().zip(&outcome.assignment) {
                parts[g as usize].push(label);
            }
            Ok(parts)
        });
        let mut next = Vec::new();
        let mut parent = Vec::new();
        for (k, split) in splits.into_iter().enumerate() {
            for part in split? {
                parent.push(k as u32);
                next.push(part);
            }
        }
        log::debug!("tree layer {t}: {} clusters", next.len());
        parents.push(parent);
        clusters = next;
    }
    let mut leaf = vec![0u32; n_labels];
    for (k, members) in clusters.iter().enumerate() {
        for &l in members {
            leaf[l as usize] = k as u32;
        }
    }
    parents.push(leaf);
    ClusterChain::from_parents(parents)
}

/// A uniformly random balanced assignment, used as a clustering baseline.
pub fn random_balanced_assignment(n: usize, n_groups: usize, seed: u64) -> Vec<u32> {
    let mut slots: Vec<u32> = balanced_sizes(n, n_groups)
        .into_iter()
        .enumerate()
        .flat_map(|(g, s)| std::iter::repeat_n(g as u32, s))
        .collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    slots
}

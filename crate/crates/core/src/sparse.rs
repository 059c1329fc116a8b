//! Sparse vectors and compressed sparse row/column matrices.
//!
//! Feature ids are `u32`; values are `f64`. All containers keep indices
//! strictly ascending within a row (or column) and never store explicit zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Borrowed view of a sparse row or column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseView<'a> {
    pub indices: &'a [u32],
    pub values: &'a [f64],
}

impl<'a> SparseView<'a> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + 'a {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// Sparse-sparse dot product by merging the two sorted index lists.
    pub fn dot(&self, other: &SparseView<'_>) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Dot product against a dense vector indexed by feature id.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }

    pub fn to_owned(&self, dim: usize) -> SparseVector {
        SparseVector {
            dim,
            indices: self.indices.to_vec(),
            values: self.values.to_vec(),
        }
    }
}

/// A sparse vector in `R^dim`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from already sorted entries, validating the invariants.
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "sparse vector has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "sparse vector indices must be strictly ascending".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature id {last} out of range for dimension {dim}"
                )));
            }
        }
        if values.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "sparse vector values must be finite and nonzero".into(),
            ));
        }
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from unordered `(index, value)` pairs, summing duplicates
    /// and dropping entries that end up exactly zero.
    ///
    /// Panics if an index is out of range.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            assert!((i as usize) < dim, "feature id {i} out of range for {dim}");
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let mut out = Self {
            dim,
            indices,
            values,
        };
        out.drop_zeros();
        out
    }

    /// Builds a vector from a dense slice, keeping nonzero entries.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        Self {
            dim: dense.len(),
            indices,
            values,
        }
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|v| *v != 0.0) {
            return;
        }
        let mut k = 0;
        for j in 0..self.indices.len() {
            if self.values[j] != 0.0 {
                self.indices[k] = self.indices[j];
                self.values[k] = self.values[j];
                k += 1;
            }
        }
        self.indices.truncate(k);
        self.values.truncate(k);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn view(&self) -> SparseView<'_> {
        SparseView {
            indices: &self.indices,
            values: &self.values,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.view().iter()
    }

    pub fn norm(&self) -> f64 {
        self.view().norm()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        self.view().dot(&other.view())
    }

    /// Scales the vector to unit Euclidean norm. Empty vectors are left as is.
    pub fn l2_normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= norm);
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles a matrix from raw CSR arrays, checking structural invariants.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != n_rows + 1 || indptr[0] != 0 {
            return Err(Error::InvalidInput("malformed CSR row pointer".into()));
        }
        if indptr.windows(2).any(|w| w[0] > w[1]) || indptr[n_rows] != indices.len() {
            return Err(Error::InvalidInput("malformed CSR row pointer".into()));
        }
        if indices.len() != values.len() {
            return Err(Error::InvalidInput(
                "CSR index and value arrays differ in length".into(),
            ));
        }
        for r in 0..n_rows {
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(format!(
                    "row {r}: column indices not strictly ascending"
                )));
            }
            if row.last().is_some_and(|&c| c as usize >= n_cols) {
                return Err(Error::DimensionMismatch(format!(
                    "row {r}: column index out of range for {n_cols} columns"
                )));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_rows(n_cols: usize, rows: &[SparseVector]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            if row.dim() > n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {r} has dimension {} but matrix has {n_cols} columns",
                    row.dim()
                )));
            }
            indices.extend_from_slice(row.indices());
            values.extend_from_slice(row.values());
            indptr.push(indices.len());
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Binary matrix (all stored values 1) from per-row column lists.
    pub fn from_binary_rows(n_cols: usize, rows: &[Vec<u32>]) -> Result<Self> {
        let rows: Vec<SparseVector> = rows
            .iter()
            .map(|cols| {
                let mut cols = cols.clone();
                cols.sort_unstable();
                cols.dedup();
                let values = vec![1.0; cols.len()];
                SparseVector::new(n_cols, cols, values)
            })
            .collect::<Result<_>>()?;
        Self::from_rows(n_cols, &rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> SparseView<'_> {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        SparseView {
            indices: &self.indices[lo..hi],
            values: &self.values[lo..hi],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = SparseView<'_>> + '_ {
        (0..self.n_rows).map(move |r| self.row(r))
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            for (c, v) in self.row(r).iter() {
                let slot = next[c as usize];
                indices[slot] = r as u32;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    /// Column ids of the stored entries of row `r`, ignoring values.
    pub fn row_pattern(&self, r: usize) -> &[u32] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }
}

/// Compressed sparse column matrix, used for layer weights (`d x K`).
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        // Same layout as CSR of the transpose.
        let t = CsrMatrix::from_raw(n_cols, n_rows, col_ptr, row_idx, values)?;
        Ok(Self {
            n_rows,
            n_cols,
            col_ptr: t.indptr,
            row_idx: t.indices,
            values: t.values,
        })
    }

    pub fn from_columns(n_rows: usize, columns: Vec<SparseVector>) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for (j, col) in columns.iter().enumerate() {
            if col.dim() > n_rows {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} has dimension {} but matrix has {n_rows} rows",
                    col.dim()
                )));
            }
            row_idx.extend_from_slice(col.indices());
            values.extend_from_slice(col.values());
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols: columns.len(),
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[u32] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> SparseView<'_> {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        SparseView {
            indices: &self.row_idx[lo..hi],
            values: &self.values[lo..hi],
        }
    }

    /// Hard thresholding: keeps an entry iff `|w| > epsilon`.
    pub fn pruned(&self, epsilon: f64) -> CscMatrix {
        let mut col_ptr = Vec::with_capacity(self.n_cols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..self.n_cols {
            for (i, v) in self.column(j).iter() {
                if v.abs() > epsilon {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

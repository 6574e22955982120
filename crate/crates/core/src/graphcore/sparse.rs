use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// CSR sparsity structure of a square matrix.
///
/// Columns within a row are strictly increasing. `row_of` duplicates the row
/// index per stored entry so edge-wise loops need no search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsePattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    row_of: Vec<usize>,
}

impl SparsePattern {
    /// Build from `(row, col)` pairs. Pairs may come in any order; duplicates
    /// are rejected.
    pub fn from_entries(n: usize, entries: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = entries.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidGraph(format!(
                    "duplicate entry ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut row_of = Vec::with_capacity(sorted.len());
        for &(r, c) in &sorted {
            if r >= n {
                return Err(Error::NodeOutOfRange { id: r, n });
            }
            if c >= n {
                return Err(Error::NodeOutOfRange { id: c, n });
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            row_of.push(r);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, row_ptr, col_idx, row_of })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row_of(&self) -> &[usize] {
        &self.row_of
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    /// Position of entry `(r, c)` in the value array, if stored.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        let start = range.start;
        self.col_idx[range].binary_search(&c).ok().map(|k| start + k)
    }

    /// Iterate `(pos, row, col)` over every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.row_of
            .iter()
            .zip(&self.col_idx)
            .enumerate()
            .map(|(p, (&r, &c))| (p, r, c))
    }
}

/// Square CSR matrix sharing an immutable pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pattern: Arc<SparsePattern>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(pattern: Arc<SparsePattern>, vals: Vec<f64>) -> Result<Self> {
        if vals.len() != pattern.nnz() {
            return Err(Error::Shape(format!(
                "{} values for a pattern with {} entries",
                vals.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, vals })
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let entries: Vec<_> = sorted.iter().map(|&(r, c, _)| (r, c)).collect();
        let pattern = SparsePattern::from_entries(n, &entries)?;
        let vals = sorted.iter().map(|t| t.2).collect();
        Ok(Self { pattern: Arc::new(pattern), vals })
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.find(r, c).map_or(0.0, |p| self.vals[p])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n())
            .map(|r| self.pattern.row_range(r).map(|p| self.vals[p]).sum())
            .collect()
    }

    /// `self * x` for a dense `n × f` right-hand side.
    pub fn mul_dense(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        spmm(&self.pattern, &self.vals, x)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n(), self.n()));
        for (p, r, c) in self.pattern.entries() {
            d[[r, c]] = self.vals[p];
        }
        d
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.pattern.entries().all(|(p, r, c)| match self.pattern.find(c, r) {
            Some(q) => (self.vals[p] - self.vals[q]).abs() <= tol,
            None => false,
        })
    }
}

/// Sparse-times-dense product over an explicit pattern and value slice.
///
/// Row accumulation order is fixed (CSR order), so results are deterministic.
pub fn spmm(pattern: &SparsePattern, vals: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
    let f = x.ncols();
    let mut out = Array2::zeros((pattern.n(), f));
    for r in 0..pattern.n() {
        let mut row = out.row_mut(r);
        for p in pattern.row_range(r) {
            let v = vals[p];
            if v == 0.0 {
                continue;
            }
            row.scaled_add(v, &x.row(pattern.col_idx()[p]));
        }
    }
    out
}

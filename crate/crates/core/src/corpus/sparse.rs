use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse column matrix of non-negative weights.
///
/// Row indices within a column are strictly increasing, so iteration order
/// (and therefore every floating-point reduction over it) is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from (row, col, value) triples. Zero values are dropped;
    /// negative, non-finite, out-of-range or duplicate entries are rejected.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Dimension {
                    expected: format!("index within {rows}x{cols}"),
                    found: format!("({r}, {c})"),
                });
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!("entry ({r}, {c}) = {v} is not a finite non-negative value")));
            }
            if v > 0.0 {
                sorted.push((r, c, v));
            }
        }
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::Data(format!("duplicate entry ({}, {})", w[0].0, w[0].1)));
        }
        let mut col_ptr = vec![0usize; cols + 1];
        for &(_, c, _) in &sorted {
            col_ptr[c + 1] += 1;
        }
        for c in 0..cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            col_ptr,
            row_idx: sorted.iter().map(|t| t.0 as u32).collect(),
            values: sorted.iter().map(|t| t.2).collect(),
        })
    }

    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        let (rows, cols) = dense.dim();
        let triplets: Vec<_> = dense
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((r, c), &v)| (r, c, v))
            .collect();
        Self::from_triplets(rows, cols, &triplets)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (r, c, v) in self.triplets() {
            out[[r, c]] = v;
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// (row, value) pairs of column `c`, rows ascending.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&r, &v)| (r as usize, v))
    }

    /// All stored entries in column-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.cols).flat_map(move |c| self.column(c).map(move |(r, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[span.clone()].binary_search(&(r as u32)) {
            Ok(i) => self.values[span.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over all rows × cols cells, zeros included.
    pub fn mean(&self) -> f64 {
        let cells = (self.rows * self.cols) as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.values.iter().sum::<f64>() / cells
        }
    }

    /// Apply `f` to every stored value; the sparsity pattern is kept.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v);
        }
        out
    }

    /// Keep only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> SparseMatrix {
        let mut col_ptr = Vec::with_capacity(cols.len() + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for &c in cols {
            let span = self.col_ptr[c]..self.col_ptr[c + 1];
            row_idx.extend_from_slice(&self.row_idx[span.clone()]);
            values.extend_from_slice(&self.values[span]);
            col_ptr.push(values.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: cols.len(),
            col_ptr,
            row_idx,
            values,
        }
    }
}

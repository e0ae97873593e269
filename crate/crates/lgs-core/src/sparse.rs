//! Compressed sparse row storage for the matrices that stay constant during a
//! run: the raw-graph propagation operators and the node feature matrix. Only
//! the products the training loop needs are provided; none of them allocate
//! intermediate dense copies.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;

/// Immutable sparse matrix in CSR layout.
#[derive(Clone, Debug)]
pub struct Csr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triples. Duplicate coordinates are summed.
    pub fn from_triples(rows: usize, cols: usize, mut triples: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &triples {
            assert!(r < rows && c < cols, "triple ({r},{c}) outside {rows}x{cols}");
        }
        triples.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut col_idx: Vec<usize> = Vec::with_capacity(triples.len());
        let mut values: Vec<f64> = Vec::with_capacity(triples.len());
        let mut coords: Vec<(usize, usize)> = Vec::with_capacity(triples.len());
        for (r, c, v) in triples {
            if coords.last() == Some(&(r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                coords.push((r, c));
                col_idx.push(c);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _) in &coords {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { rows, cols, row_ptr, col_idx, values }
    }

    /// Build from a dense matrix, keeping entries with |x| > 0.
    pub fn from_dense(m: &Matrix) -> Self {
        let mut triples = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    triples.push((i, j, v));
                }
            }
        }
        Csr::from_triples(m.rows(), m.cols(), triples)
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

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out[(i, j)] += v;
            }
        }
        out
    }

    /// `out = self * b` for dense `b`; optional per-nonzero scale factors
    /// (the dropout mask) multiply each stored value.
    pub fn mul_dense(&self, b: &Matrix, nnz_scale: Option<&[f64]>, out: &mut Matrix) {
        assert_eq!(
            self.cols,
            b.rows(),
            "sparse-dense product mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            b.rows(),
            b.cols()
        );
        assert_eq!(out.shape(), (self.rows, b.cols()));
        if let Some(s) = nnz_scale {
            assert_eq!(s.len(), self.nnz());
        }
        out.fill(0.0);
        let w = b.cols();
        for i in 0..self.rows {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            for k in lo..hi {
                let j = self.col_idx[k];
                let mut v = self.values[k];
                if let Some(s) = nnz_scale {
                    v *= s[k];
                }
                if v == 0.0 {
                    continue;
                }
                let brow = b.row(j);
                let orow = &mut out.row_mut(i)[..w];
                for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += v * bv;
                }
            }
        }
    }

    /// `out += selfᵀ * b` for dense `b`, with the same optional nonzero scales.
    /// This is the gradient counterpart of [`Csr::mul_dense`].
    pub fn tr_mul_dense_acc(&self, b: &Matrix, nnz_scale: Option<&[f64]>, out: &mut Matrix) {
        assert_eq!(b.rows(), self.rows);
        assert_eq!(out.shape(), (self.cols, b.cols()));
        if let Some(s) = nnz_scale {
            assert_eq!(s.len(), self.nnz());
        }
        let w = b.cols();
        for i in 0..self.rows {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let brow = b.row(i);
            for k in lo..hi {
                let j = self.col_idx[k];
                let mut v = self.values[k];
                if let Some(s) = nnz_scale {
                    v *= s[k];
                }
                if v == 0.0 {
                    continue;
                }
                let orow = &mut out.row_mut(j)[..w];
                for (o, bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += v * bv;
                }
            }
        }
    }
}

//! Compressed sparse row storage for the stiffness, mass and step matrices.

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

/// Triplet accumulator. Duplicate `(row, col)` entries are summed on
/// [`finalize`](TripletBuilder::finalize).
#[derive(Debug)]
pub struct TripletBuilder {
    inner: TriMat<f64>,
}

impl TripletBuilder {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { inner: TriMat::new((rows, cols)) }
    }

    pub fn with_capacity(rows: usize, cols: usize, nnz: usize) -> Self {
        Self { inner: TriMat::with_capacity((rows, cols), nnz) }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.inner.add_triplet(row, col, value);
    }

    pub fn finalize(self) -> SparseMatrix {
        SparseMatrix { inner: self.inner.to_csr() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    inner: CsMat<f64>,
}

impl SparseMatrix {
    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut b = TripletBuilder::with_capacity(n, n, n);
        for (i, &v) in values.iter().enumerate() {
            b.add(i, i, v);
        }
        b.finalize()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.inner.get(row, col).copied().unwrap_or(0.0)
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.inner
            .outer_iterator()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(j, &v)| (i, j, v)).collect::<Vec<_>>())
    }

    /// Entries `(col, value)` of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.inner
            .outer_view(i)
            .into_iter()
            .flat_map(|r| r.iter().map(|(j, &v)| (j, v)).collect::<Vec<_>>())
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inner.cols());
        debug_assert_eq!(y.len(), self.inner.rows());
        for (i, row) in self.inner.outer_iterator().enumerate() {
            y[i] = row.iter().map(|(j, &v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (r, c) = self.shape();
        if x.len() != r {
            return Err(Error::DimensionMismatch { expected: r, found: x.len() });
        }
        if y.len() != c {
            return Err(Error::DimensionMismatch { expected: c, found: y.len() });
        }
        Ok(self
            .inner
            .outer_iterator()
            .enumerate()
            .map(|(i, row)| x[i] * row.iter().map(|(j, &v)| v * y[j]).sum::<f64>())
            .sum())
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix { inner: self.inner.transpose_view().to_csr() }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let (r, c) = self.shape();
        r == c && self.iter().all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let (r, c) = self.shape();
        let mut d = nalgebra::DMatrix::zeros(r, c);
        for (i, j, v) in self.iter() {
            d[(i, j)] += v;
        }
        d
    }
}

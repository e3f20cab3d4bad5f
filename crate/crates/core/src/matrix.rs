//! Small dense row-major matrix and sparse-vector helpers.

use serde::{Deserialize, Serialize};

/// A sparse feature vector: `(index, value)` pairs with strictly increasing indices.
pub type SparseVec = [(usize, f64)];

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product of a sparse vector with a dense row. Indices past the row are ignored.
#[inline]
pub fn sparse_dot(x: &SparseVec, row: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &(i, v) in x {
        if let Some(w) = row.get(i) {
            acc += v * w;
        }
    }
    acc
}

/// `row += alpha * x`, ignoring indices past the row.
#[inline]
pub fn sparse_axpy(alpha: f64, x: &SparseVec, row: &mut [f64]) {
    for &(i, v) in x {
        if let Some(w) = row.get_mut(i) {
            *w += alpha * v;
        }
    }
}

pub fn dense_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Numerically stable `log(sum(exp(v)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    // The maximum contributes exactly one; log1p keeps the remainder when it is tiny.
    let mut seen_max = false;
    let mut rest = 0.0;
    for &v in values {
        if v == max && !seen_max {
            seen_max = true;
        } else {
            rest += (v - max).exp();
        }
    }
    max + rest.ln_1p()
}

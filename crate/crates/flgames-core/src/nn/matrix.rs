//! Dense row-major matrices in 64-bit floats.
//!
//! The three multiply kernels cover every product the forward and backward
//! passes need without ever materializing a transpose: both operands are
//! always walked along contiguous rows. Each kernel has a sequential
//! reference implementation; with the `parallel` feature the public entry
//! points fan rows out across the rayon pool. Every output row is produced
//! by exactly one task with the same inner loop as the sequential path, so
//! results are bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Products smaller than this many multiply-adds stay sequential.
#[cfg(feature = "parallel")]
const PAR_WORK_THRESHOLD: usize = 1 << 16;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copies the given source rows into a new matrix, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape(format!(
                "{}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// `A · Bᵀ` where `A` is `m×k` and `B` is `n×k`; result is `m×n`.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "inner dimensions differ");
        #[cfg(feature = "parallel")]
        {
            if self.rows * self.cols * other.rows >= PAR_WORK_THRESHOLD {
                let mut out = Matrix::zeros(self.rows, other.rows);
                out.data
                    .par_chunks_mut(other.rows)
                    .zip(self.data.par_chunks(self.cols))
                    .for_each(|(out_row, a_row)| nt_row(a_row, other, out_row));
                return out;
            }
        }
        self.matmul_nt_seq(other)
    }

    /// Sequential reference for [`Matrix::matmul_nt`].
    pub fn matmul_nt_seq(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            nt_row(self.row(r), other, out.row_mut(r));
        }
        out
    }

    /// `A · B` where `A` is `m×k` and `B` is `k×n`; result is `m×n`.
    pub fn matmul_nn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        #[cfg(feature = "parallel")]
        {
            if self.rows * self.cols * other.cols >= PAR_WORK_THRESHOLD {
                let mut out = Matrix::zeros(self.rows, other.cols);
                out.data
                    .par_chunks_mut(other.cols)
                    .zip(self.data.par_chunks(self.cols))
                    .for_each(|(out_row, a_row)| nn_row(a_row, other, out_row));
                return out;
            }
        }
        self.matmul_nn_seq(other)
    }

    /// Sequential reference for [`Matrix::matmul_nn`].
    pub fn matmul_nn_seq(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            nn_row(self.row(r), other, out.row_mut(r));
        }
        out
    }

    /// `Aᵀ · B` where `A` is `k×m` and `B` is `k×n`; result is `m×n`.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "inner dimensions differ");
        #[cfg(feature = "parallel")]
        {
            if self.rows * self.cols * other.cols >= PAR_WORK_THRESHOLD {
                let mut out = Matrix::zeros(self.cols, other.cols);
                out.data
                    .par_chunks_mut(other.cols)
                    .enumerate()
                    .for_each(|(j, out_row)| tn_row(self, other, j, out_row));
                return out;
            }
        }
        self.matmul_tn_seq(other)
    }

    /// Sequential reference for [`Matrix::matmul_tn`].
    pub fn matmul_tn_seq(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for j in 0..self.cols {
            tn_row(self, other, j, out.row_mut(j));
        }
        out
    }
}

fn nt_row(a_row: &[f64], b: &Matrix, out_row: &mut [f64]) {
    for (j, out) in out_row.iter_mut().enumerate() {
        let b_row = b.row(j);
        let mut sum = 0.0;
        for (&x, &y) in a_row.iter().zip(b_row) {
            sum += x * y;
        }
        *out = sum;
    }
}

fn nn_row(a_row: &[f64], b: &Matrix, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (k, &a) in a_row.iter().enumerate() {
        let b_row = b.row(k);
        for (out, &y) in out_row.iter_mut().zip(b_row) {
            *out += a * y;
        }
    }
}

fn tn_row(a: &Matrix, b: &Matrix, j: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for i in 0..a.rows {
        let coeff = a.get(i, j);
        let b_row = b.row(i);
        for (out, &y) in out_row.iter_mut().zip(b_row) {
            *out += coeff * y;
        }
    }
}

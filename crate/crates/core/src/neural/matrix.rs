use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Row-major dense matrix.
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        Self {
            rows,
            cols,
            data: super::uniform_init(rng, rows * cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out += self · x`
    pub(crate) fn mul_vec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (row, o) in self.data.chunks_exact(self.cols).zip(out.iter_mut()) {
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · v`
    pub(crate) fn t_mul_vec_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, vi) in self.data.chunks_exact(self.cols).zip(v) {
            if *vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }

    /// `self += a ⊗ b`
    pub(crate) fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (row, ai) in self.data.chunks_exact_mut(self.cols).zip(a) {
            if *ai == 0.0 {
                continue;
            }
            for (r, bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }
}

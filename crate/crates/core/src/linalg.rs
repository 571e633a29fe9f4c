//! Dense symmetric positive-definite helpers used by the GP.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// First jitter tried when a plain factorization fails.
pub(crate) const JITTER_START: f64 = 1e-10;
/// Largest jitter on the ladder; failing at this level is an error.
pub(crate) const JITTER_MAX: f64 = 1e-4;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// Lower-triangular Cholesky factor of `A + jitter * I`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cholesky {
    pub lower: SquareMatrix,
    pub jitter: f64,
}

fn try_factor(a: &SquareMatrix, jitter: f64) -> Option<SquareMatrix> {
    let n = a.n;
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let row_j = &l.data[j * n..j * n + j];
        let mut diag = a.get(j, j) + jitter;
        diag -= row_j.iter().map(|v| v * v).sum::<f64>();
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = libm::sqrt(diag);
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            let (head, tail) = l.data.split_at(i * n);
            let row_i = &tail[..j];
            let row_j = &head[j * n..j * n + j];
            s -= row_i.iter().zip(row_j).map(|(p, q)| p * q).sum::<f64>();
            l.set(i, j, s / ljj);
        }
    }
    Some(l)
}

impl Cholesky {
    /// Factorizes `a`, escalating diagonal jitter 1e-10, 1e-9, ... 1e-4 on failure.
    pub fn factor(a: &SquareMatrix) -> Result<Self> {
        if let Some(lower) = try_factor(a, 0.0) {
            return Ok(Self { lower, jitter: 0.0 });
        }
        let mut jitter = JITTER_START;
        loop {
            if let Some(lower) = try_factor(a, jitter) {
                return Ok(Self { lower, jitter });
            }
            if jitter >= JITTER_MAX {
                return Err(Error::NumericalSingularity { jitter });
            }
            jitter *= 10.0;
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.n
    }

    /// Solves `L v = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let l = &self.lower.data;
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(p, q)| p * q).sum();
            b[i] = (b[i] - s) / l[i * n + i];
        }
    }

    /// Solves `L^T x = b` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let l = &self.lower.data;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[k * n + i] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    pub fn log_det(&self) -> f64 {
        let n = self.dim();
        (0..n).map(|i| libm::log(self.lower.get(i, i))).sum::<f64>() * 2.0
    }

    /// Full inverse of `L L^T`.
    pub fn inverse(&self) -> SquareMatrix {
        let n = self.dim();
        // columns of L^{-1}
        let mut linv = SquareMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.forward_in_place(&mut e);
            for i in j..n {
                linv.set(i, j, e[i]);
            }
        }
        // A^{-1} = L^{-T} L^{-1}
        let mut inv = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += linv.get(k, i) * linv.get(k, j);
                }
                inv.set(i, j, s);
                inv.set(j, i, s);
            }
        }
        inv
    }
}

//! Banded Cholesky factorisation for the symmetric positive definite nodal
//! matrices produced by crossbar arrays.
//!
//! Row `i` keeps the entries of columns `i - bw ..= i` contiguously, so both
//! the factorisation inner loop and the triangular solves walk memory in
//! ascending order.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub(crate) fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    #[inline]
    fn offset(&self, i: usize, k: usize) -> usize {
        debug_assert!(k <= i && i - k <= self.bw);
        i * (self.bw + 1) + self.bw + k - i
    }

    /// Add `value` to entry `(i, j)` of the symmetric matrix (either triangle).
    #[inline]
    pub(crate) fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let o = self.offset(r, c);
        self.data[o] += value;
    }

    #[inline]
    fn get(&self, i: usize, k: usize) -> f64 {
        self.data[self.offset(i, k)]
    }

    /// `A·x` for the symmetric matrix stored in the lower band.
    pub(crate) fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[self.offset(i, lo)..=self.offset(i, i)];
            let mut acc = 0.0;
            for (a, &xk) in row.iter().zip(&x[lo..=i]) {
                acc += a * xk;
            }
            y[i] += acc;
            // strictly-lower part contributes to the upper triangle
            for (k, a) in (lo..i).zip(row) {
                y[k] += a * x[i];
            }
        }
        y
    }

    /// In-place factorisation `A = L·Lᵀ`.
    pub(crate) fn cholesky(mut self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = self.get(i, j);
                if lo < j {
                    let ri = self.offset(i, lo);
                    let rj = self.offset(j, lo);
                    let len = j - lo;
                    let (a, b) = (&self.data[ri..ri + len], &self.data[rj..rj + len]);
                    s -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                }
                let o = self.offset(i, j);
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Solver {
                            detail: format!("nodal matrix is not positive definite at pivot {i}"),
                            residual: f64::NAN,
                        });
                    }
                    self.data[o] = s.sqrt();
                } else {
                    self.data[o] = s / self.get(j, j);
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let (n, bw) = (l.n, l.bw);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &l.data[l.offset(i, lo)..l.offset(i, i)];
            let s: f64 = row.iter().zip(&y[lo..i]).map(|(a, v)| a * v).sum();
            y[i] = (y[i] - s) / l.get(i, i);
        }
        for i in (0..n).rev() {
            y[i] /= l.get(i, i);
            let xi = y[i];
            let lo = i.saturating_sub(bw);
            let row = &l.data[l.offset(i, lo)..l.offset(i, i)];
            for (a, yk) in row.iter().zip(&mut y[lo..i]) {
                *yk -= a * xi;
            }
        }
        y
    }
}

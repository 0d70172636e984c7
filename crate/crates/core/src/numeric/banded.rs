//! Banded LU factorization with partial pivoting.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// LU factors of a banded matrix with `kl` sub- and `ku` super-diagonals.
/// Row interchanges widen the upper band to `ku + kl`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
    cond: f64,
}

impl BandedLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::InvalidInput("banded LU needs a square matrix".into()));
        }
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu { n, kl, ku, width, data: vec![0.0; n * width], piv: vec![0; n], cond: 1.0 };
        for i in 0..n {
            for (j, v) in a.row(i) {
                let k = lu.idx(i, j);
                lu.data[k] = v;
            }
        }
        let scale = lu.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let upper = ku + kl;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = lu.data[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale || !best.is_finite() {
                return Err(Error::LinearSolveFailed {
                    reason: format!("singular banded system at column {k}"),
                    condition_estimate: f64::INFINITY,
                });
            }
            lu.piv[k] = p;
            let jmax = (k + upper).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a_, b_) = (lu.idx(k, j), lu.idx(p, j));
                    lu.data.swap(a_, b_);
                }
            }
            let pivot = lu.data[lu.idx(k, k)];
            for i in k + 1..=last {
                let ik = lu.idx(i, k);
                let l = lu.data[ik] / pivot;
                lu.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = lu.data[lu.idx(k, j)];
                        let ij = lu.idx(i, j);
                        lu.data[ij] -= l * kj;
                    }
                }
            }
        }
        let diag: Vec<f64> = (0..n).map(|i| lu.data[lu.idx(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        lu.cond = max / min;
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.data[self.idx(i, k)] * xk;
                }
            }
        }
        let upper = self.ku + self.kl;
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + upper).min(n - 1) {
                s -= self.data[self.idx(i, j)] * x[j];
            }
            x[i] = s / self.data[self.idx(i, i)];
        }
        x
    }

    /// Ratio of largest to smallest pivot magnitude.
    pub fn condition_estimate(&self) -> f64 {
        self.cond
    }
}

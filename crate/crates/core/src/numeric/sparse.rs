//! Compressed sparse row matrices, used both for finite-difference operators
//! and for the implicit systems assembled from them.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row (column, value) lists. Duplicate columns
    /// are summed and each row is sorted by column.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|(c, _)| *c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                debug_assert!(c < ncols);
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn row_vec(&self, i: usize) -> Vec<(usize, f64)> {
        self.row(i).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    /// Applies a single row.
    pub fn apply_row(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(c, v)| v * x[c]).sum()
    }

    /// `self * other`.
    pub fn compose(&self, other: &CsrMatrix) -> CsrMatrix {
        let rows = (0..self.nrows)
            .map(|i| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for (k, a) in self.row(i) {
                    for (j, b) in other.row(k) {
                        acc.push((j, a * b));
                    }
                }
                acc
            })
            .collect();
        CsrMatrix::from_rows(other.ncols, rows)
    }

    /// Maximum half-bandwidths (lower, upper).
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    fn diag_index(&self, i: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].binary_search(&i).ok().map(|k| r.start + k)
    }
}

/// Incomplete LU factorization with zero fill-in.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let mut lu = a.clone();
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            diag.push(lu.diag_index(i).ok_or_else(|| Error::LinearSolveFailed {
                reason: format!("structurally zero diagonal at row {i}"),
                condition_estimate: f64::INFINITY,
            })?);
        }
        for i in 1..n {
            let (rs, re) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for kk in rs..re {
                let k = lu.cols[kk];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::LinearSolveFailed {
                        reason: format!("zero pivot in ILU(0) at row {k}"),
                        condition_estimate: f64::INFINITY,
                    });
                }
                let lik = lu.vals[kk] / pivot;
                lu.vals[kk] = lik;
                let (ks, ke) = (lu.row_ptr[k], lu.row_ptr[k + 1]);
                for jj in kk + 1..re {
                    let j = lu.cols[jj];
                    if let Ok(p) = lu.cols[ks..ke].binary_search(&j) {
                        lu.vals[jj] -= lik * lu.vals[ks + p];
                    }
                }
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in self.lu.row_ptr[i]..self.diag[i] {
                s -= self.lu.vals[k] * y[self.lu.cols[k]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in self.diag[i] + 1..self.lu.row_ptr[i + 1] {
                s -= self.lu.vals[k] * y[self.lu.cols[k]];
            }
            y[i] = s / self.lu.vals[self.diag[i]];
        }
        y
    }

    /// Ratio of largest to smallest |U_ii|, a cheap conditioning indicator.
    pub fn condition_estimate(&self) -> f64 {
        let d: Vec<f64> = self.diag.iter().map(|&k| self.lu.vals[k].abs()).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB. Returns the solution and iteration count.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], pre: &Ilu0, rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = pre.solve(&p);
        a.apply_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            break;
        }
        alpha = rho / denom;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) <= rel_tol * bnorm {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok((x, it));
        }
        let s_hat = pre.solve(&s);
        let t = a.apply(&s_hat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= rel_tol * bnorm {
            return Ok((x, it));
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::LinearSolveFailed {
        reason: "BiCGSTAB did not converge".into(),
        condition_estimate: pre.condition_estimate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_like(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.5)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.2));
                }
                if i + 7 < n {
                    r.push((i + 7, 0.1));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(n, rows)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_rows(3, vec![vec![(2, 1.0), (0, 1.0), (2, 2.0)]]);
        assert_eq!(m.row_vec(0), vec![(0, 1.0), (2, 3.0)]);
    }

    #[test]
    fn compose_matches_dense_product() {
        let a = laplacian_like(6);
        let b = laplacian_like(6);
        let c = a.compose(&b);
        for i in 0..6 {
            for j in 0..6 {
                let dense: f64 = (0..6).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - dense).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let a = laplacian_like(200);
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = a.apply(&xs);
        let pre = Ilu0::new(&a).unwrap();
        let (x, _) = bicgstab(&a, &b, &pre, 1e-13, 500).unwrap();
        let err = x.iter().zip(&xs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let n = 30;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -2.0));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(n, rows);
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = Ilu0::new(&a).unwrap().solve(&a.apply(&xs));
        for (p, q) in x.iter().zip(&xs) {
            assert!((p - q).abs() < 1e-11);
        }
    }
}

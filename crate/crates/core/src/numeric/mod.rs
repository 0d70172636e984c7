//! Numerical building blocks: stencil weights, sparse and banded linear
//! algebra, and the scalar types used for automatic differentiation.

pub mod banded;
pub mod scalar;
pub mod sparse;
pub mod stencil;

pub use banded::BandedLu;
pub use scalar::{Dual, Jet, Scalar};
pub use sparse::{bicgstab, CsrMatrix, Ilu0};

use crate::error::Result;

/// Solves `a x = b` with a banded direct factorization when the bandwidth
/// is small relative to the size, otherwise with ILU(0)-preconditioned
/// BiCGSTAB, falling back to the banded factorization if the iteration
/// stalls.
pub fn solve_sparse(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let (kl, ku) = a.bandwidths();
    if kl + ku <= 12 {
        return Ok(BandedLu::factor(a)?.solve(b));
    }
    let pre = Ilu0::new(a)?;
    match bicgstab(a, b, &pre, 1e-13, 2000) {
        Ok((x, _)) => Ok(x),
        Err(_) => Ok(BandedLu::factor(a)?.solve(b)),
    }
}

/// Maximum absolute value.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

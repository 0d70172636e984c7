//! Ground truth: quadratic-pressure solutions of the pressure equation
//! `v_t = (m−1) v Δv + |∇v|²` and manufactured solutions for the linear
//! degenerate problem.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::expr::{Bindings, SpatialExpr};
use crate::fichera::LinearCoefficients;
use crate::fields::{Grid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactKind {
    QuadraticPressure1d,
    QuadraticPressureRadial,
}

/// `v(x, t) = (A(t) − B(t)|x|²)₊` in `n` dimensions with
/// `B = 1/(κ t)`, `κ = 2n(m−1) + 4`, `A = A₀ t^{−2n(m−1)/κ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactPmeSolution {
    pub kind: ExactKind,
    pub m: f64,
    pub n: usize,
    pub a0: f64,
    pub t0: f64,
}

/// Largest scaled residual found by the construction self-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfCheck {
    pub samples: usize,
    pub max_scaled_residual: f64,
}

impl ExactPmeSolution {
    pub fn quadratic_pressure_1d(m: f64, a0: f64) -> Result<Self> {
        Self::build(ExactKind::QuadraticPressure1d, m, 1, a0)
    }

    pub fn quadratic_pressure_radial(m: f64, n: usize, a0: f64) -> Result<Self> {
        Self::build(ExactKind::QuadraticPressureRadial, m, n, a0)
    }

    fn build(kind: ExactKind, m: f64, n: usize, a0: f64) -> Result<Self> {
        if !(m > 1.0) || !(a0 > 0.0) || n == 0 {
            return Err(Error::InvalidInput(format!("need m > 1, A0 > 0, n >= 1 (got m={m}, A0={a0}, n={n})")));
        }
        let s = Self { kind, m, n, a0, t0: 1.0 };
        let check = s.self_check(100);
        if !(check.max_scaled_residual <= 1e-10) {
            return Err(Error::InvalidInput(format!(
                "exact solution fails its residual self-check ({:e})",
                check.max_scaled_residual
            )));
        }
        Ok(s)
    }

    fn kappa(&self) -> f64 {
        2.0 * self.n as f64 * (self.m - 1.0) + 4.0
    }

    fn a_exponent(&self) -> f64 {
        -2.0 * self.n as f64 * (self.m - 1.0) / self.kappa()
    }

    pub fn coeff_a(&self, t: f64) -> f64 {
        self.a0 * t.powf(self.a_exponent())
    }

    pub fn coeff_b(&self, t: f64) -> f64 {
        1.0 / (self.kappa() * t)
    }

    fn coeff_a_dot(&self, t: f64) -> f64 {
        self.a_exponent() * self.coeff_a(t) / t
    }

    fn coeff_b_dot(&self, t: f64) -> f64 {
        -self.coeff_b(t) / t
    }

    /// Exponent `α` in `R(t) ∝ t^α`.
    pub fn front_exponent(&self) -> f64 {
        1.0 / (self.n as f64 * (self.m - 1.0) + 2.0)
    }

    pub fn front_radius(&self, t: f64) -> f64 {
        (self.coeff_a(t) / self.coeff_b(t)).sqrt()
    }

    pub fn front_speed(&self, t: f64) -> f64 {
        self.front_exponent() * self.front_radius(t) / t
    }

    /// Smooth extension `A − B|x|²`, negative outside the support.
    pub fn pressure_extended(&self, x: &[f64], t: f64) -> f64 {
        self.coeff_a(t) - self.coeff_b(t) * x.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn pressure(&self, x: &[f64], t: f64) -> f64 {
        self.pressure_extended(x, t).max(0.0)
    }

    pub fn gradient(&self, x: &[f64], t: f64) -> Vec<f64> {
        let b = self.coeff_b(t);
        x.iter().map(|v| -2.0 * b * v).collect()
    }

    /// `|∇v|` at the front, `2BR`.
    pub fn front_gradient_norm(&self, t: f64) -> f64 {
        2.0 * self.coeff_b(t) * self.front_radius(t)
    }

    /// Source of `v(·, t)` in the expression language.
    pub fn pressure_expression(&self, t: f64) -> String {
        let r2 = if self.n == 1 { "x^2" } else { "(x^2+y^2)" };
        format!("{:.17e} - {:.17e}*{r2}", self.coeff_a(t), self.coeff_b(t))
    }

    /// Support of `v(·, t)`; only `n ≤ 2` have a grid-backed domain.
    pub fn support(&self, t: f64) -> Result<Domain> {
        let r = self.front_radius(t);
        match self.n {
            1 => Domain::interval(-r, r),
            2 => Domain::disk([0.0, 0.0], r),
            n => Domain::radial(n, r),
        }
    }

    /// PDE residual at `count` low-discrepancy points of the support over
    /// `t ∈ [t₀, 2t₀]`, each divided by the largest term magnitude.
    pub fn self_check(&self, count: usize) -> SelfCheck {
        let mut worst: f64 = 0.0;
        for k in 1..=count {
            let t = self.t0 * (1.0 + halton(k, 2));
            let r = self.front_radius(t);
            let x: Vec<f64> = (0..self.n)
                .map(|d| (2.0 * halton(k, PRIMES[(d + 1) % PRIMES.len()]) - 1.0) * r / (self.n as f64).sqrt())
                .collect();
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let (a, b) = (self.coeff_a(t), self.coeff_b(t));
            let v = a - b * r2;
            let vt = self.coeff_a_dot(t) - self.coeff_b_dot(t) * r2;
            let lap = -2.0 * b * self.n as f64;
            let grad2 = 4.0 * b * b * r2;
            let diff = (self.m - 1.0) * v * lap;
            let scale = vt.abs().max(diff.abs()).max(grad2).max(f64::MIN_POSITIVE);
            worst = worst.max((vt - diff - grad2).abs() / scale);
        }
        SelfCheck { samples: count, max_scaled_residual: worst }
    }
}

const PRIMES: [usize; 4] = [2, 3, 5, 7];

/// Radical inverse of `k` in `base`.
pub fn halton(mut k: usize, base: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

/// Time profile `τ` of a manufactured solution `w = τ(t) φ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeProfile {
    /// `exp(−1/t)`, flat at `t = 0`.
    ExpInv,
    /// `t^p`, flat to order `p − 1`.
    Power { p: u32 },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::ExpInv => {
                if t > 0.0 {
                    (-1.0 / t).exp()
                } else {
                    0.0
                }
            }
            TimeProfile::Power { p } => t.powi(p as i32),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::ExpInv => {
                if t > 0.0 {
                    (-1.0 / t).exp() / (t * t)
                } else {
                    0.0
                }
            }
            TimeProfile::Power { p: 0 } => 0.0,
            TimeProfile::Power { p } => p as f64 * t.powi(p as i32 - 1),
        }
    }

    /// Order of the first nonvanishing time derivative at 0.
    fn flat_order(&self) -> Option<u32> {
        match *self {
            TimeProfile::ExpInv => None,
            TimeProfile::Power { p } => Some(p),
        }
    }
}

/// Manufactured solution `w(x, t) = τ(t) φ(x)`.
#[derive(Debug, Clone)]
pub struct ManufacturedSolution {
    pub profile: TimeProfile,
    pub phi: SpatialExpr,
}

impl ManufacturedSolution {
    pub fn new(phi: &str, dim: usize, profile: TimeProfile) -> Result<Self> {
        Ok(Self { profile, phi: SpatialExpr::new(phi, dim)? })
    }

    /// The profile used by the linear convergence studies:
    /// `exp(−1/t)·sin(πx)·x(1−x)`.
    pub fn standard_1d() -> Self {
        Self::new("sin(pi*x)*x*(1-x)", 1, TimeProfile::ExpInv).expect("built-in expression parses")
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.profile.value(t) * self.phi.value_at(&Bindings::new().at(x, t))?)
    }

    pub fn field(&self, grid: &Arc<Grid>, t: f64) -> Result<ScalarField> {
        let tau = self.profile.value(t);
        let vals = grid
            .points()
            .iter()
            .map(|p| Ok(tau * self.phi.value_at(&Bindings::new().at(p, 0.0))?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(ScalarField::new(grid.clone(), vals)?.with_time(t))
    }
}

/// Attaches `g = ∂_t w − L w` to `coeffs`, with `φ`'s derivatives exact and
/// the coefficients sampled at each node. Profiles that are not flat to
/// order `k_max` are refused.
pub fn mms_linear(coeffs: &LinearCoefficients, solution: &ManufacturedSolution, k_max: usize) -> Result<LinearCoefficients> {
    if let Some(p) = solution.profile.flat_order() {
        if (p as usize) < k_max + 1 {
            return Err(Error::NotFlatAtZero(format!(
                "profile t^{p} has a nonzero time derivative of order {p} at t = 0; condition (C) to order {k_max} needs p >= {}",
                k_max + 1
            )));
        }
    }
    let grid = coeffs.grid().clone();
    let dim = grid.dim();
    // φ, ∇φ, ∇²φ are time independent: tabulate once
    let mut phi = Vec::with_capacity(grid.len());
    let mut dphi = Vec::with_capacity(grid.len());
    let mut ddphi = Vec::with_capacity(grid.len());
    for p in grid.points() {
        let env = Bindings::new().at(p, 0.0);
        phi.push(solution.phi.value_at(&env)?);
        dphi.push(solution.phi.grad_at(&env)?);
        ddphi.push(solution.phi.hess_at(&env)?);
    }
    let src = coeffs.clone();
    let profile = solution.profile;
    Ok(coeffs.clone().with_forcing(move |t| {
        let (tau, tau_dot) = (profile.value(t), profile.derivative(t));
        if tau == 0.0 && tau_dot == 0.0 {
            return Ok(vec![0.0; phi.len()]);
        }
        let s = src.snapshot(t)?;
        Ok((0..phi.len())
            .map(|i| {
                let mut lphi = s.f[i] * phi[i];
                for a in 0..dim {
                    lphi += s.b[a][i] * dphi[i][a];
                    for b in 0..dim {
                        lphi += s.a_at(dim, i, a, b) * ddphi[i][a][b];
                    }
                }
                tau_dot * phi[i] - tau * lphi
            })
            .collect())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fichera::check_condition_c;

    #[test]
    fn one_dimensional_reference_values() {
        let s = ExactPmeSolution::quadratic_pressure_1d(2.0, 1.0).unwrap();
        assert!((s.coeff_b(1.0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((s.front_radius(1.0) - 6f64.sqrt()).abs() < 1e-14);
        assert!((s.pressure(&[1.0], 1.0) - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
        assert!((s.front_exponent() - 1.0 / 3.0).abs() < 1e-15);
        assert!(s.front_gradient_norm(1.0) > 0.0);
    }

    #[test]
    fn radial_with_n1_matches_line() {
        for &m in &[1.5, 2.0, 3.0] {
            let a = ExactPmeSolution::quadratic_pressure_1d(m, 0.7).unwrap();
            let b = ExactPmeSolution::quadratic_pressure_radial(m, 1, 0.7).unwrap();
            for &t in &[1.0, 1.3, 2.0] {
                assert_eq!(a.front_radius(t), b.front_radius(t));
                assert_eq!(a.pressure(&[0.4], t), b.pressure(&[0.4], t));
            }
        }
    }

    #[test]
    fn radial_disk_self_check_and_growth() {
        let s = ExactPmeSolution::quadratic_pressure_radial(2.0, 2, 1.0).unwrap();
        assert!(s.self_check(100).max_scaled_residual <= 1e-10);
        assert!((s.front_radius(1.0) - 8f64.sqrt()).abs() < 1e-14);
        let mut prev = 0.0;
        for k in 0..20 {
            let r = s.front_radius(1.0 + 0.1 * k as f64);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn front_speed_matches_difference_quotient() {
        let s = ExactPmeSolution::quadratic_pressure_1d(1.5, 1.0).unwrap();
        let h = 1e-5;
        let fd = (s.front_radius(1.2 + h) - s.front_radius(1.2 - h)) / (2.0 * h);
        assert!((fd - s.front_speed(1.2)).abs() < 1e-8);
        // the front moves with speed |∇v|
        assert!((s.front_speed(1.2) - s.front_gradient_norm(1.2)).abs() < 1e-12);
    }

    #[test]
    fn halton_is_low_discrepancy() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    fn logistic_coeffs() -> LinearCoefficients {
        let g = Grid::line(0.0, 1.0, 41, 2).unwrap();
        LinearCoefficients::from_expressions(g, &["x*(1-x)"], &["0"], "0").unwrap()
    }

    #[test]
    fn zero_solution_has_zero_forcing() {
        let sol = ManufacturedSolution::new("0", 1, TimeProfile::ExpInv).unwrap();
        let c = mms_linear(&logistic_coeffs(), &sol, 3).unwrap();
        assert!(c.forcing(0.5).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_power_profile_is_refused() {
        let sol = ManufacturedSolution::new("sin(pi*x)", 1, TimeProfile::Power { p: 2 }).unwrap();
        assert!(matches!(mms_linear(&logistic_coeffs(), &sol, 2), Err(Error::NotFlatAtZero(_))));
        let sol = ManufacturedSolution::new("sin(pi*x)", 1, TimeProfile::Power { p: 3 }).unwrap();
        assert!(mms_linear(&logistic_coeffs(), &sol, 2).is_ok());
    }

    #[test]
    fn exp_profile_forcing_is_flat() {
        let c = mms_linear(&logistic_coeffs(), &ManufacturedSolution::standard_1d(), 4).unwrap();
        let g = |t: f64| c.forcing(t);
        assert!(check_condition_c(&g, 4, 0.05, 1e-6).unwrap().passes);
    }

    #[test]
    fn forcing_matches_direct_formula() {
        let c = mms_linear(&logistic_coeffs(), &ManufacturedSolution::standard_1d(), 2).unwrap();
        let t = 0.7;
        let g = c.forcing(t).unwrap();
        let pi = std::f64::consts::PI;
        for (i, p) in c.grid().points().iter().enumerate() {
            let x = p[0];
            let phi = (pi * x).sin() * x * (1.0 - x);
            let phi2 = -pi * pi * (pi * x).sin() * x * (1.0 - x) + 2.0 * pi * (pi * x).cos() * (1.0 - 2.0 * x)
                - 2.0 * (pi * x).sin();
            let tau = (-1.0 / t).exp();
            let expect = tau / (t * t) * phi - tau * x * (1.0 - x) * phi2;
            assert!((g[i] - expect).abs() < 1e-12);
        }
    }
}

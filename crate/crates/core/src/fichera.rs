//! Coefficients of degenerate second-order operators and the boundary sign
//! conditions that decide whether boundary data may be imposed.
//!
//! For `L w = a^{ij} w_ij + b^i w_i + f w` on Ω̄₀ with outward normal ν:
//!
//! * (A₁) `a^{ij} ν_i ν_j = 0` (equivalently `a^{ij} ν_i = 0`),
//! * (A₂) `(∂_k a^{ij}) ν_k ν_i ν_j < 0`,
//! * (B)  `(b^i − ∂_j a^{ij}) ν_i ≤ 0`, (B′) the strict version,
//! * (B″) `b^i ν_i ≤ 0`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, StarCurve};
use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::fields::{sym_index, Grid, GridKind, MapJet, PolarMap};
use crate::numeric::stencil::fornberg;

/// Coefficient values at every grid node at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSnapshot {
    /// Packed symmetric components (see [`sym_index`]).
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub f: Vec<f64>,
}

impl CoeffSnapshot {
    pub fn zeros(dim: usize, n: usize) -> Self {
        let ncomp = if dim == 1 { 1 } else { 3 };
        Self { a: vec![vec![0.0; n]; ncomp], b: vec![vec![0.0; n]; dim], f: vec![0.0; n] }
    }

    pub fn a_at(&self, dim: usize, node: usize, i: usize, j: usize) -> f64 {
        self.a[sym_index(dim, i, j)][node]
    }
}

type OperatorFn = dyn Fn(f64) -> Result<CoeffSnapshot> + Send + Sync;
type ForcingFn = dyn Fn(f64) -> Result<Vec<f64>> + Send + Sync;

/// Time-dependent `(a^{ij}, b^i, f, g)` on a grid.
#[derive(Clone)]
pub struct LinearCoefficients {
    grid: Arc<Grid>,
    operator: Arc<OperatorFn>,
    forcing: Arc<ForcingFn>,
    label: String,
}

impl fmt::Debug for LinearCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearCoefficients").field("label", &self.label).field("nodes", &self.grid.len()).finish()
    }
}

impl LinearCoefficients {
    /// Wraps an operator closure; checks positive definiteness of `a` at
    /// interior nodes at `t = 0`. The forcing defaults to zero.
    pub fn from_fn(
        grid: Arc<Grid>,
        label: &str,
        operator: impl Fn(f64) -> Result<CoeffSnapshot> + Send + Sync + 'static,
    ) -> Result<Self> {
        let n = grid.len();
        let c = Self {
            grid,
            operator: Arc::new(operator),
            forcing: Arc::new(move |_| Ok(vec![0.0; n])),
            label: label.to_string(),
        };
        c.check_shape_and_ellipticity(0.0)?;
        Ok(c)
    }

    pub fn constant(grid: Arc<Grid>, label: &str, snapshot: CoeffSnapshot) -> Result<Self> {
        Self::from_fn(grid, label, move |_| Ok(snapshot.clone()))
    }

    /// Coefficients from expressions in `x`, `y`, `t`. `a` holds the packed
    /// symmetric components, `b` one expression per axis.
    pub fn from_expressions(grid: Arc<Grid>, a: &[&str], b: &[&str], f: &str) -> Result<Self> {
        let dim = grid.dim();
        let ncomp = if dim == 1 { 1 } else { 3 };
        if a.len() != ncomp || b.len() != dim {
            return Err(Error::InvalidInput(format!(
                "expected {ncomp} diffusion and {dim} drift expressions, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        let a: Vec<Expr> = a.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?;
        let b: Vec<Expr> = b.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()?;
        let f = Expr::parse(f)?;
        let g2 = grid.clone();
        let label = format!("a={a:?} b={b:?} f={f}");
        Self::from_fn(grid, &label, move |t| {
            let mut snap = CoeffSnapshot::zeros(dim, g2.len());
            for (i, p) in g2.points().iter().enumerate() {
                let env = Bindings::new().at(p, t);
                for (c, e) in a.iter().enumerate() {
                    snap.a[c][i] = e.eval(&env)?;
                }
                for (c, e) in b.iter().enumerate() {
                    snap.b[c][i] = e.eval(&env)?;
                }
                snap.f[i] = f.eval(&env)?;
            }
            Ok(snap)
        })
    }

    pub fn with_forcing(mut self, g: impl Fn(f64) -> Result<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.forcing = Arc::new(g);
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn snapshot(&self, t: f64) -> Result<CoeffSnapshot> {
        (self.operator)(t)
    }

    pub fn forcing(&self, t: f64) -> Result<Vec<f64>> {
        (self.forcing)(t)
    }

    fn check_shape_and_ellipticity(&self, t: f64) -> Result<()> {
        let s = self.snapshot(t)?;
        let dim = self.grid.dim();
        let n = self.grid.len();
        let ncomp = if dim == 1 { 1 } else { 3 };
        if s.a.len() != ncomp || s.b.len() != dim || s.a.iter().chain(&s.b).any(|c| c.len() != n) || s.f.len() != n {
            return Err(Error::InvalidInput("coefficient arrays do not match the grid".into()));
        }
        for i in 0..n {
            if self.grid.is_boundary(i) {
                continue;
            }
            let lam = if dim == 1 {
                s.a[0][i]
            } else {
                let (p, q, r) = (s.a[0][i], s.a[1][i], s.a[2][i]);
                0.5 * (p + r) - (0.25 * (p - r).powi(2) + q * q).sqrt()
            };
            if !(lam > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "diffusion matrix is not positive definite at interior node {i} (min eigenvalue {lam:e})"
                )));
            }
        }
        Ok(())
    }
}

/// Absolute tolerances are `zero_rel·scale` and `strict_rel·scale`, with
/// `scale` the largest boundary value of |∂a| (1 if that vanishes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FicheraTolerances {
    pub zero_rel: f64,
    pub strict_rel: f64,
}

impl Default for FicheraTolerances {
    fn default() -> Self {
        Self { zero_rel: 1e-6, strict_rel: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    SatisfiesBPrime,
    SatisfiesB,
    SatisfiesBDoublePrimeOnly,
    Fails,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Classification::SatisfiesBPrime => "satisfies (A1),(A2),(B')",
            Classification::SatisfiesB => "satisfies (A1),(A2),(B)",
            Classification::SatisfiesBDoublePrimeOnly => "satisfies (A1),(A2),(B'') only",
            Classification::Fails => "fails",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Verdicts {
    pub a1: bool,
    pub a2: bool,
    pub b: bool,
    pub b_prime: bool,
    pub b_double_prime: bool,
}

/// Per-boundary-node quantities and verdicts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FicheraReport {
    pub t: f64,
    pub nodes: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub normals: Vec<Vec<f64>>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
    pub q4: Vec<f64>,
    /// `max_j |a^{ij} ν_i|` per node.
    pub a_conormal: Vec<f64>,
    /// Estimated finite-difference error of `q3` per node.
    pub q3_allowance: Vec<f64>,
    pub scale: f64,
    pub tol_zero: f64,
    pub tol_strict: f64,
    pub verdicts: Verdicts,
    pub classification: Classification,
}

impl FicheraReport {
    fn with_verdicts(mut self) -> Self {
        let (tz, ts) = (self.tol_zero, self.tol_strict);
        let maxabs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let a1 = maxabs(&self.q1) <= tz && maxabs(&self.a_conormal) <= tz;
        let a2 = self.q2.iter().all(|q| *q <= -ts);
        let b = self.q3.iter().zip(&self.q3_allowance).all(|(q, e)| *q <= tz + e);
        let b_prime = self.q3.iter().all(|q| *q <= -ts);
        let b_double_prime = self.q4.iter().all(|q| *q <= tz);
        self.verdicts = Verdicts { a1, a2, b, b_prime, b_double_prime };
        self.classification = if !(a1 && a2) {
            Classification::Fails
        } else if b_prime {
            Classification::SatisfiesBPrime
        } else if b {
            Classification::SatisfiesB
        } else if b_double_prime {
            Classification::SatisfiesBDoublePrimeOnly
        } else {
            Classification::Fails
        };
        self
    }

    pub fn max_abs_q1(&self) -> f64 {
        self.q1.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Condition (A₁) forces `q₂ ≤ 0`; true when that consequence holds
    /// numerically or (A₁) fails.
    pub fn a1_consistent(&self) -> bool {
        !self.verdicts.a1 || self.q2.iter().all(|q| *q <= self.tol_zero)
    }

    /// Names of the failed conditions among (A₁), (A₂), (B).
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.verdicts.a1 {
            out.push("(A1)");
        }
        if !self.verdicts.a2 {
            out.push("(A2)");
        }
        if !self.verdicts.b {
            out.push("(B)");
        }
        out
    }
}

/// Evaluates q₁..q₄ at every boundary node of the coefficient grid at time
/// `t`. Boundary derivatives of `a` use the grid's one-sided stencils.
pub fn check_conditions(
    coeffs: &LinearCoefficients,
    domain: &Domain,
    t: f64,
    tol: FicheraTolerances,
) -> Result<FicheraReport> {
    let grid = coeffs.grid();
    let dim = grid.dim();
    if domain.dim() != dim {
        return Err(Error::InvalidInput("coefficient grid and domain dimensions differ".into()));
    }
    let snap = coeffs.snapshot(t)?;
    Ok(report_from_snapshot(grid, &snap, t, tol))
}

pub(crate) fn report_from_snapshot(grid: &Grid, snap: &CoeffSnapshot, t: f64, tol: FicheraTolerances) -> FicheraReport {
    let dim = grid.dim();
    // ∂_k a^{ij} for every packed component
    let da: Vec<Vec<Vec<f64>>> = snap.a.iter().map(|c| (0..dim).map(|k| grid.d(k).apply(c)).collect()).collect();
    let nb = grid.boundary().len();
    let mut rep = FicheraReport {
        t,
        nodes: grid.boundary().to_vec(),
        points: grid.boundary().iter().map(|&i| grid.point(i).to_vec()).collect(),
        normals: grid.boundary_normals().to_vec(),
        q1: Vec::with_capacity(nb),
        q2: Vec::with_capacity(nb),
        q3: Vec::with_capacity(nb),
        q4: Vec::with_capacity(nb),
        a_conormal: Vec::with_capacity(nb),
        q3_allowance: Vec::with_capacity(nb),
        scale: 1.0,
        tol_zero: 0.0,
        tol_strict: 0.0,
        verdicts: Verdicts { a1: false, a2: false, b: false, b_prime: false, b_double_prime: false },
        classification: Classification::Fails,
    };
    let mut scale: f64 = 0.0;
    for (bi, (&node, nu)) in grid.boundary().iter().zip(grid.boundary_normals()).enumerate() {
        let a = |i: usize, j: usize| snap.a[sym_index(dim, i, j)][node];
        let dak = |i: usize, j: usize, k: usize| da[sym_index(dim, i, j)][k][node];
        let alt: Vec<Vec<f64>> = snap.a.iter().map(|c| grid.boundary_gradient_alt(bi, c)).collect();
        let dak_alt = |i: usize, j: usize, k: usize| alt[sym_index(dim, i, j)][k];
        let (mut q1, mut q2, mut q3, mut q3_alt, mut q4) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut conormal: f64 = 0.0;
        for i in 0..dim {
            let mut row = 0.0;
            for j in 0..dim {
                q1 += a(i, j) * nu[i] * nu[j];
                row += a(i, j) * nu[i];
                for k in 0..dim {
                    q2 += dak(i, j, k) * nu[k] * nu[i] * nu[j];
                    scale = scale.max(dak(i, j, k).abs());
                }
                q3 -= dak(i, j, j) * nu[i];
                q3_alt -= dak_alt(i, j, j) * nu[i];
            }
            q3 += snap.b[i][node] * nu[i];
            q3_alt += snap.b[i][node] * nu[i];
            q4 += snap.b[i][node] * nu[i];
            conormal = conormal.max(row.abs());
        }
        // a^{ij}ν_i is a vector indexed by j; take its largest component
        let conormal = (0..dim)
            .map(|j| (0..dim).map(|i| a(i, j) * nu[i]).sum::<f64>().abs())
            .fold(conormal.min(f64::INFINITY) * 0.0, f64::max);
        rep.q1.push(q1);
        rep.q2.push(q2);
        rep.q3.push(q3);
        rep.q4.push(q4);
        rep.a_conormal.push(conormal);
        rep.q3_allowance.push((q3 - q3_alt).abs());
    }
    if !(scale > 0.0) {
        scale = 1.0;
    }
    rep.scale = scale;
    rep.tol_zero = tol.zero_rel * scale;
    rep.tol_strict = tol.strict_rel * scale;
    rep.with_verdicts()
}

/// Outcome of the flatness probe for condition (C).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCReport {
    pub passes: bool,
    /// First failing derivative order.
    pub failing_order: Option<usize>,
    /// `max_x |D_t^k g(x, 0)|` on the finest probe, k = 0..=k_max.
    pub derivatives: Vec<f64>,
    /// Thresholds `tol · sup|g| / window^k`.
    pub thresholds: Vec<f64>,
}

/// Estimates `D_t^k g(·, 0)` for `k ≤ k_max` from samples on
/// `[0, k_max·Δt]` and refines Δt geometrically; passes when every
/// derivative on the finest probe is below `tol` relative to the size of `g`
/// on the base window.
pub fn check_condition_c(
    g: &dyn Fn(f64) -> Result<Vec<f64>>,
    k_max: usize,
    dt_probe: f64,
    tol: f64,
) -> Result<ConditionCReport> {
    let m = k_max + 3;
    let span = (k_max.max(1)) as f64 * dt_probe;
    let estimate = |window: f64| -> Result<(Vec<f64>, f64)> {
        let nodes: Vec<f64> = (0..=m).map(|q| window * q as f64 / m as f64).collect();
        let w = fornberg(0.0, &nodes, k_max);
        let samples: Vec<Vec<f64>> = nodes.iter().map(|t| g(*t)).collect::<Result<_>>()?;
        let sup = samples.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let npts = samples[0].len();
        let derivs = (0..=k_max)
            .map(|k| {
                (0..npts)
                    .map(|x| samples.iter().zip(&w[k]).map(|(s, c)| c * s[x]).sum::<f64>().abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok((derivs, sup))
    };
    let (_, sup) = estimate(span)?;
    let thresholds: Vec<f64> = (0..=k_max).map(|k| tol * sup / span.powi(k as i32)).collect();
    let mut derivs = Vec::new();
    let mut window = span;
    for _ in 0..10 {
        window *= 0.5;
        derivs = estimate(window)?.0;
    }
    let failing_order = (0..=k_max).find(|&k| sup > 0.0 && derivs[k] > thresholds[k]);
    Ok(ConditionCReport { passes: failing_order.is_none(), failing_order, derivatives: derivs, thresholds })
}

/// Smooth coordinate change with nonsingular Jacobian.
pub trait Diffeo: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn map(&self, x: &[f64]) -> Vec<f64>;
    /// `J[k][i] = ∂y_k/∂x_i`.
    fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>>;
    /// `H[k][i][j] = ∂²y_k/∂x_i∂x_j`.
    fn hessian(&self, x: &[f64]) -> Vec<Vec<Vec<f64>>>;
    fn is_affine(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity {
    pub dim: usize,
}

impl Diffeo for Identity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn map(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn jacobian(&self, _: &[f64]) -> Vec<Vec<f64>> {
        (0..self.dim).map(|k| (0..self.dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect()).collect()
    }
    fn hessian(&self, _: &[f64]) -> Vec<Vec<Vec<f64>>> {
        vec![vec![vec![0.0; self.dim]; self.dim]; self.dim]
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// `y = scale·x + shift` on the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine1D {
    pub scale: f64,
    pub shift: f64,
}

impl Diffeo for Affine1D {
    fn dim(&self) -> usize {
        1
    }
    fn map(&self, x: &[f64]) -> Vec<f64> {
        vec![self.scale * x[0] + self.shift]
    }
    fn jacobian(&self, _: &[f64]) -> Vec<Vec<f64>> {
        vec![vec![self.scale]]
    }
    fn hessian(&self, _: &[f64]) -> Vec<Vec<Vec<f64>>> {
        vec![vec![vec![0.0]]]
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// `(x, y) ↦ (x + s·y, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shear2D {
    pub s: f64,
}

impl Diffeo for Shear2D {
    fn dim(&self) -> usize {
        2
    }
    fn map(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0] + self.s * x[1], x[1]]
    }
    fn jacobian(&self, _: &[f64]) -> Vec<Vec<f64>> {
        vec![vec![1.0, self.s], vec![0.0, 1.0]]
    }
    fn hessian(&self, _: &[f64]) -> Vec<Vec<Vec<f64>>> {
        vec![vec![vec![0.0; 2]; 2]; 2]
    }
    fn is_affine(&self) -> bool {
        true
    }
}

/// `x ↦ x·(1 + δ x₁)`, a nonlinear perturbation of the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPerturbation {
    pub delta: f64,
}

impl Diffeo for PolarPerturbation {
    fn dim(&self) -> usize {
        2
    }
    fn map(&self, x: &[f64]) -> Vec<f64> {
        let s = 1.0 + self.delta * x[0];
        vec![x[0] * s, x[1] * s]
    }
    fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let s = 1.0 + self.delta * x[0];
        (0..2)
            .map(|k| (0..2).map(|i| if i == k { s } else { 0.0 } + if i == 0 { self.delta * x[k] } else { 0.0 }).collect())
            .collect()
    }
    fn hessian(&self, _: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let d = self.delta;
        (0..2)
            .map(|k| {
                (0..2)
                    .map(|i| {
                        (0..2)
                            .map(|j| d * (if k == i && j == 0 { 1.0 } else { 0.0 } + if k == j && i == 0 { 1.0 } else { 0.0 }))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Polar map composed with a coordinate change: `Φ ∘ Ψ`.
#[derive(Debug, Clone)]
pub struct ComposedMap {
    pub inner: Arc<dyn PolarMap>,
    pub outer: Arc<dyn Diffeo>,
}

impl PolarMap for ComposedMap {
    fn eval(&self, rho: f64, theta: f64) -> MapJet {
        let j = self.inner.eval(rho, theta);
        let y = self.outer.map(&j.x);
        let jac = self.outer.jacobian(&j.x);
        let hes = self.outer.hessian(&j.x);
        let mut out = MapJet { x: [y[0], y[1]], d: [[0.0; 2]; 2], dd: [[[0.0; 2]; 2]; 2] };
        for k in 0..2 {
            for q in 0..2 {
                out.d[k][q] = (0..2).map(|i| jac[k][i] * j.d[i][q]).sum();
                for r in 0..2 {
                    let mut v: f64 = (0..2).map(|i| jac[k][i] * j.dd[i][q][r]).sum();
                    for i in 0..2 {
                        for l in 0..2 {
                            v += hes[k][i][l] * j.d[i][q] * j.d[l][r];
                        }
                    }
                    out.dd[k][q][r] = v;
                }
            }
        }
        out
    }

    fn describe(&self) -> String {
        format!("{:?} after {}", self.outer, self.inner.describe())
    }
}

/// Reports before and after a coordinate change, and whether each verdict
/// survived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub original: FicheraReport,
    pub image: FicheraReport,
    pub preserved: Verdicts,
    pub consistent: bool,
}

/// Image grid of `grid` under `diffeo`, node for node.
pub fn image_grid(grid: &Arc<Grid>, diffeo: &Arc<dyn Diffeo>) -> Result<Arc<Grid>> {
    match grid.kind() {
        GridKind::Line { a, b, n } => {
            if !diffeo.is_affine() {
                return Err(Error::InvalidInput("line grids map only under affine coordinate changes".into()));
            }
            let (ya, yb) = (diffeo.map(&[*a])[0], diffeo.map(&[*b])[0]);
            let (lo, hi) = if ya < yb { (ya, yb) } else { (yb, ya) };
            Grid::line(lo, hi, *n, grid.order())
        }
        GridKind::Polar { nr, ntheta, map } => {
            let composed = ComposedMap { inner: map.clone(), outer: diffeo.clone() };
            Grid::polar(Arc::new(composed), *nr, *ntheta, grid.order())
        }
    }
}

/// Domain bounded by the image of the boundary nodes.
pub fn image_domain(grid: &Grid, domain: &Domain, diffeo: &dyn Diffeo) -> Result<Domain> {
    match grid.dim() {
        1 => {
            let ends: Vec<f64> = grid.boundary().iter().map(|&i| diffeo.map(grid.point(i))[0]).collect();
            Domain::interval(ends[0].min(ends[1]), ends[0].max(ends[1]))
        }
        _ => {
            let mut samples: Vec<[f64; 2]> = grid
                .boundary()
                .iter()
                .map(|&i| {
                    let y = diffeo.map(grid.point(i));
                    [y[0], y[1]]
                })
                .collect();
            let j = diffeo.jacobian(grid.point(grid.boundary()[0]));
            if j[0][0] * j[1][1] - j[0][1] * j[1][0] < 0.0 {
                samples.reverse();
            }
            let _ = domain;
            Domain::star_shaped(StarCurve::new(samples)?)
        }
    }
}

/// Pushes the coefficients forward by `diffeo` and compares the verdicts of
/// both reports. Nodes correspond one to one between the grids.
pub fn invariance_test(
    coeffs: &LinearCoefficients,
    domain: &Domain,
    diffeo: Arc<dyn Diffeo>,
    t: f64,
    tol: FicheraTolerances,
) -> Result<InvarianceReport> {
    let grid = coeffs.grid().clone();
    let dim = grid.dim();
    if diffeo.dim() != dim {
        return Err(Error::InvalidInput("coordinate change has the wrong dimension".into()));
    }
    for p in grid.points() {
        let j = diffeo.jacobian(p);
        let det = if dim == 1 { j[0][0] } else { j[0][0] * j[1][1] - j[0][1] * j[1][0] };
        if det.abs() < 1e-12 {
            return Err(Error::SingularJacobian { point: p.clone() });
        }
    }
    let original = check_conditions(coeffs, domain, t, tol)?;
    let img = image_grid(&grid, &diffeo)?;
    let img_domain = image_domain(&grid, domain, diffeo.as_ref())?;
    // in 1D with a reversing map the node order flips
    let reversed = dim == 1 && diffeo.jacobian(grid.point(0))[0][0] < 0.0;
    let n = grid.len();
    let src = coeffs.clone();
    let g0 = grid.clone();
    let d2 = diffeo.clone();
    let pushed = LinearCoefficients::from_fn(img, "pushed-forward", move |t| {
        let s = src.snapshot(t)?;
        let mut out = CoeffSnapshot::zeros(dim, n);
        for node in 0..n {
            let p = g0.point(node);
            let jac = d2.jacobian(p);
            let hes = d2.hessian(p);
            let dst = if reversed { n - 1 - node } else { node };
            for k in 0..dim {
                for l in k..dim {
                    let mut v = 0.0;
                    for i in 0..dim {
                        for j in 0..dim {
                            v += jac[k][i] * s.a_at(dim, node, i, j) * jac[l][j];
                        }
                    }
                    out.a[sym_index(dim, k, l)][dst] = v;
                }
                let mut bk = 0.0;
                for i in 0..dim {
                    bk += s.b[i][node] * jac[k][i];
                    for j in 0..dim {
                        bk += s.a_at(dim, node, i, j) * hes[k][i][j];
                    }
                }
                out.b[k][dst] = bk;
            }
            out.f[dst] = s.f[node];
        }
        Ok(out)
    })?;
    let image = check_conditions(&pushed, &img_domain, t, tol)?;
    let (o, i) = (original.verdicts, image.verdicts);
    let preserved = Verdicts {
        a1: o.a1 == i.a1,
        a2: o.a2 == i.a2,
        b: o.b == i.b,
        b_prime: o.b_prime == i.b_prime,
        b_double_prime: o.b_double_prime == i.b_double_prime,
    };
    let consistent = preserved.a1 && preserved.a2 && preserved.b && preserved.b_prime && preserved.b_double_prime;
    Ok(InvarianceReport { original, image, preserved, consistent })
}

//! Time stepping for `w_t = a^{ij} w_ij + b^i w_i + f w + g` from zero data
//! with no boundary condition: boundary rows discretize the equation itself
//! with one-sided stencils. Also the 1D regularization by `±ε D^{2N}` with
//! boundary conditions on derivatives of order `N..2N−1`, and the weighted
//! energies `I_k`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, PartitionOfUnity};
use crate::error::{Error, Result};
use crate::fichera::{report_from_snapshot, Classification, CoeffSnapshot, FicheraReport, FicheraTolerances, LinearCoefficients};
use crate::fields::{sym_index, Grid, ScalarField};
use crate::numeric::{solve_sparse, CsrMatrix};

/// Order-`2N` regularization strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularization {
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub order_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearRunConfig {
    pub dt: f64,
    pub t_end: f64,
    pub theta: f64,
    pub regularization: Option<Regularization>,
    /// Step even when the boundary conditions fail.
    pub force: bool,
    pub tolerances: FicheraTolerances,
    /// Keep every `stride`-th solution.
    pub stride: usize,
    /// Record `I_0..I_2` each step.
    pub energy: bool,
    /// Boundary charts used by the energy (2D).
    pub charts: usize,
}

impl Default for LinearRunConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            theta: 1.0,
            regularization: None,
            force: false,
            tolerances: FicheraTolerances::default(),
            stride: 0,
            energy: true,
            charts: 8,
        }
    }
}

impl LinearRunConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::ConfigInvalid(format!("dt and T must be positive (dt = {}, T = {})", self.dt, self.t_end)));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::ConfigInvalid(format!("theta must lie in [0.5, 1], got {}", self.theta)));
        }
        if let Some(r) = self.regularization {
            if !(r.order_n == 1 || r.order_n == 2) {
                return Err(Error::ConfigInvalid(format!("regularization order N must be 1 or 2, got {}", r.order_n)));
            }
            if !(r.epsilon >= 0.0) {
                return Err(Error::ConfigInvalid(format!("regularization epsilon must be nonnegative, got {}", r.epsilon)));
            }
            if dim != 1 {
                return Err(Error::ConfigInvalid("regularized runs are one-dimensional only".into()));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

/// Discrete `L = a^{ij} D_ij + b^i D_i + f`.
pub fn assemble_operator(grid: &Grid, snap: &CoeffSnapshot) -> CsrMatrix {
    let dim = grid.dim();
    let n = grid.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..dim {
        for j in i..dim {
            let c = &snap.a[sym_index(dim, i, j)];
            let mult = if i == j { 1.0 } else { 2.0 };
            let op = grid.dd(i, j);
            for (r, row) in rows.iter_mut().enumerate() {
                if c[r] != 0.0 {
                    row.extend(op.row(r).map(|(k, w)| (k, mult * c[r] * w)));
                }
            }
        }
        let op = grid.d(i);
        for (r, row) in rows.iter_mut().enumerate() {
            let b = snap.b[i][r];
            if b != 0.0 {
                row.extend(op.row(r).map(|(k, w)| (k, b * w)));
            }
        }
    }
    for (r, row) in rows.iter_mut().enumerate() {
        row.push((r, snap.f[r]));
    }
    CsrMatrix::from_rows(n, rows)
}

/// Whether a report permits the degenerate solve without boundary data.
pub fn gate_allows(report: &FicheraReport, dim: usize) -> bool {
    match report.classification {
        Classification::SatisfiesBPrime | Classification::SatisfiesB => true,
        Classification::SatisfiesBDoublePrimeOnly => dim == 1,
        Classification::Fails => false,
    }
}

fn refusal(report: &FicheraReport) -> Error {
    let mut failed = report.failures();
    if failed.is_empty() {
        failed.push("(B)");
    }
    Error::PreconditionRefused(format!(
        "boundary conditions {} fail at t = {} ({}); rerun with force to override",
        failed.join(", "),
        report.t,
        report.classification
    ))
}

/// `(I − θΔt L) w⁺ = (I + (1−θ)Δt L) w + Δt g`, everything sampled at
/// `t + θΔt`. Rows listed in `constraints` are replaced by homogeneous
/// constraint rows.
fn theta_step(
    coeffs: &LinearCoefficients,
    w: &ScalarField,
    t: f64,
    cfg: &LinearRunConfig,
    extra: Option<&CsrMatrix>,
    constraints: &[(usize, Vec<(usize, f64)>)],
) -> Result<(ScalarField, FicheraReport)> {
    let grid = coeffs.grid();
    if !Arc::ptr_eq(w.grid(), grid) && w.grid().descriptor() != grid.descriptor() {
        return Err(Error::InvalidInput("solution and coefficients live on different grids".into()));
    }
    let ts = t + cfg.theta * cfg.dt;
    let snap = coeffs.snapshot(ts)?;
    let report = report_from_snapshot(grid, &snap, ts, cfg.tolerances);
    if !cfg.force && !gate_allows(&report, grid.dim()) {
        return Err(refusal(&report));
    }
    let mut l = assemble_operator(grid, &snap);
    if let Some(e) = extra {
        l = add(&l, e, 1.0);
    }
    let g = coeffs.forcing(ts)?;
    let n = grid.len();
    let lw = l.apply(&w.values);
    let mut rhs: Vec<f64> = (0..n).map(|i| w.values[i] + (1.0 - cfg.theta) * cfg.dt * lw[i] + cfg.dt * g[i]).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|r| {
            let mut row: Vec<(usize, f64)> = l.row(r).map(|(k, v)| (k, -cfg.theta * cfg.dt * v)).collect();
            row.push((r, 1.0));
            row
        })
        .collect();
    for (r, c) in constraints {
        rows[*r] = c.clone();
        rhs[*r] = 0.0;
    }
    let m = CsrMatrix::from_rows(n, rows);
    let x = solve_sparse(&m, &rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolveFailed { reason: "non-finite solution".into(), condition_estimate: f64::INFINITY });
    }
    Ok((ScalarField::new(grid.clone(), x)?.with_time(t + cfg.dt), report))
}

fn add(a: &CsrMatrix, b: &CsrMatrix, beta: f64) -> CsrMatrix {
    let rows = (0..a.nrows())
        .map(|r| {
            let mut row = a.row_vec(r);
            row.extend(b.row(r).map(|(k, v)| (k, beta * v)));
            row
        })
        .collect();
    CsrMatrix::from_rows(a.ncols(), rows)
}

/// One θ-step of the unregularized problem. Refuses (unless forced) when
/// the coefficients fail (A₁)+(A₂)+(B), or (B″) in 1D.
pub fn step_linear(coeffs: &LinearCoefficients, w: &ScalarField, t: f64, cfg: &LinearRunConfig) -> Result<ScalarField> {
    cfg.validate(coeffs.grid().dim())?;
    Ok(theta_step(coeffs, w, t, cfg, None, &[])?.0)
}

/// Regularization operator and boundary constraints for a line grid.
fn regularization_terms(grid: &Grid, reg: Regularization) -> Result<(CsrMatrix, Vec<(usize, Vec<(usize, f64)>)>)> {
    let big_n = reg.order_n;
    if grid.len() < 4 * big_n + 2 {
        return Err(Error::GridTooCoarse(format!("order-{} regularization needs {} nodes", 2 * big_n, 4 * big_n + 2)));
    }
    let d2n = grid.line_derivative(2 * big_n)?;
    let sign = if big_n % 2 == 1 { 1.0 } else { -1.0 };
    let scaled = add(&CsrMatrix::from_rows(grid.len(), vec![Vec::new(); grid.len()]), d2n, sign * reg.epsilon);
    let n = grid.len();
    let mut constraints = Vec::new();
    for j in 0..big_n {
        let deriv = big_n + j;
        let len = deriv + grid.order();
        constraints.push((j, grid.line_boundary_stencil(true, deriv, len)?));
        constraints.push((n - 1 - j, grid.line_boundary_stencil(false, deriv, len)?));
    }
    Ok((scaled, constraints))
}

/// One implicit step of `w_t = (−1)^{N+1} ε D^{2N} w + L w + g` with
/// `∂^j w = 0` at both ends for `j = N..2N−1`. With `ε = 0` this is
/// exactly [`step_linear`].
pub fn step_regularized_1d(
    coeffs: &LinearCoefficients,
    w: &ScalarField,
    t: f64,
    cfg: &LinearRunConfig,
) -> Result<ScalarField> {
    let grid = coeffs.grid();
    cfg.validate(grid.dim())?;
    if grid.dim() != 1 {
        return Err(Error::InvalidInput("regularized steps are one-dimensional only".into()));
    }
    let reg = cfg
        .regularization
        .ok_or_else(|| Error::InvalidInput("regularized step without regularization parameters".into()))?;
    if reg.epsilon == 0.0 {
        return step_linear(coeffs, w, t, cfg);
    }
    let (extra, constraints) = regularization_terms(grid, reg)?;
    // the regularized problem carries its own boundary conditions
    let forced = LinearRunConfig { force: true, ..cfg.clone() };
    Ok(theta_step(coeffs, w, t, &forced, Some(&extra), &constraints)?.0)
}

/// `I_k` split into its three integrals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub l2: f64,
    pub collar: f64,
    pub interior: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.l2 + self.collar + self.interior
    }
}

/// Geometry of the weighted energies on a fixed grid, tabulated once.
#[derive(Debug, Clone)]
pub struct EnergyFunctional {
    grid: Arc<Grid>,
    /// Per chart: node, `ξ_λ²`, `−Y`, normal, `∂x/∂X`, `∂²x/∂X²`.
    patches: Vec<Vec<PatchNode>>,
    /// Per chart, `∂x/∂Y` at every node (2D only).
    normals: Vec<Vec<[f64; 2]>>,
    xi0_sq: Vec<f64>,
    max_k: usize,
}

#[derive(Debug, Clone)]
struct PatchNode {
    node: usize,
    weight: f64,
    depth: f64,
    normal: Vec<f64>,
    d_x: Option<Vec<f64>>,
    d_xx: Option<Vec<f64>>,
}

impl EnergyFunctional {
    pub fn new(grid: Arc<Grid>, pou: &PartitionOfUnity) -> Result<Self> {
        let c0 = pou.domain().collar_width();
        let across = (c0 / grid.normal_spacing()).floor() as usize;
        // D_Y^k needs 2k + 2 nodes across the collar
        let max_k = if across >= 6 {
            2
        } else if across >= 4 {
            1
        } else {
            0
        };
        let mut patches = vec![Vec::new(); pou.charts().len()];
        let mut xi0_sq = Vec::with_capacity(grid.len());
        let normals: Vec<Vec<[f64; 2]>> = if grid.dim() == 2 {
            pou.charts()
                .iter()
                .map(|c| {
                    grid.points()
                        .iter()
                        .map(|x| {
                            let n = c.normal_direction(x);
                            [n[0], n[1]]
                        })
                        .collect()
                })
                .collect()
        } else {
            vec![]
        };
        for (node, x) in grid.points().iter().enumerate() {
            let w = pou.weights(x);
            xi0_sq.push(w[0] * w[0]);
            for (l, chart) in pou.charts().iter().enumerate() {
                let xi = w[l + 1];
                if xi == 0.0 {
                    continue;
                }
                let (xc, y) = chart.to_chart(x);
                let jac = chart.jacobian(&xc, y);
                patches[l].push(PatchNode {
                    node,
                    weight: xi * xi,
                    depth: (-y).max(0.0),
                    normal: chart.normal_direction(x),
                    d_x: jac.d_x,
                    d_xx: jac.d_xx,
                });
            }
        }
        Ok(Self { grid, patches, normals, xi0_sq, max_k })
    }

    pub fn for_domain(grid: Arc<Grid>, domain: &Domain, charts: usize) -> Result<Self> {
        let count = if grid.dim() == 1 { 2 } else { charts.max(2) };
        let (_, pou) = domain.build_charts(count)?;
        Self::new(grid, &pou)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// `∫w² + Σ_λ ∫((−Y)(D_Y^k w)² + Σ_{|α|=k}(D_X^α w)²) ξ_λ² + ∫ξ₀² Σ_{|α|=k}|∂^α w|²`.
    pub fn evaluate(&self, w: &ScalarField, k: usize) -> Result<EnergyBreakdown> {
        if k > 2 {
            return Err(Error::InvalidInput(format!("energies are defined for k <= 2, got {k}")));
        }
        if k > self.max_k {
            return Err(Error::CollarUnderResolved(format!(
                "collar spans too few nodes for D_Y^{k}; refine the grid or widen the collar"
            )));
        }
        let grid = &self.grid;
        let dim = grid.dim();
        let v = &w.values;
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let l2 = grid.integrate(&sq);
        let grads: Vec<Vec<f64>> = if k >= 1 { (0..dim).map(|i| grid.d(i).apply(v)).collect() } else { vec![] };
        let hess: Vec<Vec<f64>> = if k >= 2 {
            (0..if dim == 1 { 1 } else { 3 })
                .map(|c| {
                    let (i, j) = if dim == 1 { (0, 0) } else { [(0, 0), (0, 1), (1, 1)][c] };
                    grid.dd(i, j).apply(v)
                })
                .collect()
        } else {
            vec![]
        };
        // interior: Σ over multi-indices |α| = k
        let interior_density: Vec<f64> = (0..grid.len())
            .map(|n| {
                let s = match k {
                    0 => v[n] * v[n],
                    1 => grads.iter().map(|g| g[n] * g[n]).sum(),
                    _ => hess.iter().map(|h| h[n] * h[n]).sum(),
                };
                self.xi0_sq[n] * s
            })
            .collect();
        let interior = grid.integrate(&interior_density);
        let mut collar_density = vec![0.0; grid.len()];
        for (l, patch) in self.patches.iter().enumerate() {
            // D_Y^k along the chart normals
            let mut dy = v.clone();
            for _ in 0..k {
                if dim == 1 {
                    let sign = patch.first().map(|p| p.normal[0]).unwrap_or(1.0);
                    dy = grid.d(0).apply(&dy).into_iter().map(|x| x * sign).collect();
                } else {
                    let gx = grid.d(0).apply(&dy);
                    let gy = grid.d(1).apply(&dy);
                    dy = self.normals[l].iter().enumerate().map(|(n, nu)| nu[0] * gx[n] + nu[1] * gy[n]).collect();
                }
            }
            for p in patch {
                let n = p.node;
                let tangential = match (k, &p.d_x) {
                    (0, _) => v[n] * v[n],
                    (_, None) => 0.0,
                    (1, Some(dx)) => {
                        let t = dx[0] * grads[0][n] + dx[1] * grads[1][n];
                        t * t
                    }
                    (_, Some(dx)) => {
                        let dxx = p.d_xx.as_ref().expect("2D charts carry second tangential derivatives");
                        let t = dx[0] * dx[0] * hess[0][n]
                            + 2.0 * dx[0] * dx[1] * hess[1][n]
                            + dx[1] * dx[1] * hess[2][n]
                            + dxx[0] * grads[0][n]
                            + dxx[1] * grads[1][n];
                        t * t
                    }
                };
                collar_density[n] += (p.depth * dy[n] * dy[n] + tangential) * p.weight;
            }
        }
        let collar = grid.integrate(&collar_density);
        Ok(EnergyBreakdown { l2, collar, interior })
    }
}

/// Single evaluation of `I_k` without caching the geometry.
pub fn energy_i_k(w: &ScalarField, pou: &PartitionOfUnity, k: usize) -> Result<EnergyBreakdown> {
    EnergyFunctional::new(w.grid().clone(), pou)?.evaluate(w, k)
}

/// `I_0, I_1, I_2` over time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub t: Vec<f64>,
    pub i0: Vec<f64>,
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
}

impl EnergyTrace {
    pub fn push(&mut self, t: f64, e: [f64; 3]) {
        self.t.push(t);
        self.i0.push(e[0]);
        self.i1.push(e[1]);
        self.i2.push(e[2]);
    }

    /// Smallest `C ≥ 0` making `e^{−Ct}(I₁ + 1)` nonincreasing on the trace.
    pub fn gronwall_constant(&self) -> f64 {
        self.t
            .windows(2)
            .zip(self.i1.windows(2))
            .map(|(t, i)| ((i[1] + 1.0).ln() - (i[0] + 1.0).ln()) / (t[1] - t[0]))
            .fold(0.0, f64::max)
    }

    /// Whether `e^{−Ct}(I₁ + 1)` is nonincreasing, up to rounding.
    pub fn envelope_holds(&self, c: f64) -> bool {
        let env: Vec<f64> = self.t.iter().zip(&self.i1).map(|(t, i)| (-c * t).exp() * (i + 1.0)).collect();
        env.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }

    /// CSV rows `t,I0,I1,I2`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "t,I0,I1,I2")?;
        for k in 0..self.t.len() {
            writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e}", self.t[k], self.i0[k], self.i1[k], self.i2[k])?;
        }
        Ok(())
    }
}

/// Trajectory and diagnostics of a linear run.
#[derive(Debug, Clone)]
pub struct LinearRun {
    pub snapshots: Vec<ScalarField>,
    pub final_w: ScalarField,
    pub energy: EnergyTrace,
    /// Boundary report at the first step.
    pub report: FicheraReport,
    pub gronwall: Option<f64>,
    pub steps: usize,
}

/// Integrates from `w(·, 0) = 0` to `T`.
pub fn solve_linear(coeffs: &LinearCoefficients, domain: &Domain, cfg: &LinearRunConfig) -> Result<LinearRun> {
    let grid = coeffs.grid().clone();
    cfg.validate(grid.dim())?;
    let energy_fn = if cfg.energy { Some(EnergyFunctional::for_domain(grid.clone(), domain, cfg.charts)?) } else { None };
    let reg = cfg.regularization.filter(|r| r.epsilon > 0.0);
    let reg_terms = match reg {
        Some(r) => Some(regularization_terms(&grid, r)?),
        None => None,
    };
    let mut w = ScalarField::zeros(grid.clone()).with_time(0.0);
    let mut trace = EnergyTrace::default();
    let record = |trace: &mut EnergyTrace, w: &ScalarField, t: f64| -> Result<()> {
        if let Some(e) = &energy_fn {
            let ks = [0usize, 1, 2];
            let mut vals = [0.0; 3];
            for k in ks {
                vals[k] = match e.evaluate(w, k) {
                    Ok(b) => b.total(),
                    Err(Error::CollarUnderResolved(_)) => f64::NAN,
                    Err(err) => return Err(err),
                };
            }
            trace.push(t, vals);
        }
        Ok(())
    };
    record(&mut trace, &w, 0.0)?;
    let mut snapshots = vec![w.clone()];
    let steps = cfg.steps();
    let mut report = None;
    for s in 0..steps {
        let t = s as f64 * cfg.dt;
        let (next, rep) = match &reg_terms {
            None => theta_step(coeffs, &w, t, cfg, None, &[])?,
            Some((extra, cons)) => {
                let forced = LinearRunConfig { force: true, ..cfg.clone() };
                theta_step(coeffs, &w, t, &forced, Some(extra), cons)?
            }
        };
        if report.is_none() {
            report = Some(rep);
        }
        w = next;
        record(&mut trace, &w, t + cfg.dt)?;
        if cfg.stride > 0 && (s + 1) % cfg.stride == 0 {
            snapshots.push(w.clone());
        }
    }
    let gronwall = if cfg.energy && trace.i1.iter().all(|v| v.is_finite()) { Some(trace.gronwall_constant()) } else { None };
    Ok(LinearRun {
        snapshots,
        final_w: w,
        energy: trace,
        report: report.expect("at least one step is taken"),
        gronwall,
        steps,
    })
}

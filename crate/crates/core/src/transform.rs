//! Height-function formulation of the free boundary problem.
//!
//! The positivity set of the pressure `v` is followed along the segments
//! `s ↦ (x − s∇v₀(x), (1+s)v₀(x))`: the height `h(x, t)` is defined by
//! `(1 + h) v₀(x) = v(x − ∇v₀(x) h, t)` and obeys `h_t = F(h, x)`, where `F`
//! depends pointwise on `h`, `∇h`, `∇²h` and the three-jet of `v₀`.

use std::sync::Arc;

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::expr::{Bindings, SpatialExpr};
use crate::fichera::{CoeffSnapshot, LinearCoefficients};
use crate::fields::{sym3_index, sym_index, Grid, ScalarField, VectorField};
use crate::numeric::scalar::{Dual, Scalar};
use crate::oracle::ExactPmeSolution;

/// `v₀` and its derivatives up to third order at one node; unused
/// components are zero in 1D.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct V0Jet {
    pub v: f64,
    pub g: [f64; 2],
    pub hh: [[f64; 2]; 2],
    pub ttt: [[[f64; 2]; 2]; 2],
}

/// Source of the initial pressure.
#[derive(Debug, Clone)]
pub enum V0Data {
    /// Derivatives exact.
    Expression(SpatialExpr),
    /// Derivatives by finite differences on the field's grid.
    Field(ScalarField),
}

/// Default lower bound accepted for `min(v₀ + |∇v₀|²)`.
pub const DEFAULT_NONDEGENERACY_THRESHOLD: f64 = 1e-6;

/// Initial data for the height equation.
#[derive(Debug, Clone)]
pub struct PmeProblem {
    m: f64,
    domain: Domain,
    grid: Arc<Grid>,
    data: V0Data,
    v0: ScalarField,
    jets: Vec<V0Jet>,
    nondegeneracy: f64,
    tube: f64,
}

impl PmeProblem {
    pub fn new(m: f64, domain: Domain, grid: Arc<Grid>, data: V0Data, threshold: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::InvalidInput(format!("exponent m must exceed 1, got {m}")));
        }
        if domain.dim() != grid.dim() {
            return Err(Error::InvalidInput("domain and grid dimensions differ".into()));
        }
        let dim = grid.dim();
        let mut jets = vec![V0Jet::default(); grid.len()];
        match &data {
            V0Data::Expression(e) => {
                if e.dim() != dim {
                    return Err(Error::InvalidInput("v0 expression dimension does not match the grid".into()));
                }
                for (jet, p) in jets.iter_mut().zip(grid.points()) {
                    let env = Bindings::new().at(p, 0.0);
                    jet.v = e.value_at(&env)?;
                    let g = e.grad_at(&env)?;
                    let hh = e.hess_at(&env)?;
                    let ttt = e.third_at(&env)?;
                    for i in 0..dim {
                        jet.g[i] = g[i];
                        for j in 0..dim {
                            jet.hh[i][j] = hh[i][j];
                            for k in 0..dim {
                                jet.ttt[i][j][k] = ttt[i][j][k];
                            }
                        }
                    }
                }
            }
            V0Data::Field(f) => {
                if !Arc::ptr_eq(f.grid(), &grid) && f.grid().descriptor() != grid.descriptor() {
                    return Err(Error::InvalidInput("v0 samples live on a different grid".into()));
                }
                let g = f.gradient()?;
                let hh = f.hessian()?;
                let ttt = f.third()?;
                for (n, jet) in jets.iter_mut().enumerate() {
                    jet.v = f.values[n];
                    for i in 0..dim {
                        jet.g[i] = g.comps[i][n];
                        for j in 0..dim {
                            jet.hh[i][j] = hh.get(n, i, j);
                            for k in 0..dim {
                                jet.ttt[i][j][k] = ttt[sym3_index(dim, i, j, k)][n];
                            }
                        }
                    }
                }
            }
        }
        let vmax = jets.iter().fold(0.0f64, |m, j| m.max(j.v.abs()));
        for (n, jet) in jets.iter_mut().enumerate() {
            if grid.is_boundary(n) {
                if jet.v.abs() > 1e-8 * vmax.max(1e-300) {
                    return Err(Error::InvalidInput(format!(
                        "v0 must vanish on the boundary; found {:e} at node {n}",
                        jet.v
                    )));
                }
                jet.v = 0.0;
            } else if !(jet.v > 0.0) {
                return Err(Error::InvalidInput(format!("v0 must be positive inside; found {:e} at node {n}", jet.v)));
            }
        }
        let nondegeneracy = jets.iter().map(|j| j.v + j.g[0] * j.g[0] + j.g[1] * j.g[1]).fold(f64::INFINITY, f64::min);
        if !(nondegeneracy >= threshold) {
            return Err(Error::DegenerateData { min: nondegeneracy, threshold });
        }
        let hmax = jets
            .iter()
            .map(|j| j.hh.iter().flatten().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        let tube = if hmax > 0.0 { (0.25 * nondegeneracy / hmax).min(0.9) } else { 0.9 };
        let v0 = ScalarField::new(grid.clone(), jets.iter().map(|j| j.v).collect())?.with_time(0.0);
        Ok(Self { m, domain, grid, data, v0, jets, nondegeneracy, tube })
    }

    pub fn from_expression(m: f64, domain: Domain, grid: Arc<Grid>, source: &str) -> Result<Self> {
        let e = SpatialExpr::new(source, grid.dim())?;
        Self::new(m, domain, grid, V0Data::Expression(e), DEFAULT_NONDEGENERACY_THRESHOLD)
    }

    pub fn from_field(m: f64, domain: Domain, v0: ScalarField) -> Result<Self> {
        let grid = v0.grid().clone();
        Self::new(m, domain, grid, V0Data::Field(v0), DEFAULT_NONDEGENERACY_THRESHOLD)
    }

    /// Quadratic-pressure data at time `t0` on its support.
    pub fn from_exact(exact: &ExactPmeSolution, t0: f64, resolution: usize, order: usize) -> Result<Self> {
        let domain = exact.support(t0)?;
        let grid = Grid::for_domain(&domain, resolution, order)?;
        Self::from_expression(exact.m, domain, grid, &exact.pressure_expression(t0))
    }

    /// Overrides the admissible bound on `|h|`.
    pub fn with_tube(mut self, tube: f64) -> Result<Self> {
        if !(tube > 0.0 && tube < 1.0) {
            return Err(Error::InvalidInput(format!("tube radius must lie in (0, 1), got {tube}")));
        }
        self.tube = tube;
        Ok(self)
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn data(&self) -> &V0Data {
        &self.data
    }

    pub fn v0(&self) -> &ScalarField {
        &self.v0
    }

    pub fn jet(&self, node: usize) -> &V0Jet {
        &self.jets[node]
    }

    pub fn jets(&self) -> &[V0Jet] {
        &self.jets
    }

    /// `min(v₀ + |∇v₀|²)` over the nodes.
    pub fn nondegeneracy(&self) -> f64 {
        self.nondegeneracy
    }

    pub fn tube(&self) -> f64 {
        self.tube
    }
}

/// Height function at one time.
#[derive(Debug, Clone)]
pub struct HState {
    pub h: ScalarField,
    pub t: f64,
    pub tube: f64,
}

impl HState {
    pub fn new(h: ScalarField, t: f64, tube: f64) -> Result<Self> {
        let max_abs = h.max_abs();
        if !(max_abs < tube) {
            return Err(Error::TubeExceeded { max_abs, tube });
        }
        Ok(Self { h: h.with_time(t), t, tube })
    }

    pub fn zero(problem: &PmeProblem, t: f64) -> Self {
        Self { h: ScalarField::zeros(problem.grid().clone()).with_time(t), t, tube: problem.tube() }
    }
}

/// `h`, `∇h`, `∇²h` per node.
#[derive(Debug, Clone)]
pub struct HeightDerivatives {
    pub h: Vec<f64>,
    pub dh: Vec<[f64; 2]>,
    pub ddh: Vec<[[f64; 2]; 2]>,
}

impl HeightDerivatives {
    pub fn of(h: &ScalarField) -> Result<Self> {
        let dim = h.grid().dim();
        let g = h.gradient()?;
        let hh = h.hessian()?;
        let n = h.len();
        let mut dh = vec![[0.0; 2]; n];
        let mut ddh = vec![[[0.0; 2]; 2]; n];
        for k in 0..n {
            for i in 0..dim {
                dh[k][i] = g.comps[i][k];
                for j in 0..dim {
                    ddh[k][i][j] = hh.get(k, i, j);
                }
            }
        }
        Ok(Self { h: h.values.clone(), dh, ddh })
    }
}

/// Pointwise failure of the height operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointFailure {
    SingularC(f64),
    Denominator(f64),
}

impl PointFailure {
    pub fn at(self, node: usize) -> Error {
        match self {
            PointFailure::SingularC(det) => Error::SingularC { node, det },
            PointFailure::Denominator(value) => Error::NonpositiveDenominator { node, value },
        }
    }
}

fn zero_like<S: Scalar + Copy>(s: S) -> S {
    s * 0.0
}

/// `C_ij = δ_ij − h_i v₀_j − h v₀_ij`.
pub fn c_matrix<S: Scalar + Copy>(dim: usize, jet: &V0Jet, h: S, dh: [S; 2]) -> [[S; 2]; 2] {
    let z = zero_like(h);
    let mut c = [[z; 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            let delta = if i == j { 1.0 } else { 0.0 };
            c[i][j] = -(dh[i] * jet.g[j]) - h * jet.hh[i][j] + delta;
        }
    }
    c
}

/// Inverse of `C`.
pub fn invert<S: Scalar + Copy>(dim: usize, c: [[S; 2]; 2]) -> std::result::Result<[[S; 2]; 2], PointFailure> {
    let det = if dim == 1 { c[0][0] } else { c[0][0] * c[1][1] - c[0][1] * c[1][0] };
    if !(det.value().abs() >= 1e-12) {
        return Err(PointFailure::SingularC(det.value()));
    }
    let z = zero_like(det);
    if dim == 1 {
        return Ok([[(z + 1.0) / det, z], [z, z]]);
    }
    Ok([[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]])
}

/// The height operator `F(h, x)` at one node, generic over the scalar so the
/// same code yields values, linearizations and time jets.
pub fn pointwise_rhs<S: Scalar + Copy>(
    m: f64,
    dim: usize,
    jet: &V0Jet,
    h: S,
    dh: [S; 2],
    ddh: [[S; 2]; 2],
) -> std::result::Result<S, PointFailure> {
    let z = zero_like(h);
    let a = invert(dim, c_matrix(dim, jet, h, dh))?;
    let one_h = h + 1.0;
    let mut p = [z; 2];
    for i in 0..dim {
        p[i] = one_h * jet.g[i] + dh[i] * jet.v;
    }
    // ∇v at the image point
    let mut v = [z; 2];
    for j in 0..dim {
        for i in 0..dim {
            v[j] = v[j] + a[j][i] * p[i];
        }
    }
    // M_ik = E_ik + G_irk v_r; ∇²v = A M Aᵀ
    let mut mm = [[z; 2]; 2];
    for i in 0..dim {
        for k in 0..dim {
            let mut e = one_h * jet.hh[i][k] + dh[k] * jet.g[i] + dh[i] * jet.g[k] + ddh[i][k] * jet.v;
            for r in 0..dim {
                let g = ddh[i][k] * jet.g[r] + dh[i] * jet.hh[r][k] + dh[k] * jet.hh[i][r] + h * jet.ttt[i][r][k];
                e = e + g * v[r];
            }
            mm[i][k] = e;
        }
    }
    let mut lap = z;
    for j in 0..dim {
        for i in 0..dim {
            for k in 0..dim {
                lap = lap + a[j][i] * mm[i][k] * a[j][k];
            }
        }
    }
    let mut grad2 = z;
    let mut den = z + jet.v;
    for j in 0..dim {
        grad2 = grad2 + v[j] * v[j];
        den = den + v[j] * jet.g[j];
    }
    if !(den.value() > 0.0) {
        return Err(PointFailure::Denominator(den.value()));
    }
    Ok((one_h * (jet.v * (m - 1.0)) * lap + grad2) / den)
}

/// Nodewise `A = C⁻¹`, `C`, the denominator `D` and `∂_k A`.
#[derive(Debug, Clone)]
pub struct TransformState {
    pub a: Vec<[[f64; 2]; 2]>,
    pub c: Vec<[[f64; 2]; 2]>,
    pub d: Vec<f64>,
    /// `da[n][k][j][i] = ∂_k A^{ji}`.
    pub da: Vec<[[[f64; 2]; 2]; 2]>,
}

pub fn assemble_a(problem: &PmeProblem, state: &HState) -> Result<TransformState> {
    let dim = problem.dim();
    let hd = HeightDerivatives::of(&state.h)?;
    let n = problem.grid().len();
    let mut out = TransformState {
        a: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
        d: Vec::with_capacity(n),
        da: Vec::with_capacity(n),
    };
    for node in 0..n {
        let jet = problem.jet(node);
        let (h, dh, ddh) = (hd.h[node], hd.dh[node], hd.ddh[node]);
        let c = c_matrix(dim, jet, h, dh);
        let a = invert(dim, c).map_err(|e| e.at(node))?;
        let mut d = jet.v;
        for j in 0..dim {
            for i in 0..dim {
                d += a[j][i] * ((1.0 + h) * jet.g[i] + dh[i] * jet.v) * jet.g[j];
            }
        }
        if !(d > 0.0) {
            return Err(Error::NonpositiveDenominator { node, value: d });
        }
        let g = |i: usize, l: usize, k: usize| {
            ddh[i][k] * jet.g[l] + dh[i] * jet.hh[l][k] + dh[k] * jet.hh[i][l] + h * jet.ttt[i][l][k]
        };
        let mut da = [[[0.0; 2]; 2]; 2];
        for k in 0..dim {
            for j in 0..dim {
                for q in 0..dim {
                    let mut s = 0.0;
                    for i in 0..dim {
                        for l in 0..dim {
                            s += a[j][i] * g(i, l, k) * a[l][q];
                        }
                    }
                    da[k][j][q] = s;
                }
            }
        }
        out.a.push(a);
        out.c.push(c);
        out.d.push(d);
        out.da.push(da);
    }
    Ok(out)
}

/// `V = (−∇v₀, v₀)` per node, `dim + 1` components.
pub fn transversal_field(problem: &PmeProblem) -> Result<VectorField> {
    let dim = problem.dim();
    let mut comps: Vec<Vec<f64>> = (0..dim).map(|k| problem.jets().iter().map(|j| -j.g[k]).collect()).collect();
    comps.push(problem.jets().iter().map(|j| j.v).collect());
    VectorField::new(problem.grid().clone(), comps)
}

/// `F(h, ·)` at every node.
pub fn evaluate_f(problem: &PmeProblem, state: &HState) -> Result<ScalarField> {
    let hd = HeightDerivatives::of(&state.h)?;
    let dim = problem.dim();
    let values = (0..problem.grid().len())
        .map(|n| pointwise_rhs(problem.m(), dim, problem.jet(n), hd.h[n], hd.dh[n], hd.ddh[n]).map_err(|e| e.at(n)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScalarField::new(problem.grid().clone(), values)?.with_time(state.t))
}

/// Coefficients of `w ↦ d/dτ F(h + τw)|₀ = a^{ij}w_ij + b^i w_i + f w`, by
/// forward-mode differentiation of [`pointwise_rhs`].
pub fn linearize_snapshot(problem: &PmeProblem, state: &HState) -> Result<CoeffSnapshot> {
    let hd = HeightDerivatives::of(&state.h)?;
    linearize_derivatives(problem, &hd)
}

pub(crate) fn linearize_derivatives(problem: &PmeProblem, hd: &HeightDerivatives) -> Result<CoeffSnapshot> {
    let dim = problem.dim();
    let n = problem.grid().len();
    let m = problem.m();
    let mut snap = CoeffSnapshot::zeros(dim, n);
    for node in 0..n {
        let jet = problem.jet(node);
        if dim == 1 {
            type D = Dual<3>;
            let h = D::variable(hd.h[node], 0);
            let dh = [D::variable(hd.dh[node][0], 1), D::constant(0.0)];
            let ddh = [[D::variable(hd.ddh[node][0][0], 2), D::constant(0.0)], [D::constant(0.0); 2]];
            let r = pointwise_rhs(m, 1, jet, h, dh, ddh).map_err(|e| e.at(node))?;
            snap.f[node] = r.eps[0];
            snap.b[0][node] = r.eps[1];
            snap.a[0][node] = r.eps[2];
        } else {
            type D = Dual<6>;
            let h = D::variable(hd.h[node], 0);
            let dh = [D::variable(hd.dh[node][0], 1), D::variable(hd.dh[node][1], 2)];
            let hxy = D::variable(hd.ddh[node][0][1], 4);
            let ddh = [[D::variable(hd.ddh[node][0][0], 3), hxy], [hxy, D::variable(hd.ddh[node][1][1], 5)]];
            let r = pointwise_rhs(m, 2, jet, h, dh, ddh).map_err(|e| e.at(node))?;
            snap.f[node] = r.eps[0];
            snap.b[0][node] = r.eps[1];
            snap.b[1][node] = r.eps[2];
            snap.a[sym_index(2, 0, 0)][node] = r.eps[3];
            snap.a[sym_index(2, 0, 1)][node] = 0.5 * r.eps[4];
            snap.a[sym_index(2, 1, 1)][node] = r.eps[5];
        }
    }
    Ok(snap)
}

/// Linearization of `F` at `state` as time-independent coefficients.
pub fn linearize_f(problem: &PmeProblem, state: &HState) -> Result<LinearCoefficients> {
    let snap = linearize_snapshot(problem, state)?;
    LinearCoefficients::constant(problem.grid().clone(), &format!("linearized height operator, m = {}", problem.m()), snap)
}

/// Same coefficients as [`linearize_snapshot`] by central differences in
/// each pointwise argument with step `step`.
pub fn linearize_fd(problem: &PmeProblem, state: &HState, step: f64) -> Result<CoeffSnapshot> {
    let hd = HeightDerivatives::of(&state.h)?;
    let dim = problem.dim();
    let n = problem.grid().len();
    let m = problem.m();
    let mut snap = CoeffSnapshot::zeros(dim, n);
    for node in 0..n {
        let jet = problem.jet(node);
        let eval = |var: usize, delta: f64| -> Result<f64> {
            let mut h = hd.h[node];
            let mut dh = hd.dh[node];
            let mut ddh = hd.ddh[node];
            match (dim, var) {
                (_, 0) => h += delta,
                (1, 1) => dh[0] += delta,
                (1, 2) => ddh[0][0] += delta,
                (2, 1) => dh[0] += delta,
                (2, 2) => dh[1] += delta,
                (2, 3) => ddh[0][0] += delta,
                (2, 4) => {
                    ddh[0][1] += delta;
                    ddh[1][0] += delta;
                }
                (2, 5) => ddh[1][1] += delta,
                _ => unreachable!(),
            }
            pointwise_rhs(m, dim, jet, h, dh, ddh).map_err(|e| e.at(node))
        };
        let d = |var: usize| -> Result<f64> { Ok((eval(var, step)? - eval(var, -step)?) / (2.0 * step)) };
        snap.f[node] = d(0)?;
        if dim == 1 {
            snap.b[0][node] = d(1)?;
            snap.a[0][node] = d(2)?;
        } else {
            snap.b[0][node] = d(1)?;
            snap.b[1][node] = d(2)?;
            snap.a[0][node] = d(3)?;
            snap.a[1][node] = 0.5 * d(4)?;
            snap.a[2][node] = d(5)?;
        }
    }
    Ok(snap)
}

/// Pressure evaluable at arbitrary points near the initial support.
pub trait PressureSource {
    fn value(&self, y: &[f64]) -> f64;

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|k| {
                let step = 1e-6 * (1.0 + y[k].abs());
                let mut p = y.to_vec();
                let mut q = y.to_vec();
                p[k] += step;
                q[k] -= step;
                (self.value(&p) - self.value(&q)) / (2.0 * step)
            })
            .collect()
    }
}

/// Pressure given by a closure, with an optional exact gradient.
pub struct ClosurePressure<F, G = fn(&[f64]) -> Vec<f64>> {
    value: F,
    gradient: Option<G>,
}

impl<F: Fn(&[f64]) -> f64> ClosurePressure<F> {
    pub fn new(value: F) -> Self {
        Self { value, gradient: None }
    }
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> ClosurePressure<F, G> {
    pub fn with_gradient(value: F, gradient: G) -> Self {
        Self { value, gradient: Some(gradient) }
    }
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> PressureSource for ClosurePressure<F, G> {
    fn value(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(y),
            None => {
                let step = 1e-6;
                (0..y.len())
                    .map(|k| {
                        let mut p = y.to_vec();
                        let mut q = y.to_vec();
                        p[k] += step;
                        q[k] -= step;
                        ((self.value)(&p) - (self.value)(&q)) / (2.0 * step)
                    })
                    .collect()
            }
        }
    }
}

/// Exact quadratic pressure frozen at one time, smoothly extended.
#[derive(Debug, Clone, Copy)]
pub struct ExactAt {
    pub exact: ExactPmeSolution,
    pub t: f64,
}

impl ExactPmeSolution {
    pub fn at(&self, t: f64) -> ExactAt {
        ExactAt { exact: *self, t }
    }
}

impl PressureSource for ExactAt {
    fn value(&self, y: &[f64]) -> f64 {
        self.exact.pressure_extended(y, self.t)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.exact.gradient(y, self.t)
    }
}

/// Pressure sampled on a line grid, interpolated by local cubics and
/// extrapolated by the end cubics.
#[derive(Debug, Clone)]
pub struct SampledPressure {
    a: f64,
    dx: f64,
    values: Vec<f64>,
}

impl SampledPressure {
    pub fn from_field(v: &ScalarField) -> Result<Self> {
        let dx = v
            .grid()
            .dx()
            .ok_or_else(|| Error::InvalidInput("sampled pressures are supported on line grids only".into()))?;
        if v.len() < 4 {
            return Err(Error::GridTooCoarse("cubic interpolation needs at least 4 samples".into()));
        }
        Ok(Self { a: v.grid().point(0)[0], dx, values: v.values.clone() })
    }

    fn stencil(&self, x: f64) -> (usize, f64) {
        let n = self.values.len();
        let s = (x - self.a) / self.dx;
        let i = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        (i, s - i as f64)
    }
}

impl PressureSource for SampledPressure {
    fn value(&self, y: &[f64]) -> f64 {
        let (i, u) = self.stencil(y[0]);
        let f = &self.values[i..i + 4];
        let l = [
            -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
            u * (u - 2.0) * (u - 3.0) / 2.0,
            -u * (u - 1.0) * (u - 3.0) / 2.0,
            u * (u - 1.0) * (u - 2.0) / 6.0,
        ];
        (0..4).map(|k| l[k] * f[k]).sum()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let (i, u) = self.stencil(y[0]);
        let f = &self.values[i..i + 4];
        let dl = [
            -(3.0 * u * u - 12.0 * u + 11.0) / 6.0,
            (3.0 * u * u - 10.0 * u + 6.0) / 2.0,
            -(3.0 * u * u - 8.0 * u + 3.0) / 2.0,
            (3.0 * u * u - 6.0 * u + 2.0) / 6.0,
        ];
        vec![(0..4).map(|k| dl[k] * f[k]).sum::<f64>() / self.dx]
    }
}

const TUBE_SAMPLES: usize = 65;

/// Solves `(1 + s) v₀(x) = v(x − ∇v₀(x) s)` for `s` in the tube at every
/// node by bracketed Newton iteration.
pub fn h_from_v(problem: &PmeProblem, v: &dyn PressureSource, t: f64) -> Result<HState> {
    let dim = problem.dim();
    let tube = problem.tube();
    let mut out = Vec::with_capacity(problem.grid().len());
    for (node, x) in problem.grid().points().iter().enumerate() {
        let jet = problem.jet(node);
        let g = &jet.g[..dim];
        let point = |s: f64| -> Vec<f64> { (0..dim).map(|k| x[k] - g[k] * s).collect() };
        let r = |s: f64| (1.0 + s) * jet.v - v.value(&point(s));
        let dr = |s: f64| {
            let gv = v.gradient(&point(s));
            jet.v + (0..dim).map(|k| gv[k] * g[k]).sum::<f64>()
        };
        let scale = jet.v + g.iter().map(|c| c * c).sum::<f64>();
        let tol = 1e-10 * scale;
        let span = 0.999 * tube;
        let samples: Vec<(f64, f64)> = (0..TUBE_SAMPLES)
            .map(|k| {
                let s = -span + 2.0 * span * k as f64 / (TUBE_SAMPLES - 1) as f64;
                (s, r(s))
            })
            .collect();
        let mut zero = None;
        let mut changes = Vec::new();
        let mut last: Option<(f64, f64)> = None;
        for &(s, val) in &samples {
            if val == 0.0 {
                zero.get_or_insert(s);
                continue;
            }
            if let Some((ls, lv)) = last {
                if (lv < 0.0) != (val < 0.0) {
                    changes.push((ls, s));
                }
            }
            last = Some((s, val));
        }
        let root = match (changes.len(), zero) {
            (0, Some(s)) => s,
            (0, None) => return Err(Error::NoRootInTube { node }),
            (1, _) => {
                let (mut lo, mut hi) = changes[0];
                let rising = r(hi) > 0.0;
                let mut s = 0.5 * (lo + hi);
                let mut done = false;
                for _ in 0..60 {
                    let val = r(s);
                    if val.abs() <= tol {
                        done = true;
                        break;
                    }
                    if (val > 0.0) == rising {
                        hi = s;
                    } else {
                        lo = s;
                    }
                    let d = dr(s);
                    let newton = s - val / d;
                    s = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                }
                if !done && r(s).abs() > tol {
                    return Err(Error::NoRootInTube { node });
                }
                s
            }
            (count, _) => return Err(Error::MultipleRoots { node, count }),
        };
        out.push(root);
    }
    let h = ScalarField::new(problem.grid().clone(), out)?;
    HState::new(h, t, tube)
}

/// Front points and `|∇v|` there at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontSample {
    pub t: f64,
    pub nodes: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    /// Outward unit normal of the moved front, `−∇v/|∇v|`.
    pub normals: Vec<Vec<f64>>,
    pub grad_v: Vec<f64>,
}

/// `x − ∇v₀(x) h(x)` over boundary nodes, with `|∇v| = |(1+h) A ∇v₀|`.
pub fn reconstruct_front(problem: &PmeProblem, state: &HState) -> Result<FrontSample> {
    let dim = problem.dim();
    let hd = HeightDerivatives::of(&state.h)?;
    let grid = problem.grid();
    let mut sample =
        FrontSample { t: state.t, nodes: grid.boundary().to_vec(), points: vec![], normals: vec![], grad_v: vec![] };
    for &node in grid.boundary() {
        let jet = problem.jet(node);
        let h = hd.h[node];
        let x = grid.point(node);
        sample.points.push((0..dim).map(|k| x[k] - jet.g[k] * h).collect());
        let a = invert(dim, c_matrix(dim, jet, h, hd.dh[node])).map_err(|e| e.at(node))?;
        let grad: Vec<f64> = (0..dim)
            .map(|j| (0..dim).map(|i| a[j][i] * ((1.0 + h) * jet.g[i] + hd.dh[node][i] * jet.v)).sum())
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        sample.normals.push(grad.iter().map(|g| -g / norm).collect());
        sample.grad_v.push(norm);
    }
    Ok(sample)
}

/// Points `x − ∇v₀ h` of the deformed graph with pressure `(1 + h) v₀` there.
pub fn deformed_pressure(problem: &PmeProblem, state: &HState) -> Vec<(Vec<f64>, f64)> {
    let dim = problem.dim();
    problem
        .grid()
        .points()
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let jet = problem.jet(n);
            let h = state.h.values[n];
            ((0..dim).map(|k| x[k] - jet.g[k] * h).collect(), (1.0 + h) * jet.v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fichera::{check_conditions, FicheraTolerances};

    fn parabola(m: f64, n: usize) -> PmeProblem {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let g = Grid::for_domain(&dom, n, 2).unwrap();
        PmeProblem::from_expression(m, dom, g, "1 - x^2").unwrap()
    }

    #[test]
    fn transversal_field_of_parabola() {
        let p = parabola(2.0, 21);
        let v = transversal_field(&p).unwrap();
        assert_eq!(v.at(20), vec![2.0, 0.0]);
        assert_eq!(v.at(10), vec![0.0, 1.0]);
        for i in 0..21 {
            assert!(v.norm_at(i) >= p.nondegeneracy().sqrt() - 1e-12);
        }
    }

    #[test]
    fn degenerate_data_is_refused() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let g = Grid::for_domain(&dom, 21, 2).unwrap();
        // (1 − x²)² has a vanishing gradient on the boundary
        let r = PmeProblem::from_expression(2.0, dom, g, "(1-x^2)^2");
        assert!(matches!(r, Err(Error::DegenerateData { .. })));
    }

    #[test]
    fn c_matrix_scalar_case() {
        let jet = V0Jet { v: 0.75, g: [-1.0, 0.0], hh: [[-2.0, 0.0], [0.0, 0.0]], ..Default::default() };
        let c = c_matrix(1, &jet, 0.01, [0.02, 0.0]);
        assert!((c[0][0] - 1.04).abs() < 1e-15);
        let a = invert(1, c).unwrap();
        assert!((a[0][0] - 1.0 / 1.04).abs() < 1e-15);
        // h' v0' + h v0'' = 1 makes C vanish
        let c = c_matrix(1, &jet, 0.0, [-1.0, 0.0]);
        assert!(matches!(invert(1, c), Err(PointFailure::SingularC(_))));
    }

    #[test]
    fn zero_height_gives_identity_and_closed_form() {
        let p = parabola(2.0, 41);
        let st = HState::zero(&p, 0.0);
        let ts = assemble_a(&p, &st).unwrap();
        for a in &ts.a {
            assert_eq!(a[0][0], 1.0);
        }
        let f = evaluate_f(&p, &st).unwrap();
        assert!((f.values[20] + 2.0).abs() < 1e-14);
        assert!((f.values[40] - 1.0).abs() < 1e-14);
        assert!((f.values[0] - 1.0).abs() < 1e-14);
        for (i, x) in p.grid().points().iter().enumerate() {
            let x = x[0];
            let v0 = 1.0 - x * x;
            let expect = (v0 * -2.0 + 4.0 * x * x) / (v0 + 4.0 * x * x);
            assert!((f.values[i] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn ac_is_identity_for_nonzero_height() {
        let dom = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let g = Grid::for_domain(&dom, 12, 2).unwrap();
        let p = PmeProblem::from_expression(1.5, dom, g.clone(), "1 - x^2 - y^2").unwrap();
        let h = ScalarField::from_fn(g, |x| 0.05 * (x[0] + 0.3 * x[1] * x[1]));
        let ts = assemble_a(&p, &HState::new(h, 0.0, p.tube()).unwrap()).unwrap();
        for (a, c) in ts.a.iter().zip(&ts.c) {
            for i in 0..2 {
                for j in 0..2 {
                    let ac: f64 = (0..2).map(|k| a[i][k] * c[k][j]).sum();
                    let ca: f64 = (0..2).map(|k| c[i][k] * a[k][j]).sum();
                    let delta = if i == j { 1.0 } else { 0.0 };
                    assert!((ac - delta).abs() < 1e-10 && (ca - delta).abs() < 1e-10);
                }
            }
        }
        assert!(ts.d.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn derivative_of_a_matches_difference_quotient() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let g = Grid::line(-1.0, 1.0, 801, 4).unwrap();
        let p = PmeProblem::from_expression(2.0, dom, g.clone(), "1 - x^2").unwrap();
        let h = ScalarField::from_fn(g, |x| 0.05 * (2.0 * x[0]).sin());
        let ts = assemble_a(&p, &HState::new(h, 0.0, p.tube()).unwrap()).unwrap();
        let a: Vec<f64> = ts.a.iter().map(|a| a[0][0]).collect();
        let fd = p.grid().d(0).apply(&a);
        for i in 0..801 {
            assert!((fd[i] - ts.da[i][0][0][0]).abs() < 1e-6, "{i}");
        }
    }

    #[test]
    fn dual_linearization_matches_finite_differences() {
        let dom = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let g = Grid::for_domain(&dom, 12, 2).unwrap();
        let p = PmeProblem::from_expression(1.5, dom, g.clone(), "1 - x^2 - y^2 + 0.1*x*(1-x^2-y^2)").unwrap();
        let h = ScalarField::from_fn(g, |x| 0.02 * (x[0] - x[1] * x[0] + 0.5));
        let st = HState::new(h, 0.0, p.tube()).unwrap();
        let ad = linearize_snapshot(&p, &st).unwrap();
        let fd = linearize_fd(&p, &st, 1e-5).unwrap();
        let rel = |x: &[f64], y: &[f64]| {
            let s = x.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            x.iter().zip(y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / s
        };
        for c in 0..3 {
            assert!(rel(&ad.a[c], &fd.a[c]) < 1e-6);
        }
        for c in 0..2 {
            assert!(rel(&ad.b[c], &fd.b[c]) < 1e-6);
        }
        assert!(rel(&ad.f, &fd.f) < 1e-6);
    }

    #[test]
    fn diffusion_vanishes_on_the_boundary() {
        let p = parabola(2.0, 41);
        let h = ScalarField::from_fn(p.grid().clone(), |x| 0.03 * x[0] + 0.01);
        let snap = linearize_snapshot(&p, &HState::new(h, 0.0, p.tube()).unwrap()).unwrap();
        for &b in p.grid().boundary() {
            assert!(snap.a[0][b].abs() <= 1e-12);
        }
    }

    #[test]
    fn boundary_drift_sign_dichotomy() {
        let tol = FicheraTolerances::default();
        for (m, sign) in [(1.5, -1.0), (2.0, 0.0), (3.0, 1.0)] {
            let p = parabola(m, 101);
            let c = linearize_f(&p, &HState::zero(&p, 0.0)).unwrap();
            let r = check_conditions(&c, p.domain(), 0.0, tol).unwrap();
            for (q3, q4) in r.q3.iter().zip(&r.q4) {
                if sign == 0.0 {
                    assert!(q3.abs() <= r.tol_zero, "m={m} q3={q3}");
                } else {
                    assert!(q3 * sign > r.tol_strict, "m={m} q3={q3}");
                }
                assert!(*q4 <= r.tol_zero);
            }
            assert!(r.verdicts.a1 && r.verdicts.a2);
        }
    }

    #[test]
    fn height_of_unchanged_pressure_is_zero() {
        let p = parabola(2.0, 41);
        let src = ClosurePressure::new(|y: &[f64]| 1.0 - y[0] * y[0]);
        let st = h_from_v(&p, &src, 0.0).unwrap();
        assert!(st.h.max_abs() < 1e-12);
    }

    #[test]
    fn scaled_pressure_at_critical_point() {
        let p = parabola(2.0, 41);
        let src = ClosurePressure::new(|y: &[f64]| 1.1 * (1.0 - y[0] * y[0]));
        let st = h_from_v(&p, &src, 0.0).unwrap();
        assert!((st.h.values[20] - 0.1).abs() < 1e-10);
    }

    #[test]
    fn exact_height_gives_exact_front() {
        let e = ExactPmeSolution::quadratic_pressure_1d(2.0, 1.0).unwrap();
        let p = PmeProblem::from_exact(&e, 1.0, 201, 2).unwrap();
        for &t in &[1.05, 1.2, 1.5] {
            let st = h_from_v(&p, &e.at(t), t).unwrap();
            let front = reconstruct_front(&p, &st).unwrap();
            let r = e.front_radius(t);
            assert!((front.points[1][0] - r).abs() < 1e-8);
            assert!((front.points[0][0] + r).abs() < 1e-8);
            // the right endpoint moves outward
            assert!(st.h.values[200] > 0.0);
        }
    }

    #[test]
    fn sampled_pressure_round_trip() {
        let e = ExactPmeSolution::quadratic_pressure_1d(1.5, 1.0).unwrap();
        let p = PmeProblem::from_exact(&e, 1.0, 101, 2).unwrap();
        let r = e.front_radius(1.3) * 1.4;
        let fine = Grid::line(-r, r, 2001, 2).unwrap();
        let samples = ScalarField::from_fn(fine, |x| e.pressure_extended(x, 1.1));
        let st = h_from_v(&p, &SampledPressure::from_field(&samples).unwrap(), 1.1).unwrap();
        let exact = h_from_v(&p, &e.at(1.1), 1.1).unwrap();
        // v is quadratic, so local cubics reproduce it
        for (a, b) in st.h.values.iter().zip(&exact.h.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pressure_round_trip_through_the_deformed_graph() {
        let p = parabola(1.5, 81);
        let h = ScalarField::from_fn(p.grid().clone(), |x| 0.1 * (1.0 + x[0]) * (1.3 - x[0]) * 0.5);
        let st = HState::new(h.clone(), 0.0, p.tube()).unwrap();
        // pressure induced by h along the graph: v(x − v0' h) = (1+h) v0,
        // sampled on the deformed nodes and interpolated
        let graph = deformed_pressure(&p, &st);
        let xs: Vec<f64> = graph.iter().map(|g| g.0[0]).collect();
        let vs: Vec<f64> = graph.iter().map(|g| g.1).collect();
        let interp = move |y: &[f64]| {
            let k = xs.partition_point(|x| *x < y[0]).clamp(2, xs.len() - 2) - 2;
            let (xw, vw) = (&xs[k..k + 4], &vs[k..k + 4]);
            (0..4)
                .map(|i| {
                    let mut l = vw[i];
                    for j in 0..4 {
                        if i != j {
                            l *= (y[0] - xw[j]) / (xw[i] - xw[j]);
                        }
                    }
                    l
                })
                .sum::<f64>()
        };
        let back = h_from_v(&p, &ClosurePressure::new(interp), 0.0).unwrap();
        for (a, b) in back.h.values.iter().zip(&h.values) {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn tube_guard() {
        let p = parabola(2.0, 21);
        let h = ScalarField::from_fn(p.grid().clone(), |_| 0.95);
        assert!(matches!(HState::new(h, 0.0, p.tube()), Err(Error::TubeExceeded { .. })));
    }
}

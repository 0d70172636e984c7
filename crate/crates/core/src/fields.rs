//! Grid-sampled fields on Ω̄₀ with finite-difference calculus.
//!
//! Derivative operators are assembled once per grid as sparse matrices.
//! Boundary nodes use one-sided stencils of the same nominal order; no ghost
//! values are ever introduced.
//!
//! Two grid families exist: a uniform line in 1D, and a mapped polar grid in
//! 2D (`x = Ψ(ρ, θ)`, `ρ ∈ (0, 1]`) whose outermost ring lies on ∂Ω₀. The
//! polar grid has no node at the pole; stencils crossing it use the node at
//! `θ + π` of the reflected ring.

use std::fmt::Debug;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Chart, Domain, DomainKind, StarCurve};
use crate::error::{Error, Result};
use crate::numeric::stencil::{fornberg, uniform_weights, window};
use crate::numeric::CsrMatrix;

/// Position and first/second derivatives of a polar mapping at (ρ, θ).
/// `d[k][q] = ∂x_k/∂q`, `dd[k][q][r] = ∂²x_k/∂q∂r`, with `q = 0` for ρ and
/// `q = 1` for θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapJet {
    pub x: [f64; 2],
    pub d: [[f64; 2]; 2],
    pub dd: [[[f64; 2]; 2]; 2],
}

/// Smooth map from the unit polar rectangle onto Ω̄₀, with `ρ = 1` onto ∂Ω₀.
pub trait PolarMap: Debug + Send + Sync {
    fn eval(&self, rho: f64, theta: f64) -> MapJet;
    fn describe(&self) -> String;
}

/// Builds the jet of `x = c + g(ρ,θ) e(θ)` from `g` and its derivatives
/// `[g, g_ρ, g_θ, g_ρρ, g_ρθ, g_θθ]`.
fn radial_jet(c: [f64; 2], theta: f64, g: [f64; 6]) -> MapJet {
    let (s, co) = theta.sin_cos();
    let e = [co, s];
    let ep = [-s, co];
    let [g0, gr, gt, grr, grt, gtt] = g;
    let mut j = MapJet { x: [0.0; 2], d: [[0.0; 2]; 2], dd: [[[0.0; 2]; 2]; 2] };
    for k in 0..2 {
        j.x[k] = c[k] + g0 * e[k];
        j.d[k][0] = gr * e[k];
        j.d[k][1] = gt * e[k] + g0 * ep[k];
        j.dd[k][0][0] = grr * e[k];
        j.dd[k][0][1] = grt * e[k] + gr * ep[k];
        j.dd[k][1][0] = j.dd[k][0][1];
        j.dd[k][1][1] = gtt * e[k] + 2.0 * gt * ep[k] - g0 * e[k];
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiskMap {
    pub center: [f64; 2],
    pub radius: f64,
}

impl PolarMap for DiskMap {
    fn eval(&self, rho: f64, theta: f64) -> MapJet {
        let r = self.radius;
        radial_jet(self.center, theta, [r * rho, r, 0.0, 0.0, 0.0, 0.0])
    }

    fn describe(&self) -> String {
        format!("disk(center=({}, {}), radius={})", self.center[0], self.center[1], self.radius)
    }
}

/// Star-shaped map `x = c + ρ S(ρ,θ) e(θ)`, `S = R̄ + β(ρ)(R(θ) − R̄)`.
/// `β` vanishes for `ρ ≤ 0.3`, so the map is a scaled disk near the pole.
#[derive(Debug, Clone, PartialEq)]
pub struct StarMap {
    pub curve: StarCurve,
}

const BLEND_START: f64 = 0.3;

/// C³ smoothstep rising from 0 at `BLEND_START` to 1 at ρ = 1, with
/// value, first and second derivatives in ρ.
fn blend(rho: f64) -> [f64; 3] {
    if rho <= BLEND_START {
        return [0.0; 3];
    }
    let w = 1.0 - BLEND_START;
    let s = ((rho - BLEND_START) / w).min(1.0);
    let p = s.powi(4) * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s.powi(3));
    let dp = 140.0 * s.powi(3) * (1.0 - s).powi(3);
    let ddp = 420.0 * s * s * (1.0 - s).powi(2) * (1.0 - 2.0 * s);
    [p, dp / w, ddp / (w * w)]
}

impl PolarMap for StarMap {
    fn eval(&self, rho: f64, theta: f64) -> MapJet {
        let rbar = self.curve.mean_radius();
        let [r, rt, rtt] = self.curve.radius_at(theta);
        let [b, bp, bpp] = blend(rho);
        let s = rbar + b * (r - rbar);
        let s_r = bp * (r - rbar);
        let s_rr = bpp * (r - rbar);
        let g = [
            rho * s,
            s + rho * s_r,
            rho * b * rt,
            2.0 * s_r + rho * s_rr,
            (b + rho * bp) * rt,
            rho * b * rtt,
        ];
        radial_jet(self.curve.center(), theta, g)
    }

    fn describe(&self) -> String {
        format!("star-shaped({} samples)", self.curve.samples().len())
    }
}

#[derive(Debug, Clone)]
pub enum GridKind {
    Line { a: f64, b: f64, n: usize },
    Polar { nr: usize, ntheta: usize, map: Arc<dyn PolarMap> },
}

/// Serializable grid summary written into field headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridDescriptor {
    Line { a: f64, b: f64, n: usize, order: usize },
    Polar { nr: usize, ntheta: usize, order: usize, map: String },
}

/// Sampling nodes of Ω̄₀ plus the derivative operators acting on them.
#[derive(Debug)]
pub struct Grid {
    kind: GridKind,
    dim: usize,
    order: usize,
    points: Vec<Vec<f64>>,
    boundary: Vec<usize>,
    normals: Vec<Vec<f64>>,
    weights: Vec<f64>,
    grad: Vec<CsrMatrix>,
    hess: Vec<CsrMatrix>,
    /// 1D only: `line_ops[k-1]` is the k-th derivative, k = 1..4.
    line_ops: Vec<CsrMatrix>,
    /// Characteristic spacing along boundary normals.
    normal_spacing: f64,
    /// Gradient rows at boundary nodes with stencils two orders higher,
    /// `[boundary position][axis]`; used to estimate truncation error.
    alt_boundary_grad: Vec<Vec<Vec<(usize, f64)>>>,
}

/// Index of the `(i, j)` component in the packed symmetric layout
/// (1D: `[xx]`; 2D: `[xx, xy, yy]`).
pub fn sym_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    match dim {
        1 => 0,
        _ => i + j,
    }
}

/// Packed layout of a symmetric rank-3 tensor in 2D: `[xxx, xxy, xyy, yyy]`.
pub fn sym3_index(dim: usize, i: usize, j: usize, k: usize) -> usize {
    if dim == 1 {
        0
    } else {
        i + j + k
    }
}

fn sparse_axpy(acc: &mut Vec<(usize, f64)>, alpha: f64, row: &[(usize, f64)]) {
    if alpha == 0.0 {
        return;
    }
    acc.extend(row.iter().map(|(c, v)| (*c, alpha * v)));
}

impl Grid {
    /// Uniform grid of `n` nodes on `[a, b]` with stencils of order `order`.
    pub fn line(a: f64, b: f64, n: usize, order: usize) -> Result<Arc<Self>> {
        if order != 2 && order != 4 {
            return Err(Error::InvalidInput(format!("stencil order must be 2 or 4, got {order}")));
        }
        if n < 4 || n < order + 4 {
            return Err(Error::GridTooCoarse(format!("{n} nodes cannot carry order-{order} stencils")));
        }
        if !(b > a) {
            return Err(Error::InvalidInput("line grid needs a < b".into()));
        }
        let dx = (b - a) / (n - 1) as f64;
        let points = (0..n).map(|i| vec![if i == n - 1 { b } else { a + i as f64 * dx }]).collect();
        let line_ops: Vec<CsrMatrix> = (1..=4)
            .map(|d| {
                let rows = (0..n)
                    .map(|i| {
                        let (start, w) = uniform_weights(i, n, dx, d, order);
                        w.into_iter().enumerate().map(|(k, v)| (start + k, v)).collect()
                    })
                    .collect();
                CsrMatrix::from_rows(n, rows)
            })
            .collect();
        let alt = |left: bool| -> Vec<(usize, f64)> {
            let len = (order + 3).min(n);
            let (i0, nodes): (usize, Vec<f64>) = if left {
                (0, (0..len).map(|k| k as f64).collect())
            } else {
                (n - len, (0..len).map(|k| k as f64 - (len - 1) as f64).collect())
            };
            let w = fornberg(0.0, &nodes, 1);
            w[1].iter().enumerate().map(|(k, v)| (i0 + k, v / dx)).collect()
        };
        let alt_boundary_grad = vec![vec![alt(true)], vec![alt(false)]];
        let mut weights = vec![dx; n];
        weights[0] = 0.5 * dx;
        weights[n - 1] = 0.5 * dx;
        Ok(Arc::new(Grid {
            kind: GridKind::Line { a, b, n },
            dim: 1,
            order,
            points,
            boundary: vec![0, n - 1],
            normals: vec![vec![-1.0], vec![1.0]],
            weights,
            grad: vec![line_ops[0].clone()],
            hess: vec![line_ops[1].clone()],
            line_ops,
            normal_spacing: dx,
            alt_boundary_grad,
        }))
    }

    /// Mapped polar grid with `nr` rings and `ntheta` (even) angular nodes.
    /// Stencils in ρ and θ use order ≥ 4 so the 1/ρ factors near the pole
    /// keep the nominal Cartesian order.
    pub fn polar(map: Arc<dyn PolarMap>, nr: usize, ntheta: usize, order: usize) -> Result<Arc<Self>> {
        if order != 2 && order != 4 {
            return Err(Error::InvalidInput(format!("stencil order must be 2 or 4, got {order}")));
        }
        if nr < 10 || ntheta < 8 || !ntheta.is_multiple_of(2) {
            return Err(Error::GridTooCoarse(format!(
                "polar grid needs nr >= 10 and an even ntheta >= 8, got nr={nr}, ntheta={ntheta}"
            )));
        }
        let p = order.max(4);
        let drho = 1.0 / (nr as f64 - 0.5);
        let dth = 2.0 * std::f64::consts::PI / ntheta as f64;
        let npts = nr * ntheta;
        let node = |i: usize, j: usize| i * ntheta + j;
        let rho = |i: usize| if i == nr - 1 { 1.0 } else { (i as f64 + 0.5) * drho };
        let theta = |j: usize| j as f64 * dth;

        // ρ-derivative rows on the doubled line ρ ∈ (−1, 1), position q ↔ ρ = (q − nr + ½)Δρ.
        let rho_rows = |deriv: usize| -> Vec<Vec<(usize, f64)>> {
            let nline = 2 * nr;
            let mut rows = vec![Vec::new(); npts];
            for i in 0..nr {
                let q = nr + i;
                let (start, len) = window(q, nline, deriv, p);
                let z = |pos: usize| -> f64 {
                    if pos >= nr {
                        rho(pos - nr)
                    } else {
                        -rho(nr - 1 - pos)
                    }
                };
                let nodes: Vec<f64> = (start..start + len).map(z).collect();
                let w = fornberg(rho(i), &nodes, deriv);
                for j in 0..ntheta {
                    let row = &mut rows[node(i, j)];
                    for (k, pos) in (start..start + len).enumerate() {
                        let col = if pos >= nr {
                            node(pos - nr, j)
                        } else {
                            node(nr - 1 - pos, (j + ntheta / 2) % ntheta)
                        };
                        row.push((col, w[deriv][k]));
                    }
                }
            }
            rows
        };
        let theta_rows = |deriv: usize| -> Vec<Vec<(usize, f64)>> {
            let s = crate::numeric::stencil::centered_half_width(deriv, p) as isize;
            let offs: Vec<f64> = (-s..=s).map(|k| k as f64 * dth).collect();
            let w = fornberg(0.0, &offs, deriv);
            let mut rows = vec![Vec::new(); npts];
            for i in 0..nr {
                for j in 0..ntheta {
                    for (k, off) in (-s..=s).enumerate() {
                        let jj = (j as isize + off).rem_euclid(ntheta as isize) as usize;
                        rows[node(i, j)].push((node(i, jj), w[deriv][k]));
                    }
                }
            }
            rows
        };
        let d_r = CsrMatrix::from_rows(npts, rho_rows(1));
        let d_rr = CsrMatrix::from_rows(npts, rho_rows(2));
        let d_t = CsrMatrix::from_rows(npts, theta_rows(1));
        let d_tt = CsrMatrix::from_rows(npts, theta_rows(2));
        let d_rt = d_r.compose(&d_t);
        let alt_rho_rows: Vec<Vec<(usize, f64)>> = {
            let i = nr - 1;
            let q = nr + i;
            let (start, len) = window(q, 2 * nr, 1, p + 2);
            let z = |pos: usize| if pos >= nr { rho(pos - nr) } else { -rho(nr - 1 - pos) };
            let nodes: Vec<f64> = (start..start + len).map(z).collect();
            let w = fornberg(rho(i), &nodes, 1);
            (0..ntheta)
                .map(|j| {
                    (start..start + len)
                        .enumerate()
                        .map(|(k, pos)| {
                            let col = if pos >= nr { node(pos - nr, j) } else { node(nr - 1 - pos, (j + ntheta / 2) % ntheta) };
                            (col, w[1][k])
                        })
                        .collect()
                })
                .collect()
        };
        let mut alt_boundary_grad = Vec::new();

        let mut points = Vec::with_capacity(npts);
        let mut weights = Vec::with_capacity(npts);
        let mut gx_rows = Vec::with_capacity(npts);
        let mut gy_rows = Vec::with_capacity(npts);
        let mut hrows: [Vec<Vec<(usize, f64)>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let mut normals = Vec::new();
        let mut boundary = Vec::new();
        for i in 0..nr {
            let wr = if i == nr - 1 {
                0.375 * drho
            } else if i == nr - 2 {
                1.125 * drho
            } else {
                drho
            };
            for j in 0..ntheta {
                let idx = node(i, j);
                let jet = map.eval(rho(i), theta(j));
                let jm = jet.d;
                let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
                if det <= 1e-14 {
                    return Err(Error::SingularJacobian { point: jet.x.to_vec() });
                }
                // inv[q][k] = ∂q/∂x_k
                let inv = [[jm[1][1] / det, -jm[0][1] / det], [-jm[1][0] / det, jm[0][0] / det]];
                points.push(jet.x.to_vec());
                weights.push(wr * dth * det.abs());
                let rows_q = [d_r.row_vec(idx), d_t.row_vec(idx)];
                let mut g: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
                for k in 0..2 {
                    for q in 0..2 {
                        sparse_axpy(&mut g[k], inv[q][k], &rows_q[q]);
                    }
                }
                let rows_qq = [[d_rr.row_vec(idx), d_rt.row_vec(idx)], [d_rt.row_vec(idx), d_tt.row_vec(idx)]];
                // Q_qr − Σ_m x_m,qr g_m
                let mut corrected: [[Vec<(usize, f64)>; 2]; 2] = Default::default();
                for q in 0..2 {
                    for r in 0..2 {
                        let mut acc = rows_qq[q][r].clone();
                        for m in 0..2 {
                            sparse_axpy(&mut acc, -jet.dd[m][q][r], &g[m]);
                        }
                        corrected[q][r] = acc;
                    }
                }
                for (c, (k, l)) in [(0usize, 0usize), (0, 1), (1, 1)].into_iter().enumerate() {
                    let mut acc = Vec::new();
                    for q in 0..2 {
                        for r in 0..2 {
                            sparse_axpy(&mut acc, inv[q][k] * inv[r][l], &corrected[q][r]);
                        }
                    }
                    hrows[c].push(acc);
                }
                let [gx, gy] = g;
                gx_rows.push(gx);
                gy_rows.push(gy);
                if i == nr - 1 {
                    let mut alt: Vec<Vec<(usize, f64)>> = vec![Vec::new(), Vec::new()];
                    for (k, row) in alt.iter_mut().enumerate() {
                        sparse_axpy(row, inv[0][k], &alt_rho_rows[j]);
                        sparse_axpy(row, inv[1][k], &rows_q[1]);
                    }
                    alt_boundary_grad.push(alt);
                    boundary.push(idx);
                    let n = [inv[0][0], inv[0][1]];
                    let l = (n[0] * n[0] + n[1] * n[1]).sqrt();
                    normals.push(vec![n[0] / l, n[1] / l]);
                }
            }
        }
        let [h0, h1, h2] = hrows;
        let outer = map.eval(1.0, 0.0);
        let normal_spacing = drho * (outer.d[0][0].powi(2) + outer.d[1][0].powi(2)).sqrt();
        Ok(Arc::new(Grid {
            kind: GridKind::Polar { nr, ntheta, map },
            dim: 2,
            order,
            points,
            boundary,
            normals,
            weights,
            grad: vec![CsrMatrix::from_rows(npts, gx_rows), CsrMatrix::from_rows(npts, gy_rows)],
            hess: vec![
                CsrMatrix::from_rows(npts, h0),
                CsrMatrix::from_rows(npts, h1),
                CsrMatrix::from_rows(npts, h2),
            ],
            line_ops: Vec::new(),
            normal_spacing,
            alt_boundary_grad,
        }))
    }

    /// Grid fitted to `domain`: `resolution` nodes in 1D, or `resolution`
    /// rings (with `2·resolution` rounded to even angular nodes... exactly
    /// `4·resolution/2·2`) in 2D.
    pub fn for_domain(domain: &Domain, resolution: usize, order: usize) -> Result<Arc<Self>> {
        match domain.kind() {
            DomainKind::Interval { a, b } => Self::line(*a, *b, resolution, order),
            DomainKind::Disk { center, radius } => Self::polar(
                Arc::new(DiskMap { center: *center, radius: *radius }),
                resolution,
                Self::default_ntheta(resolution),
                order,
            ),
            DomainKind::StarShaped(curve) => Self::polar(
                Arc::new(StarMap { curve: (**curve).clone() }),
                resolution,
                Self::default_ntheta(resolution),
                order,
            ),
            DomainKind::Radial { dim: 1, radius } => Self::line(-radius, *radius, resolution, order),
            DomainKind::Radial { dim: 2, radius } => Self::polar(
                Arc::new(DiskMap { center: [0.0, 0.0], radius: *radius }),
                resolution,
                Self::default_ntheta(resolution),
                order,
            ),
            DomainKind::Radial { dim, .. } => {
                Err(Error::InvalidInput(format!("no grid for {dim}-dimensional radial domains")))
            }
        }
    }

    /// Angular resolution matching `nr` rings (roughly square cells at the rim).
    pub fn default_ntheta(nr: usize) -> usize {
        let n = (2.0 * std::f64::consts::PI * nr as f64).ceil() as usize;
        (n + n % 2).max(8)
    }

    pub fn kind(&self) -> &GridKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary.contains(&i)
    }

    /// Outward unit normals, aligned with [`Grid::boundary`].
    pub fn boundary_normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    /// Quadrature weights (trapezoid in 1D; midpoint-in-ρ on polar grids).
    pub fn quadrature_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normal_spacing(&self) -> f64 {
        self.normal_spacing
    }

    /// Uniform spacing of a line grid.
    pub fn dx(&self) -> Option<f64> {
        match self.kind {
            GridKind::Line { a, b, n } => Some((b - a) / (n - 1) as f64),
            GridKind::Polar { .. } => None,
        }
    }

    /// First-derivative operator along axis `k`.
    pub fn d(&self, k: usize) -> &CsrMatrix {
        &self.grad[k]
    }

    /// Second-derivative operator for the `(i, j)` component.
    pub fn dd(&self, i: usize, j: usize) -> &CsrMatrix {
        &self.hess[sym_index(self.dim, i, j)]
    }

    /// `k`-th derivative on a line grid, `1 <= k <= 4`.
    pub fn line_derivative(&self, k: usize) -> Result<&CsrMatrix> {
        if self.dim != 1 || k == 0 || k > 4 {
            return Err(Error::InvalidInput(format!("no line derivative of order {k} on this grid")));
        }
        Ok(&self.line_ops[k - 1])
    }

    /// Weights of a stencil of `len` nodes at the left (`left = true`) or
    /// right end of a line grid for the `deriv`-th derivative at the end node.
    pub fn line_boundary_stencil(&self, left: bool, deriv: usize, len: usize) -> Result<Vec<(usize, f64)>> {
        let (n, dx) = match self.kind {
            GridKind::Line { a, b, n } => (n, (b - a) / (n - 1) as f64),
            _ => return Err(Error::InvalidInput("boundary stencils exist only on line grids".into())),
        };
        if len > n {
            return Err(Error::GridTooCoarse(format!("{n} nodes, stencil needs {len}")));
        }
        let (i0, nodes): (usize, Vec<f64>) =
            if left { (0, (0..len).map(|k| k as f64).collect()) } else { (n - len, (0..len).map(|k| k as f64 - (len - 1) as f64).collect()) };
        let w = fornberg(0.0, &nodes, deriv);
        let scale = dx.powi(deriv as i32);
        Ok(w[deriv].iter().enumerate().map(|(k, v)| (i0 + k, v / scale)).collect())
    }

    /// Gradient at the `b`-th boundary node computed with stencils two
    /// orders higher than the grid's own.
    pub fn boundary_gradient_alt(&self, b: usize, values: &[f64]) -> Vec<f64> {
        self.alt_boundary_grad[b].iter().map(|row| row.iter().map(|(c, w)| w * values[*c]).sum()).collect()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        match &self.kind {
            GridKind::Line { a, b, n } => GridDescriptor::Line { a: *a, b: *b, n: *n, order: self.order },
            GridKind::Polar { nr, ntheta, map } => {
                GridDescriptor::Polar { nr: *nr, ntheta: *ntheta, order: self.order, map: map.describe() }
            }
        }
    }

    /// Quadrature of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

/// Scalar field sampled at grid nodes.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub time: Option<f64>,
}

/// Vector field, one value array per Cartesian component.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    pub comps: Vec<Vec<f64>>,
}

/// Symmetric matrix field in packed layout (see [`sym_index`]).
#[derive(Debug, Clone)]
pub struct SymMatrixField {
    grid: Arc<Grid>,
    pub comps: Vec<Vec<f64>>,
}

/// JSON header accompanying a field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub name: String,
    pub grid: GridDescriptor,
    pub time: Option<f64>,
    pub nodes: usize,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field contains non-finite values".into()));
        }
        Ok(Self { grid, values, time: None })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n], time: None }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.points().iter().map(|p| f(p)).collect();
        Self { grid, values, time: None }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        crate::numeric::max_abs(&self.values)
    }

    /// `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &ScalarField, beta: f64) -> ScalarField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| alpha * a + beta * b).collect();
        ScalarField { grid: self.grid.clone(), values, time: self.time }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|v| f(*v)).collect(), time: self.time }
    }

    fn finite(values: Vec<f64>) -> Result<Vec<f64>> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("derivative produced non-finite values".into()));
        }
        Ok(values)
    }

    pub fn gradient(&self) -> Result<VectorField> {
        let comps = (0..self.grid.dim)
            .map(|k| Self::finite(self.grid.d(k).apply(&self.values)))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField { grid: self.grid.clone(), comps })
    }

    pub fn hessian(&self) -> Result<SymMatrixField> {
        let comps =
            self.grid.hess.iter().map(|op| Self::finite(op.apply(&self.values))).collect::<Result<Vec<_>>>()?;
        Ok(SymMatrixField { grid: self.grid.clone(), comps })
    }

    /// Third derivatives in packed layout (see [`sym3_index`]). In 1D a
    /// direct stencil is used; in 2D gradients of the Hessian components,
    /// averaged over equivalent index orderings.
    pub fn third(&self) -> Result<Vec<Vec<f64>>> {
        if self.grid.dim == 1 {
            return Ok(vec![Self::finite(self.grid.line_ops[2].apply(&self.values))?]);
        }
        let h = self.hessian()?;
        let d = |k: usize, c: usize| self.grid.d(k).apply(&h.comps[c]);
        let (hxx, hxy, hyy) = (0, 1, 2);
        let xxx = d(0, hxx);
        let xxy: Vec<f64> = d(1, hxx).iter().zip(d(0, hxy)).map(|(a, b)| (a + 2.0 * b) / 3.0).collect();
        let xyy: Vec<f64> = d(0, hyy).iter().zip(d(1, hxy)).map(|(a, b)| (a + 2.0 * b) / 3.0).collect();
        let yyy = d(1, hyy);
        [xxx, xxy, xyy, yyy].into_iter().map(Self::finite).collect()
    }

    pub fn laplacian(&self) -> Result<ScalarField> {
        let h = self.hessian()?;
        let values = (0..self.len()).map(|i| h.trace(i)).collect();
        Ok(ScalarField { grid: self.grid.clone(), values, time: self.time })
    }

    /// k-th normal derivative `D_Y^k f` in the collar patch of `chart`;
    /// zero outside the patch.
    pub fn directional_derivative_in_y(&self, chart: &Chart, k: usize) -> Result<ScalarField> {
        if k > 4 {
            return Err(Error::InvalidInput(format!("normal derivative order {k} exceeds 4")));
        }
        let needed = 2 * k + 2;
        let have = (chart.collar_width() / self.grid.normal_spacing).floor() as usize;
        if have < needed {
            return Err(Error::CollarUnderResolved(format!(
                "collar spans {have} nodes along the normal, D_Y^{k} needs {needed}"
            )));
        }
        let values = if k == 0 {
            self.values.clone()
        } else if self.grid.dim == 1 {
            let sign = chart.normal_direction(&[0.0])[0];
            let raw = self.grid.line_ops[k - 1].apply(&self.values);
            raw.into_iter().map(|v| v * sign.powi(k as i32)).collect()
        } else {
            let normals: Vec<Vec<f64>> = self.grid.points().iter().map(|p| chart.normal_direction(p)).collect();
            let mut cur = self.values.clone();
            for _ in 0..k {
                let gx = self.grid.d(0).apply(&cur);
                let gy = self.grid.d(1).apply(&cur);
                cur = (0..cur.len()).map(|i| normals[i][0] * gx[i] + normals[i][1] * gy[i]).collect();
            }
            cur
        };
        let values = values
            .into_iter()
            .zip(self.grid.points())
            .map(|(v, p)| if chart.contains(p) { v } else { 0.0 })
            .collect();
        Ok(ScalarField { grid: self.grid.clone(), values: Self::finite(values)?, time: self.time })
    }

    /// CSV rows `idx,x[,y],value`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let coords = if self.grid.dim == 1 { "x" } else { "x,y" };
        writeln!(out, "idx,{coords},value")?;
        for (i, (p, v)) in self.grid.points().iter().zip(&self.values).enumerate() {
            let c: Vec<String> = p.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(out, "{i},{},{v:.17e}", c.join(","))?;
        }
        Ok(())
    }

    pub fn header(&self, name: &str) -> FieldHeader {
        FieldHeader { name: name.to_string(), grid: self.grid.descriptor(), time: self.time, nodes: self.len() }
    }

    /// Reads values written by [`ScalarField::write_csv`] onto `grid`.
    pub fn read_csv(grid: Arc<Grid>, text: &str) -> Result<Self> {
        let mut values = vec![f64::NAN; grid.len()];
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            let idx: usize = cols[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("line {}: bad node index", lineno + 1)))?;
            let v: f64 = cols
                .last()
                .unwrap()
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("line {}: bad value", lineno + 1)))?;
            if idx >= values.len() {
                return Err(Error::InvalidInput(format!("line {}: node {idx} out of range", lineno + 1)));
            }
            values[idx] = v;
        }
        ScalarField::new(grid, values)
    }
}

impl VectorField {
    /// Any number of components, each with one value per node.
    pub fn new(grid: Arc<Grid>, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidInput("vector component length does not match the grid".into()));
        }
        Ok(Self { grid, comps })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn at(&self, i: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[i]).collect()
    }

    pub fn norm_at(&self, i: usize) -> f64 {
        self.comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()
    }
}

impl SymMatrixField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn get(&self, node: usize, i: usize, j: usize) -> f64 {
        self.comps[sym_index(self.grid.dim, i, j)][node]
    }

    pub fn trace(&self, node: usize) -> f64 {
        (0..self.grid.dim).map(|k| self.get(node, k, k)).sum()
    }

    pub fn at(&self, node: usize) -> Vec<Vec<f64>> {
        let n = self.grid.dim;
        (0..n).map(|i| (0..n).map(|j| self.get(node, i, j)).collect()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;

    fn line_error(n: usize, order: usize) -> f64 {
        let g = Grid::line(0.0, 1.0, n, order).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0].sin());
        let d = f.gradient().unwrap();
        (0..g.len()).map(|i| (d.comps[0][i] - g.point(i)[0].cos()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn quadratic_is_exact_at_midpoint() {
        let g = Grid::line(0.0, 1.0, 101, 2).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0] * p[0]);
        let d = f.gradient().unwrap();
        assert!((d.comps[0][50] - 1.0).abs() < 1e-12);
        let c = ScalarField::from_fn(g, |_| 3.0);
        assert!(crate::numeric::max_abs(&c.gradient().unwrap().comps[0]) < 1e-10);
    }

    #[test]
    fn gradient_convergence_orders() {
        for order in [2, 4] {
            let r = (line_error(41, order) / line_error(81, order)).log2();
            assert!(r >= order as f64 - 0.1, "order {order}: measured {r}");
        }
    }

    #[test]
    fn line_third_and_fourth_derivatives() {
        let g = Grid::line(0.0, 1.0, 81, 4).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0].exp());
        for k in 1..=4 {
            let d = g.line_derivative(k).unwrap().apply(&f.values);
            let err = (0..g.len()).map(|i| (d[i] - g.point(i)[0].exp()).abs()).fold(0.0, f64::max);
            assert!(err < 1e-3, "k={k} err={err}");
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert!(matches!(Grid::line(0.0, 1.0, 3, 2), Err(Error::GridTooCoarse(_))));
        let d = Arc::new(DiskMap { center: [0.0, 0.0], radius: 1.0 });
        assert!(matches!(Grid::polar(d, 5, 16, 2), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn disk_boundary_nodes_lie_on_circle() {
        let dom = Domain::disk([0.5, -0.5], 2.0).unwrap();
        let g = Grid::for_domain(&dom, 16, 2).unwrap();
        for (&b, n) in g.boundary().iter().zip(g.boundary_normals()) {
            assert!(dom.signed_distance(g.point(b)).abs() < 1e-14);
            let exact = dom.outward_normal(g.point(b)).unwrap();
            assert!((n[0] - exact[0]).abs() < 1e-12 && (n[1] - exact[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_hessian_of_quadratic_is_exact() {
        let dom = Domain::disk([0.0, 0.0], 2.0).unwrap();
        let g = Grid::for_domain(&dom, 16, 2).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0] * p[0] + p[1] * p[1]);
        let h = f.hessian().unwrap();
        for i in 0..g.len() {
            assert!((h.get(i, 0, 0) - 2.0).abs() < 1e-9);
            assert!(h.get(i, 0, 1).abs() < 1e-9);
            assert!((h.get(i, 1, 1) - 2.0).abs() < 1e-9);
        }
    }

    fn disk_hessian_error(nr: usize) -> f64 {
        let dom = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let g = Grid::for_domain(&dom, nr, 2).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0].exp() * p[1].cos());
        let h = f.hessian().unwrap();
        let mut err: f64 = 0.0;
        for i in 0..g.len() {
            let (x, y) = (g.point(i)[0], g.point(i)[1]);
            let ex = [x.exp() * y.cos(), -x.exp() * y.sin(), -x.exp() * y.cos()];
            for c in 0..3 {
                err = err.max((h.comps[c][i] - ex[c]).abs());
            }
        }
        err
    }

    #[test]
    fn disk_hessian_converges() {
        let r = (disk_hessian_error(16) / disk_hessian_error(32)).log2();
        assert!(r >= 1.9, "measured order {r}");
    }

    #[test]
    fn disk_quadrature_area() {
        let dom = Domain::disk([0.0, 0.0], 2.0).unwrap();
        let g = Grid::for_domain(&dom, 40, 2).unwrap();
        let area = g.integrate(&vec![1.0; g.len()]);
        assert!((area - dom.measure()).abs() / dom.measure() < 2e-3, "{area}");
    }

    fn star_hessian_error(nr: usize) -> f64 {
        let curve = StarCurve::ellipse([0.0, 0.0], 1.5, 1.0, 64).unwrap();
        let dom = Domain::star_shaped(curve).unwrap();
        let g = Grid::for_domain(&dom, nr, 2).unwrap();
        for &b in g.boundary() {
            assert!(dom.signed_distance(g.point(b)).abs() < 1e-8);
        }
        let f = ScalarField::from_fn(g.clone(), |p| p[0] * p[1] + p[1] * p[1]);
        let h = f.hessian().unwrap();
        (0..g.len())
            .map(|i| (h.get(i, 0, 1) - 1.0).abs().max((h.get(i, 1, 1) - 2.0).abs()).max(h.get(i, 0, 0).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn star_grid_hessian_converges() {
        let r = (star_hessian_error(24) / star_hessian_error(48)).log2();
        assert!(r >= 1.9, "measured order {r}");
    }

    #[test]
    fn normal_derivative_of_distance() {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let g = Grid::for_domain(&dom, 201, 2).unwrap();
        let (charts, _) = dom.build_charts(2).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| -dom.signed_distance(p));
        for ch in &charts {
            let d = f.directional_derivative_in_y(ch, 1).unwrap();
            for i in 0..g.len() {
                if ch.contains(g.point(i)) {
                    assert!((d.values[i] + 1.0).abs() < 1e-9);
                }
            }
            let y2 = ScalarField::from_fn(g.clone(), |p| ch.to_chart(p).1.powi(2));
            let d2 = y2.directional_derivative_in_y(ch, 2).unwrap();
            for i in 0..g.len() {
                if ch.contains(g.point(i)) {
                    assert!((d2.values[i] - 2.0).abs() < 1e-8);
                }
            }
        }
        let coarse = Grid::line(0.0, 1.0, 11, 2).unwrap();
        let f = ScalarField::zeros(coarse);
        assert!(matches!(f.directional_derivative_in_y(&charts[0], 2), Err(Error::CollarUnderResolved(_))));
    }

    #[test]
    fn disk_normal_second_derivative() {
        let dom = Domain::disk([0.0, 0.0], 2.0).unwrap();
        let g = Grid::for_domain(&dom, 40, 2).unwrap();
        let (charts, _) = dom.build_charts(4).unwrap();
        let ch = &charts[0];
        let f = ScalarField::from_fn(g.clone(), |p| ch.to_chart(p).1.powi(2));
        let d = f.directional_derivative_in_y(ch, 2).unwrap();
        for i in 0..g.len() {
            if ch.contains(g.point(i)) {
                assert!((d.values[i] - 2.0).abs() < 1e-3, "{}", d.values[i]);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::line(0.0, 1.0, 11, 2).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0].sin()).with_time(0.5);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(g, std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.values, f.values);
        let h = serde_json::to_string(&f.header("w")).unwrap();
        assert!(h.contains("\"time\":0.5"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn gradient_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, k in 0.5f64..4.0) {
                let g = Grid::line(0.0, 1.0, 41, 4).unwrap();
                let f = ScalarField::from_fn(g.clone(), |p| (k * p[0]).sin());
                let h = ScalarField::from_fn(g.clone(), |p| p[0].powi(3));
                let lhs = f.combine(alpha, &h, beta).gradient().unwrap();
                let gf = f.gradient().unwrap();
                let gh = h.gradient().unwrap();
                for i in 0..g.len() {
                    let rhs = alpha * gf.comps[0][i] + beta * gh.comps[0][i];
                    prop_assert!((lhs.comps[0][i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * 100.0);
                }
            }

            #[test]
            fn hessian_is_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let dom = Domain::disk([0.0, 0.0], 1.0).unwrap();
                let g = Grid::for_domain(&dom, 10, 2).unwrap();
                let f = ScalarField::from_fn(g.clone(), |p| (a * p[0] + b * p[1]).sin());
                let h = f.hessian().unwrap();
                for i in 0..g.len() {
                    prop_assert_eq!(h.get(i, 0, 1), h.get(i, 1, 0));
                }
            }
        }
    }
}

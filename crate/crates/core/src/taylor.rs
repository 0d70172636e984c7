//! Formal solution of `h_t = F(h, x)` at `t = 0`: the coefficients
//! `a_j = D_t^j h(·, 0)` by Taylor-mode arithmetic through the height
//! operator, the truncated and cut-off series `h̃`, its residual
//! `Φ(h̃) = h̃_t − F(h̃)`, and the time-shifted residual `ρ_ε`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::numeric::max_abs;
use crate::numeric::scalar::Jet;
use crate::numeric::stencil::fornberg;
use crate::transform::{evaluate_f, pointwise_rhs, HState, HeightDerivatives, PmeProblem};

/// Highest supported truncation order.
pub const MAX_ORDER: usize = 7;

type TJet = Jet<{ MAX_ORDER + 1 }>;

/// `a_0, …, a_K` with `a_j = D_t^j h(·, 0)`.
#[derive(Debug, Clone)]
pub struct FormalSolution {
    pub coefficients: Vec<ScalarField>,
}

impl FormalSolution {
    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// `Σ_j a_j t^j / j!` without cutoff.
    pub fn series(&self, t: f64) -> Vec<f64> {
        let n = self.coefficients[0].len();
        let mut out = vec![0.0; n];
        let mut w = 1.0;
        for (j, a) in self.coefficients.iter().enumerate() {
            if j > 0 {
                w *= t / j as f64;
            }
            for (o, v) in out.iter_mut().zip(&a.values) {
                *o += w * v;
            }
        }
        out
    }

    fn series_derivative(&self, t: f64) -> Vec<f64> {
        let n = self.coefficients[0].len();
        let mut out = vec![0.0; n];
        let mut w = 1.0;
        for j in 1..self.coefficients.len() {
            if j > 1 {
                w *= t / (j - 1) as f64;
            }
            for (o, v) in out.iter_mut().zip(&self.coefficients[j].values) {
                *o += w * v;
            }
        }
        out
    }
}

/// Recursion `c_{j+1} = [F(Σ_{i≤j} c_i t^i)]_j / (j + 1)` on Taylor
/// coefficients `c_j = a_j / j!`; spatial derivatives of each `c_i` use the
/// grid's difference operators.
pub fn formal_coefficients(problem: &PmeProblem, order: usize) -> Result<FormalSolution> {
    if order > MAX_ORDER {
        return Err(Error::InvalidInput(format!("truncation order {order} exceeds {MAX_ORDER}")));
    }
    let grid = problem.grid().clone();
    let dim = problem.dim();
    let n = grid.len();
    let mut taylor: Vec<HeightDerivatives> = vec![HeightDerivatives::of(&ScalarField::zeros(grid.clone()))?];
    let mut values: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for j in 0..order {
        let mut next = vec![0.0; n];
        for (node, out) in next.iter_mut().enumerate() {
            let coef = |f: &dyn Fn(&HeightDerivatives) -> f64| -> TJet {
                TJet::from_coeffs(&taylor.iter().map(f).collect::<Vec<f64>>())
            };
            let h = coef(&|d| d.h[node]);
            let dh = [coef(&|d| d.dh[node][0]), coef(&|d| d.dh[node][1])];
            let ddh = [
                [coef(&|d| d.ddh[node][0][0]), coef(&|d| d.ddh[node][0][1])],
                [coef(&|d| d.ddh[node][1][0]), coef(&|d| d.ddh[node][1][1])],
            ];
            let r = pointwise_rhs(problem.m(), dim, problem.jet(node), h, dh, ddh).map_err(|e| e.at(node))?;
            *out = r.c[j] / (j + 1) as f64;
        }
        let field = ScalarField::new(grid.clone(), next.clone())?;
        taylor.push(HeightDerivatives::of(&field)?);
        values.push(next);
    }
    let mut fact = 1.0;
    let coefficients = values
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            if j > 0 {
                fact *= j as f64;
            }
            Ok(ScalarField::new(grid.clone(), c.into_iter().map(|v| v * fact).collect())?.with_time(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FormalSolution { coefficients })
}

fn step_weight(u: f64) -> (f64, f64) {
    // s(u) = f(u) / (f(u) + f(1 − u)), f(u) = e^{−1/u}
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0);
    }
    let (a, b) = ((-1.0 / u).exp(), (-1.0 / (1.0 - u)).exp());
    let (da, db) = (a / (u * u), -b / ((1.0 - u) * (1.0 - u)));
    let s = a + b;
    (a / s, (da * s - a * (da + db)) / (s * s))
}

/// Truncated series times a cutoff equal to 1 on `[0, T/2]` and 0 from `T`.
#[derive(Debug, Clone)]
pub struct HTilde {
    pub formal: FormalSolution,
    pub t_end: f64,
}

impl HTilde {
    /// Cutoff value and derivative.
    pub fn cutoff(&self, t: f64) -> (f64, f64) {
        let half = 0.5 * self.t_end;
        let (s, ds) = step_weight((t - half) / half);
        (1.0 - s, -ds / half)
    }

    pub fn value(&self, t: f64) -> Result<ScalarField> {
        let (chi, _) = self.cutoff(t);
        let grid = self.formal.coefficients[0].grid().clone();
        Ok(ScalarField::new(grid, self.formal.series(t).into_iter().map(|v| v * chi).collect())?.with_time(t))
    }

    pub fn time_derivative(&self, t: f64) -> Result<ScalarField> {
        let (chi, dchi) = self.cutoff(t);
        let s = self.formal.series(t);
        let ds = self.formal.series_derivative(t);
        let grid = self.formal.coefficients[0].grid().clone();
        Ok(ScalarField::new(grid, s.iter().zip(&ds).map(|(v, dv)| dv * chi + v * dchi).collect())?.with_time(t))
    }

    /// `Σ_j max|a_j| T^j / j!`, an upper bound for `max|h̃|`.
    pub fn bound(&self) -> f64 {
        let mut w = 1.0;
        let mut total = 0.0;
        for (j, a) in self.formal.coefficients.iter().enumerate() {
            if j > 0 {
                w *= self.t_end / j as f64;
            }
            total += w * a.max_abs();
        }
        total
    }
}

/// Cuts off the series at `T`; refuses if `h̃` leaves the tube on `[0, T]`.
pub fn build_htilde(problem: &PmeProblem, formal: &FormalSolution, t_end: f64) -> Result<HTilde> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("cutoff time must be positive, got {t_end}")));
    }
    let ht = HTilde { formal: formal.clone(), t_end };
    let mut worst: f64 = 0.0;
    for q in 0..=200 {
        worst = worst.max(ht.value(t_end * q as f64 / 200.0)?.max_abs());
    }
    if worst >= problem.tube() {
        return Err(Error::TubeExceeded { max_abs: worst, tube: problem.tube() });
    }
    Ok(ht)
}

/// `Φ(h̃)(·, t) = h̃_t − F(h̃, ·)`.
pub fn residual(problem: &PmeProblem, ht: &HTilde, t: f64) -> Result<ScalarField> {
    let h = ht.value(t)?;
    let state = HState { h, t, tube: problem.tube() };
    let f = evaluate_f(problem, &state)?;
    Ok(ht.time_derivative(t)?.combine(1.0, &f, -1.0))
}

/// Estimated `max_x |D_t^j Φ(h̃)(x, 0)|` with the tolerance they are judged
/// against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualJet {
    pub norms: Vec<f64>,
    pub scale: f64,
    pub tolerance: f64,
}

impl ResidualJet {
    pub fn vanishes(&self, j: usize) -> bool {
        self.norms[j] <= self.tolerance
    }
}

/// Differentiates `Φ(h̃)` at `t = 0` from samples at `0, δ, …, Mδ` with
/// `M = j_max + 4`. The scale is `max|a_1|`.
pub fn residual_jet(problem: &PmeProblem, ht: &HTilde, j_max: usize, dt_probe: f64) -> Result<ResidualJet> {
    if !(dt_probe > 0.0) {
        return Err(Error::InvalidInput("probe step must be positive".into()));
    }
    let m = j_max + 4;
    let nodes: Vec<f64> = (0..=m).map(|q| q as f64 * dt_probe).collect();
    let w = fornberg(0.0, &nodes, j_max);
    let samples: Vec<ScalarField> = nodes.iter().map(|t| residual(problem, ht, *t)).collect::<Result<_>>()?;
    let n = samples[0].len();
    let norms = (0..=j_max)
        .map(|j| {
            (0..n).map(|x| samples.iter().zip(&w[j]).map(|(s, c)| c * s.values[x]).sum::<f64>().abs()).fold(0.0, f64::max)
        })
        .collect();
    let scale = ht.formal.coefficients.get(1).map(|a| a.max_abs()).filter(|s| *s > 0.0).unwrap_or(1.0);
    Ok(ResidualJet { norms, scale, tolerance: 1e-6 * scale })
}

/// `ρ_ε(t) = 0` for `t < ε` and `Φ(h̃)(t − ε)` afterwards.
#[derive(Debug, Clone)]
pub struct ShiftedResidual {
    problem: PmeProblem,
    ht: HTilde,
    pub shift: f64,
    /// `max|ρ_ε(ε⁺) − ρ_ε(ε⁻)|`.
    pub jump: f64,
    /// Same for the first time derivative.
    pub derivative_jump: f64,
}

impl ShiftedResidual {
    pub fn value(&self, t: f64) -> Result<Vec<f64>> {
        if t < self.shift {
            return Ok(vec![0.0; self.problem.grid().len()]);
        }
        Ok(residual(&self.problem, &self.ht, t - self.shift)?.values)
    }
}

/// Builds `ρ_ε` and checks continuity of it and its first time derivative
/// at `t = ε` against `tol`.
pub fn time_shift_rho(problem: &PmeProblem, ht: &HTilde, shift: f64, tol: f64) -> Result<ShiftedResidual> {
    if !(shift > 0.0 && shift < 0.25 * ht.t_end) {
        return Err(Error::InvalidInput(format!("shift must lie in (0, T/4), got {shift}")));
    }
    let jet = residual_jet(problem, ht, 1, (shift * 0.05).min(1e-3))?;
    let rho = ShiftedResidual {
        problem: problem.clone(),
        ht: ht.clone(),
        shift,
        jump: jet.norms[0],
        derivative_jump: jet.norms[1],
    };
    if rho.jump > tol || rho.derivative_jump > tol {
        return Err(Error::JetNotFlat(format!(
            "jump {:e} and derivative jump {:e} at t = {shift} exceed {tol:e}",
            rho.jump, rho.derivative_jump
        )));
    }
    Ok(rho)
}

/// `max|ρ_ε − Φ(h̃)|` over `samples` times in `[0, T]`.
pub fn shift_distance(problem: &PmeProblem, rho: &ShiftedResidual, samples: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for q in 0..=samples {
        let t = rho.ht.t_end * q as f64 / samples as f64;
        let a = rho.value(t)?;
        let b = residual(problem, &rho.ht, t)?;
        worst = worst.max(max_abs(&a.iter().zip(&b.values).map(|(x, y)| x - y).collect::<Vec<_>>()));
    }
    Ok(worst)
}

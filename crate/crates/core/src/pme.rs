//! Evolution of the free boundary through the height equation
//! `h_t = F(h, x)`: each step solves one linear degenerate problem with the
//! linearization of `F` and no boundary condition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorClass, Result};
use crate::fichera::{report_from_snapshot, Classification, FicheraReport, FicheraTolerances};
use crate::fields::ScalarField;
use crate::linsolve::{assemble_operator, EnergyFunctional, EnergyTrace};
use crate::numeric::{fit_slope, solve_sparse, CsrMatrix};
use crate::taylor::{build_htilde, formal_coefficients};
use crate::transform::{evaluate_f, linearize_snapshot, reconstruct_front, FrontSample, HState, PmeProblem};

/// Initial height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StartMode {
    /// `h = 0` at the start time.
    Cold,
    /// `h = h̃(t_w)` from the formal solution of order `order` cut off at `cutoff`.
    Warm { t_w: f64, order: usize, cutoff: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmeRunConfig {
    pub dt: f64,
    /// Time at which `v₀` is given.
    pub t_start: f64,
    pub t_end: f64,
    pub theta: f64,
    pub start: StartMode,
    /// Frozen-Jacobian corrections per step, at most 3.
    pub corrections: usize,
    /// Step even when the boundary conditions fail.
    pub force: bool,
    /// In 1D, accept coefficients satisfying only (B″).
    pub accept_b_double_prime: bool,
    pub tolerances: FicheraTolerances,
    /// Keep every report (otherwise the first and last).
    pub fichera_per_step: bool,
    pub energy_per_step: bool,
    pub front_speed_check: bool,
    /// Keep every `stride`-th height.
    pub stride: usize,
}

impl Default for PmeRunConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_start: 0.0,
            t_end: 0.1,
            theta: 1.0,
            start: StartMode::Cold,
            corrections: 0,
            force: false,
            accept_b_double_prime: false,
            tolerances: FicheraTolerances::default(),
            fichera_per_step: false,
            energy_per_step: false,
            front_speed_check: true,
            stride: 0,
        }
    }
}

impl PmeRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end > self.t_start) {
            return Err(Error::ConfigInvalid(format!(
                "need dt > 0 and t_end > t_start (dt = {}, t_start = {}, t_end = {})",
                self.dt, self.t_start, self.t_end
            )));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::ConfigInvalid(format!("theta must lie in [0.5, 1], got {}", self.theta)));
        }
        if self.corrections > 3 {
            return Err(Error::ConfigInvalid(format!("at most 3 corrections per step, got {}", self.corrections)));
        }
        if let StartMode::Warm { t_w, cutoff, .. } = self.start {
            if !(t_w >= 0.0 && t_w <= 0.5 * cutoff) {
                return Err(Error::ConfigInvalid(format!("warm start time {t_w} must lie in [0, cutoff/2]")));
            }
        }
        Ok(())
    }

    fn gate_allows(&self, report: &FicheraReport, dim: usize) -> bool {
        match report.classification {
            Classification::SatisfiesBPrime | Classification::SatisfiesB => true,
            Classification::SatisfiesBDoublePrimeOnly => dim == 1 && self.accept_b_double_prime,
            Classification::Fails => false,
        }
    }
}

/// One step and the boundary report of the linearization it used.
pub fn step_pme_with_report(problem: &PmeProblem, state: &HState, cfg: &PmeRunConfig) -> Result<(HState, FicheraReport)> {
    let grid = problem.grid();
    let snap = linearize_snapshot(problem, state)?;
    let report = report_from_snapshot(grid, &snap, state.t, cfg.tolerances);
    if !cfg.force && !cfg.gate_allows(&report, grid.dim()) {
        let mut failed = report.failures();
        if failed.is_empty() {
            failed.push("(B)");
        }
        return Err(Error::PreconditionRefused(format!(
            "linearized height operator fails {} at t = {} with m = {} ({}); rerun with force to step outside the certified regime",
            failed.join(", "),
            state.t,
            problem.m(),
            report.classification
        )));
    }
    let l = assemble_operator(grid, &snap);
    let n = grid.len();
    let theta_dt = cfg.theta * cfg.dt;
    let rows = (0..n)
        .map(|r| {
            let mut row: Vec<(usize, f64)> = l.row(r).map(|(k, v)| (k, -theta_dt * v)).collect();
            row.push((r, 1.0));
            row
        })
        .collect();
    let m = CsrMatrix::from_rows(n, rows);
    let f = evaluate_f(problem, state)?;
    let delta = solve_sparse(&m, &f.values)?;
    let mut next: Vec<f64> = state.h.values.iter().zip(&delta).map(|(h, d)| h + cfg.dt * d).collect();
    let t_next = state.t + cfg.dt;
    for _ in 0..cfg.corrections {
        // residual of the θ-scheme, corrected with the frozen matrix
        let trial = HState { h: ScalarField::new(grid.clone(), next.clone())?, t: t_next, tube: state.tube };
        let f_next = evaluate_f(problem, &trial)?;
        let res: Vec<f64> = (0..n)
            .map(|i| {
                next[i] - state.h.values[i] - cfg.dt * ((1.0 - cfg.theta) * f.values[i] + cfg.theta * f_next.values[i])
            })
            .collect();
        let corr = solve_sparse(&m, &res)?;
        for (x, c) in next.iter_mut().zip(&corr) {
            *x -= c;
        }
    }
    let h = ScalarField::new(grid.clone(), next)?;
    Ok((HState::new(h, t_next, state.tube)?, report))
}

/// `(I − θΔt L(h)) δ = F(h)`, `h⁺ = h + Δt δ`, optionally followed by
/// frozen-Jacobian corrections toward the θ-scheme.
pub fn step_pme(problem: &PmeProblem, state: &HState, cfg: &PmeRunConfig) -> Result<HState> {
    Ok(step_pme_with_report(problem, state, cfg)?.0)
}

/// Front samples with normal speeds by central differences in time.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrontTrajectory {
    pub samples: Vec<FrontSample>,
    /// `speed[k][p]` for sample `k`, point `p`.
    pub speed: Vec<Vec<f64>>,
}

impl FrontTrajectory {
    pub fn from_samples(samples: Vec<FrontSample>) -> Self {
        let k = samples.len();
        let mut speed = Vec::with_capacity(k);
        for s in 0..k {
            let (a, b) = if k < 2 {
                (s, s)
            } else if s == 0 {
                (0, 1)
            } else if s == k - 1 {
                (k - 2, k - 1)
            } else {
                (s - 1, s + 1)
            };
            let dt = samples[b].t - samples[a].t;
            let row = (0..samples[s].points.len())
                .map(|p| {
                    if dt == 0.0 {
                        return 0.0;
                    }
                    let nu = &samples[s].normals[p];
                    (0..nu.len()).map(|d| (samples[b].points[p][d] - samples[a].points[p][d]) * nu[d]).sum::<f64>() / dt
                })
                .collect();
            speed.push(row);
        }
        Self { samples, speed }
    }

    /// Mean distance of the front points from `center`.
    pub fn radii(&self, center: &[f64]) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .map(|p| p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / s.points.len() as f64
            })
            .collect()
    }

    /// Least-squares slope of `ln R` against `ln t`.
    pub fn fitted_exponent(&self, center: &[f64]) -> f64 {
        let lt: Vec<f64> = self.samples.iter().map(|s| s.t.ln()).collect();
        let lr: Vec<f64> = self.radii(center).iter().map(|r| r.ln()).collect();
        fit_slope(&lt, &lr)
    }

    /// Largest displacement of any front point between consecutive samples.
    pub fn max_step_displacement(&self) -> f64 {
        self.samples
            .windows(2)
            .flat_map(|w| {
                w[0].points.iter().zip(&w[1].points).map(|(a, b)| {
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                })
            })
            .fold(0.0, f64::max)
    }

    /// CSV rows `t,idx,x[,y],speed,grad_v`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        let dim = self.samples.first().and_then(|s| s.points.first()).map(|p| p.len()).unwrap_or(1);
        writeln!(out, "t,idx,{},speed,grad_v", if dim == 1 { "x" } else { "x,y" })?;
        for (s, sp) in self.samples.iter().zip(&self.speed) {
            for (p, pt) in s.points.iter().enumerate() {
                let c: Vec<String> = pt.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(out, "{:.17e},{},{},{:.17e},{:.17e}", s.t, s.nodes[p], c.join(","), sp[p], s.grad_v[p])?;
            }
        }
        Ok(())
    }
}

/// Per-time `max |speed − |∇v||`, absolute and relative to `|∇v|`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrontSpeedCheck {
    pub t: Vec<f64>,
    pub abs: Vec<f64>,
    pub rel: Vec<f64>,
}

impl FrontSpeedCheck {
    pub fn max_rel(&self) -> f64 {
        self.rel.iter().fold(0.0, |m, v| m.max(*v))
    }
}

/// Compares the front velocity with `|∇v|` at interior sample times.
pub fn front_speed_check(trajectory: &FrontTrajectory) -> Result<FrontSpeedCheck> {
    let k = trajectory.samples.len();
    if k < 3 {
        return Err(Error::InvalidInput(format!("front speed check needs at least 3 samples, got {k}")));
    }
    let mut out = FrontSpeedCheck::default();
    for s in 1..k - 1 {
        let sample = &trajectory.samples[s];
        let (mut abs, mut rel) = (0.0f64, 0.0f64);
        for (p, g) in sample.grad_v.iter().enumerate() {
            let d = (trajectory.speed[s][p] - g).abs();
            abs = abs.max(d);
            rel = rel.max(if *g > 0.0 { d / g } else { d });
        }
        out.t.push(sample.t);
        out.abs.push(abs);
        out.rel.push(rel);
    }
    Ok(out)
}

/// Diagnostics of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PmeDiagnostics {
    pub steps: usize,
    pub attained_t: f64,
    pub max_abs_h: f64,
    pub max_front_step: f64,
    pub classifications: Vec<Classification>,
    pub reports: Vec<FicheraReport>,
    pub fitted_exponent: Option<f64>,
    pub front_speed: Option<FrontSpeedCheck>,
    /// Reason the run stopped before `t_end`.
    pub stopped_by: Option<String>,
    pub stopped_class: Option<ErrorClass>,
}

#[derive(Debug, Clone)]
pub struct PmeRun {
    pub states: Vec<HState>,
    pub final_state: HState,
    pub front: FrontTrajectory,
    pub energy: EnergyTrace,
    pub diagnostics: PmeDiagnostics,
}

/// Initial state at `t_start` (cold) or `t_start + t_w` (warm).
pub fn initial_state(problem: &PmeProblem, cfg: &PmeRunConfig) -> Result<HState> {
    match cfg.start {
        StartMode::Cold => Ok(HState::zero(problem, cfg.t_start)),
        StartMode::Warm { t_w, order, cutoff } => {
            let fs = formal_coefficients(problem, order)?;
            let ht = build_htilde(problem, &fs, cutoff)?;
            HState::new(ht.value(t_w)?, cfg.t_start + t_w, problem.tube())
        }
    }
}

/// Steps to `t_end`. A precondition refusal or a failure in the first step
/// is an error; a numerical failure later ends the run early and is
/// recorded in the diagnostics.
pub fn solve_pme(problem: &PmeProblem, cfg: &PmeRunConfig) -> Result<PmeRun> {
    cfg.validate()?;
    let mut state = initial_state(problem, cfg)?;
    let energy_fn = if cfg.energy_per_step {
        Some(EnergyFunctional::for_domain(problem.grid().clone(), problem.domain(), 8)?)
    } else {
        None
    };
    let mut energy = EnergyTrace::default();
    let record_energy = |energy: &mut EnergyTrace, st: &HState| -> Result<()> {
        if let Some(e) = &energy_fn {
            let mut v = [f64::NAN; 3];
            for (k, slot) in v.iter_mut().enumerate() {
                if let Ok(b) = e.evaluate(&st.h, k) {
                    *slot = b.total();
                }
            }
            energy.push(st.t, v);
        }
        Ok(())
    };
    record_energy(&mut energy, &state)?;
    let mut fronts = vec![reconstruct_front(problem, &state)?];
    let mut states = vec![state.clone()];
    let mut diag = PmeDiagnostics { max_abs_h: state.h.max_abs(), ..Default::default() };
    let steps = ((cfg.t_end - state.t) / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut last_report = None;
    for s in 0..steps {
        match step_pme_with_report(problem, &state, cfg) {
            Ok((next, report)) => {
                diag.classifications.push(report.classification);
                if cfg.fichera_per_step || s == 0 {
                    diag.reports.push(report.clone());
                }
                last_report = Some(report);
                state = next;
            }
            Err(e) if s > 0 && e.class() == ErrorClass::Numerical => {
                diag.stopped_class = Some(e.class());
                diag.stopped_by = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        diag.steps += 1;
        diag.max_abs_h = diag.max_abs_h.max(state.h.max_abs());
        fronts.push(reconstruct_front(problem, &state)?);
        record_energy(&mut energy, &state)?;
        if cfg.stride > 0 && (s + 1) % cfg.stride == 0 {
            states.push(state.clone());
        }
    }
    if !cfg.fichera_per_step && diag.steps > 1 {
        if let Some(r) = last_report {
            diag.reports.push(r);
        }
    }
    diag.attained_t = state.t;
    let front = FrontTrajectory::from_samples(fronts);
    diag.max_front_step = front.max_step_displacement();
    if front.samples.len() >= 3 {
        let center = domain_center(problem);
        if front.samples.iter().all(|s| s.t > 0.0) {
            diag.fitted_exponent = Some(front.fitted_exponent(&center));
        }
        if cfg.front_speed_check {
            diag.front_speed = Some(front_speed_check(&front)?);
        }
    }
    Ok(PmeRun { states, final_state: state, front, energy, diagnostics: diag })
}

/// Centroid of the initial support used for radii.
pub fn domain_center(problem: &PmeProblem) -> Vec<f64> {
    let (lo, hi) = problem.domain().bounding_box();
    lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
}

//! Command-line front end: structured configuration, the five subcommands
//! and the artifact directory layout.
//!
//! Every run writes `resolved-config.toml` and `manifest.json` into the
//! output directory, the manifest also on failure. Exit codes: 0 success,
//! 1 configuration error, 2 precondition refused, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::domain::{Domain, StarCurve};
use crate::error::{Error, ErrorClass, Result};
use crate::expr::{Bindings, Expr};
use crate::fichera::{check_conditions, report_from_snapshot, FicheraTolerances, LinearCoefficients};
use crate::fields::{Grid, ScalarField};
use crate::linsolve::{solve_linear, LinearRunConfig, Regularization};
use crate::oracle::{mms_linear, ExactPmeSolution, ManufacturedSolution, TimeProfile};
use crate::pme::{solve_pme, PmeRunConfig, StartMode};
use crate::taylor::{build_htilde, formal_coefficients, residual_jet, shift_distance, time_shift_rho};
use crate::transform::{linearize_snapshot, HState, PmeProblem};

#[derive(Debug, Parser)]
#[command(name = "pmefront", version, about = "Porous medium free boundaries on a fixed domain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Evaluate the boundary conditions (A1), (A2), (B′), (B), (B″).
    CheckFichera(CommonArgs),
    /// Integrate a degenerate linear problem from zero data.
    SolveLinear(CommonArgs),
    /// Evolve the free boundary.
    SolvePme(CommonArgs),
    /// Formal time series of the height and its residual jet.
    Taylor(CommonArgs),
    /// Grid convergence study with a manufactured solution.
    Mms(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckFichera(_) => "check-fichera",
            Command::SolveLinear(_) => "solve-linear",
            Command::SolvePme(_) => "solve-pme",
            Command::Taylor(_) => "taylor",
            Command::Mms(_) => "mms",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::CheckFichera(a)
            | Command::SolveLinear(a)
            | Command::SolvePme(a)
            | Command::Taylor(a)
            | Command::Mms(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration entry by dotted path, e.g. `problem.m=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Step even when the boundary conditions fail.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemType {
    Pme,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collar: Option<f64>,
    },
    Disk {
        center: [f64; 2],
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collar: Option<f64>,
    },
    Ellipse {
        center: [f64; 2],
        a: f64,
        b: f64,
        #[serde(default = "default_curve_samples")]
        samples: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collar: Option<f64>,
    },
    /// Star-shaped boundary sampled in a two-column CSV file.
    Star {
        file: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        collar: Option<f64>,
    },
}

fn default_curve_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum V0Config {
    Expression(String),
    /// `idx,x[,y],value` rows in grid order.
    Samples(PathBuf),
    /// Quadratic-pressure solution at `t0` on its support (`dim` 1 or 2).
    QuadraticPressure {
        #[serde(default = "one")]
        a0: f64,
        #[serde(default = "one")]
        t0: f64,
        #[serde(default = "one_usize")]
        dim: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientConfig {
    /// `logistic`: `a = x(1−x)`, `b = 0`; `unit-disk`: `a = (1−|x|²) I`, `b = 0`.
    Builtin(String),
    /// `a` holds `a¹¹` in 1D and `a¹¹, a¹², a²²` in 2D.
    Expressions {
        a: Vec<String>,
        b: Vec<String>,
        #[serde(default = "zero_source")]
        f: String,
    },
}

fn zero_source() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "type")]
    pub kind: ProblemType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    /// Constants bound in every expression.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<V0Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Discretization {
    /// Nodes on a line grid, radial nodes on a polar grid.
    pub nx: usize,
    pub dt: f64,
    pub theta: f64,
    /// Stencil order, 2 or 4.
    pub order: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self { nx: 201, dt: 1e-3, theta: 1.0, order: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaylorConfig {
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub j_max: usize,
    pub dt_probe: f64,
    pub shift: f64,
}

impl Default for TaylorConfig {
    fn default() -> Self {
        Self { order: 3, t_end: 0.2, j_max: 2, dt_probe: 1e-3, shift: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmsConfig {
    /// Spatial factor of `w = τ(t) φ(x)`.
    pub phi: String,
    pub profile: TimeProfile,
    /// Highest time derivative that must vanish at `t = 0`.
    pub k_max: usize,
    pub grids: Vec<usize>,
    /// `Δt = dt_over_dx · Δx` in the convergence study.
    pub dt_over_dx: f64,
    pub theta: f64,
    pub t_end: f64,
}

impl Default for MmsConfig {
    fn default() -> Self {
        Self {
            phi: "sin(pi*x)*x*(1-x)".into(),
            profile: TimeProfile::ExpInv,
            k_max: 3,
            grids: vec![51, 101, 201, 401],
            dt_over_dx: 0.5,
            theta: 0.5,
            t_end: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmeSection {
    /// Defaults to `t0` of a quadratic-pressure preset, else 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    /// Defaults to `t_start + 0.1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub start: StartMode,
    pub corrections: usize,
    pub accept_b_double_prime: bool,
    pub fichera_per_step: bool,
    pub energy_per_step: bool,
    pub front_speed_check: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube: Option<f64>,
}

impl Default for PmeSection {
    fn default() -> Self {
        let d = PmeRunConfig::default();
        Self {
            t_start: None,
            t_end: None,
            start: d.start,
            corrections: d.corrections,
            accept_b_double_prime: d.accept_b_double_prime,
            fichera_per_step: d.fichera_per_step,
            energy_per_step: d.energy_per_step,
            front_speed_check: d.front_speed_check,
            tube: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSection {
    pub t_end: f64,
    pub energy: bool,
    pub charts: usize,
    /// Add the forcing of the `[mms]` manufactured solution.
    pub manufactured: bool,
}

impl Default for LinearSection {
    fn default() -> Self {
        Self { t_end: 1.0, energy: true, charts: 8, manufactured: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write every `stride`-th field snapshot; 0 keeps only the final one.
    pub stride: usize,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), stride: 0, formats: vec![Format::Csv, Format::Json] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub tol_zero: f64,
    pub tol_strict: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let d = FicheraTolerances::default();
        Self { tol_zero: d.zero_rel, tol_strict: d.strict_rel }
    }
}

impl From<ToleranceConfig> for FicheraTolerances {
    fn from(t: ToleranceConfig) -> Self {
        FicheraTolerances { zero_rel: t.tol_zero, strict_rel: t.tol_strict }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub force: bool,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<Regularization>,
    #[serde(default)]
    pub pme: PmeSection,
    #[serde(default)]
    pub linear: LinearSection,
    #[serde(default)]
    pub taylor: TaylorConfig,
    #[serde(default)]
    pub mms: MmsConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl RunConfig {
    /// Checks ranges and cross-field requirements; no computation.
    pub fn validate(&self) -> Result<()> {
        let d = &self.discretization;
        if d.nx < 5 {
            return Err(invalid(format!("discretization.nx must be at least 5, got {}", d.nx)));
        }
        if !(d.dt > 0.0) {
            return Err(invalid(format!("discretization.dt must be positive, got {}", d.dt)));
        }
        if !(0.5..=1.0).contains(&d.theta) {
            return Err(invalid(format!("discretization.theta must lie in [0.5, 1], got {}", d.theta)));
        }
        if d.order != 2 && d.order != 4 {
            return Err(invalid(format!("discretization.order must be 2 or 4, got {}", d.order)));
        }
        let t = &self.tolerances;
        if !(t.tol_zero > 0.0 && t.tol_strict > 0.0) {
            return Err(invalid("tolerances must be positive"));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats must not be empty"));
        }
        let p = &self.problem;
        match p.kind {
            ProblemType::Pme => {
                match p.m {
                    Some(m) if m > 1.0 => {}
                    Some(m) => return Err(invalid(format!("problem.m must exceed 1, got {m}"))),
                    None => return Err(invalid("problem.m is required for type = \"pme\"")),
                }
                match &p.v0 {
                    None => return Err(invalid("problem.v0 is required for type = \"pme\"")),
                    Some(V0Config::QuadraticPressure { a0, t0, dim }) => {
                        if p.domain.is_some() {
                            return Err(invalid("problem.domain must be omitted with a quadratic-pressure preset"));
                        }
                        if !(*a0 > 0.0 && *t0 > 0.0) || !(*dim == 1 || *dim == 2) {
                            return Err(invalid("quadratic-pressure needs a0 > 0, t0 > 0 and dim 1 or 2"));
                        }
                    }
                    Some(_) if p.domain.is_none() => return Err(invalid("problem.domain is required")),
                    Some(_) => {}
                }
                if let Some(te) = self.pme.t_end {
                    if !(te > self.pme_t_start()) {
                        return Err(invalid(format!("pme.t_end = {te} must exceed the start time")));
                    }
                }
                if self.pme.corrections > 3 {
                    return Err(invalid("pme.corrections must be at most 3"));
                }
            }
            ProblemType::Linear => {
                if p.coefficients.is_none() {
                    return Err(invalid("problem.coefficients is required for type = \"linear\""));
                }
                if !(self.linear.t_end > 0.0) {
                    return Err(invalid("linear.t_end must be positive"));
                }
            }
        }
        if self.mms.grids.iter().any(|n| *n < 5) || !(self.mms.dt_over_dx > 0.0) {
            return Err(invalid("mms.grids entries must be at least 5 and mms.dt_over_dx positive"));
        }
        if let Some(r) = &self.regularization {
            if !(r.epsilon >= 0.0) || !(r.order_n == 1 || r.order_n == 2) {
                return Err(invalid("regularization needs epsilon >= 0 and N in {1, 2}"));
            }
        }
        Ok(())
    }

    fn pme_t_start(&self) -> f64 {
        match (self.pme.t_start, &self.problem.v0) {
            (Some(t), _) => t,
            (None, Some(V0Config::QuadraticPressure { t0, .. })) => *t0,
            _ => 0.0,
        }
    }

    fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    fn bindings(&self) -> Bindings {
        let mut b = Bindings::new();
        for (k, v) in &self.problem.params {
            b.set(k, *v);
        }
        if let Some(m) = self.problem.m {
            b.set("m", m);
        }
        b
    }

    /// Parses `src` and substitutes `m` and the configured constants.
    pub fn bind_source(&self, src: &str) -> Result<String> {
        Ok(Expr::parse(src)?.bind(&self.bindings()).to_string())
    }

    pub fn domain(&self) -> Result<Domain> {
        let cfg = self.problem.domain.as_ref().ok_or_else(|| invalid("problem.domain is required"))?;
        let (dom, collar) = match cfg {
            DomainConfig::Interval { a, b, collar } => (Domain::interval(*a, *b)?, collar),
            DomainConfig::Disk { center, radius, collar } => (Domain::disk(*center, *radius)?, collar),
            DomainConfig::Ellipse { center, a, b, samples, collar } => {
                (Domain::star_shaped(StarCurve::ellipse(*center, *a, *b, *samples)?)?, collar)
            }
            DomainConfig::Star { file, collar } => (Domain::star_shaped(StarCurve::from_csv(file)?)?, collar),
        };
        match collar {
            Some(c) => dom.with_collar(*c),
            None => Ok(dom),
        }
    }

    /// The free-boundary problem and, for presets, its exact solution.
    pub fn pme_problem(&self) -> Result<(PmeProblem, Option<ExactPmeSolution>)> {
        let m = self.problem.m.ok_or_else(|| invalid("problem.m is required"))?;
        let d = &self.discretization;
        let (problem, exact) = match self.problem.v0.as_ref().ok_or_else(|| invalid("problem.v0 is required"))? {
            V0Config::QuadraticPressure { a0, t0, dim } => {
                let e = if *dim == 1 {
                    ExactPmeSolution::quadratic_pressure_1d(m, *a0)?
                } else {
                    ExactPmeSolution::quadratic_pressure_radial(m, *dim, *a0)?
                };
                (PmeProblem::from_exact(&e, *t0, d.nx, d.order)?, Some(e))
            }
            V0Config::Expression(src) => {
                let dom = self.domain()?;
                let grid = Grid::for_domain(&dom, d.nx, d.order)?;
                (PmeProblem::from_expression(m, dom, grid, &self.bind_source(src)?)?, None)
            }
            V0Config::Samples(path) => {
                let dom = self.domain()?;
                let grid = Grid::for_domain(&dom, d.nx, d.order)?;
                let text = fs::read_to_string(path)
                    .map_err(|e| invalid(format!("cannot read v0 samples {}: {e}", path.display())))?;
                (PmeProblem::from_field(m, dom, ScalarField::read_csv(grid, &text)?)?, None)
            }
        };
        let problem = match self.pme.tube {
            Some(t) => problem.with_tube(t)?,
            None => problem,
        };
        Ok((problem, exact))
    }

    pub fn pme_run_config(&self) -> PmeRunConfig {
        let t_start = self.pme_t_start();
        PmeRunConfig {
            dt: self.discretization.dt,
            t_start,
            t_end: self.pme.t_end.unwrap_or(t_start + 0.1),
            theta: self.discretization.theta,
            start: self.pme.start,
            corrections: self.pme.corrections,
            force: self.force,
            accept_b_double_prime: self.pme.accept_b_double_prime,
            tolerances: self.tolerances.into(),
            fichera_per_step: self.pme.fichera_per_step,
            energy_per_step: self.pme.energy_per_step,
            front_speed_check: self.pme.front_speed_check,
            stride: self.output.stride,
        }
    }

    /// Coefficients on `grid`, without manufactured forcing.
    pub fn linear_coefficients(&self, grid: Arc<Grid>) -> Result<LinearCoefficients> {
        let cfg = self.problem.coefficients.as_ref().ok_or_else(|| invalid("problem.coefficients is required"))?;
        match cfg {
            CoefficientConfig::Builtin(name) => match name.as_str() {
                "logistic" => LinearCoefficients::from_expressions(grid, &["x*(1-x)"], &["0"], "0"),
                "unit-disk" => {
                    LinearCoefficients::from_expressions(grid, &["1-x^2-y^2", "0", "1-x^2-y^2"], &["0", "0"], "0")
                }
                other => Err(invalid(format!("unknown builtin coefficients '{other}' (expected logistic or unit-disk)"))),
            },
            CoefficientConfig::Expressions { a, b, f } => {
                let a: Vec<String> = a.iter().map(|s| self.bind_source(s)).collect::<Result<_>>()?;
                let b: Vec<String> = b.iter().map(|s| self.bind_source(s)).collect::<Result<_>>()?;
                let a: Vec<&str> = a.iter().map(String::as_str).collect();
                let b: Vec<&str> = b.iter().map(String::as_str).collect();
                LinearCoefficients::from_expressions(grid, &a, &b, &self.bind_source(f)?)
            }
        }
    }

    pub fn manufactured(&self, dim: usize) -> Result<ManufacturedSolution> {
        ManufacturedSolution::new(&self.bind_source(&self.mms.phi)?, dim, self.mms.profile)
    }

    pub fn linear_run_config(&self) -> LinearRunConfig {
        LinearRunConfig {
            dt: self.discretization.dt,
            t_end: self.linear.t_end,
            theta: self.discretization.theta,
            regularization: self.regularization,
            force: self.force,
            tolerances: self.tolerances.into(),
            stride: self.output.stride,
            energy: self.linear.energy,
            charts: self.linear.charts,
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| invalid(format!("empty override key '{path}'")))?;
    let mut cur = table;
    for k in keys {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override '{path}': '{k}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Applies `--set key=value` to a raw configuration table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override '{spec}' is not of the form key=value")))?;
    set_path(table, key.trim(), parse_override_value(raw.trim()))
}

fn raw_table(args: &CommonArgs) -> Result<toml::Table> {
    let mut table = match &args.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for s in &args.set {
        apply_override(&mut table, s)?;
    }
    if let Some(out) = &args.out {
        set_path(&mut table, "output.dir", toml::Value::String(out.display().to_string()))?;
    }
    if args.force {
        table.insert("force".into(), toml::Value::Boolean(true));
    }
    Ok(table)
}

/// Merges file, overrides and flags, then validates.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let table = raw_table(args)?;
    let text = toml::to_string(&table).map_err(|e| invalid(e.to_string()))?;
    let cfg: RunConfig = toml::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Output directory for a run whose configuration may not have loaded.
fn fallback_out_dir(args: &CommonArgs) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    raw_table(args)
        .ok()
        .and_then(|t| t.get("output")?.get("dir")?.as_str().map(PathBuf::from))
        .unwrap_or_else(|| OutputConfig::default().dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitInfo {
    pub code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<ErrorClass>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// SHA-256 of the resolved configuration.
    pub config_hash: Option<String>,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub diagnostics: Value,
    pub exit: ExitInfo,
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Precondition => 2,
        ErrorClass::Numerical => 3,
    }
}

struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// `stem.csv` and, when JSON is enabled, its header `stem.json`.
    fn field(&mut self, stem: &str, f: &ScalarField, json: bool) -> Result<()> {
        self.write(&format!("{stem}.csv"), |w| f.write_csv(w))?;
        if json {
            self.json(&format!("{stem}.json"), &f.header(stem))?;
        }
        Ok(())
    }
}

/// Runs one subcommand and returns the process exit code.
pub fn run(command: &Command) -> i32 {
    let start = Instant::now();
    let args = command.args();
    let loaded = load_config(args);
    let dir = match &loaded {
        Ok(cfg) => cfg.output.dir.clone(),
        Err(_) => fallback_out_dir(args),
    };
    if let Err(e) = fs::create_dir_all(&dir) {
        eprintln!("error: cannot create output directory {}: {e}", dir.display());
        return exit_code(ErrorClass::Config);
    }
    let mut artifacts = Artifacts { dir: dir.clone(), names: Vec::new() };
    let mut config_hash = None;
    let outcome = loaded.and_then(|cfg| {
        let resolved = toml::to_string(&cfg).map_err(|e| invalid(e.to_string()))?;
        config_hash = Some(Sha256::digest(resolved.as_bytes()).iter().map(|b| format!("{b:02x}")).collect());
        artifacts.write("resolved-config.toml", |w| Ok(w.write_all(resolved.as_bytes())?))?;
        dispatch(command, &cfg, &mut artifacts)
    });
    let (diagnostics, exit) = match outcome {
        Ok(d) => (d, ExitInfo { code: 0, class: None, error: None, message: None }),
        Err(e) => {
            eprintln!("error: {e}");
            let class = e.class();
            (
                Value::Null,
                ExitInfo { code: exit_code(class), class: Some(class), error: Some(e.kind().into()), message: Some(e.to_string()) },
            )
        }
    };
    let code = exit.code;
    let manifest = RunManifest {
        subcommand: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: artifacts.names.clone(),
        diagnostics,
        exit,
    };
    if let Err(e) = artifacts.json("manifest.json", &manifest) {
        eprintln!("error: cannot write manifest: {e}");
    }
    code
}

/// Parses `argv` and runs.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(&cli.command),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                exit_code(ErrorClass::Config)
            } else {
                0
            }
        }
    }
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    match command {
        Command::CheckFichera(_) => cmd_check_fichera(cfg, out),
        Command::SolveLinear(_) => cmd_solve_linear(cfg, out),
        Command::SolvePme(_) => cmd_solve_pme(cfg, out),
        Command::Taylor(_) => cmd_taylor(cfg, out),
        Command::Mms(_) => cmd_mms(cfg, out),
    }
}

fn require(cfg: &RunConfig, kind: ProblemType, sub: &str) -> Result<()> {
    if cfg.problem.kind != kind {
        return Err(invalid(format!("{sub} needs problem.type = \"{}\"", if kind == ProblemType::Pme { "pme" } else { "linear" })));
    }
    Ok(())
}

fn cmd_check_fichera(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    let report = match cfg.problem.kind {
        ProblemType::Pme => {
            let (problem, _) = cfg.pme_problem()?;
            let state = HState::zero(&problem, cfg.pme_t_start());
            let snap = linearize_snapshot(&problem, &state)?;
            report_from_snapshot(problem.grid(), &snap, state.t, cfg.tolerances.into())
        }
        ProblemType::Linear => {
            let domain = cfg.domain()?;
            let grid = Grid::for_domain(&domain, cfg.discretization.nx, cfg.discretization.order)?;
            let coeffs = cfg.linear_coefficients(grid)?;
            check_conditions(&coeffs, &domain, 0.0, cfg.tolerances.into())?
        }
    };
    if cfg.wants(Format::Json) {
        out.json("fichera.json", &report)?;
    }
    println!("{}", report.classification);
    let max = |v: &[f64]| v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    Ok(json!({
        "classification": report.classification.to_string(),
        "failures": report.failures(),
        "max_q3": max(&report.q3),
        "max_q4": max(&report.q4),
        "max_abs_q1": report.max_abs_q1(),
        "scale": report.scale,
    }))
}

fn cmd_solve_linear(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    require(cfg, ProblemType::Linear, "solve-linear")?;
    let domain = cfg.domain()?;
    let grid = Grid::for_domain(&domain, cfg.discretization.nx, cfg.discretization.order)?;
    let mut coeffs = cfg.linear_coefficients(grid.clone())?;
    let sol = if cfg.linear.manufactured {
        let s = cfg.manufactured(grid.dim())?;
        coeffs = mms_linear(&coeffs, &s, cfg.mms.k_max)?;
        Some(s)
    } else {
        None
    };
    let run_cfg = cfg.linear_run_config();
    let run = solve_linear(&coeffs, &domain, &run_cfg)?;
    if cfg.wants(Format::Csv) {
        let json = cfg.wants(Format::Json);
        out.field("solution", &run.final_w.clone().with_time(run_cfg.t_end), json)?;
        for (k, s) in run.snapshots.iter().enumerate() {
            out.field(&format!("w_{k:05}"), s, json)?;
        }
        if !run.energy.t.is_empty() {
            out.write("energy.csv", |w| run.energy.write_csv(w))?;
        }
    }
    if cfg.wants(Format::Json) {
        out.json("fichera.json", &run.report)?;
    }
    let error = match &sol {
        Some(s) => Some(run.final_w.combine(1.0, &s.field(&grid, run_cfg.t_end)?, -1.0).max_abs()),
        None => None,
    };
    Ok(json!({
        "steps": run.steps,
        "classification": run.report.classification.to_string(),
        "max_abs_w": run.final_w.max_abs(),
        "gronwall_constant": run.gronwall,
        "manufactured_error": error,
    }))
}

fn cmd_solve_pme(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    require(cfg, ProblemType::Pme, "solve-pme")?;
    let (problem, exact) = cfg.pme_problem()?;
    let run_cfg = cfg.pme_run_config();
    if run_cfg.force && problem.m() > 2.0 {
        eprintln!("warning: m = {} > 2 lies outside the certified regime; stepping under force", problem.m());
    }
    let run = solve_pme(&problem, &run_cfg)?;
    if cfg.wants(Format::Csv) {
        out.write("front.csv", |w| run.front.write_csv(w))?;
        let json = cfg.wants(Format::Json);
        out.field("h_final", &run.final_state.h.clone().with_time(run.final_state.t), json)?;
        if cfg.output.stride > 0 {
            for (k, s) in run.states.iter().enumerate() {
                out.field(&format!("h_{k:05}"), &s.h.clone().with_time(s.t), json)?;
            }
        }
        if !run.energy.t.is_empty() {
            out.write("energy.csv", |w| run.energy.write_csv(w))?;
        }
    }
    if cfg.wants(Format::Json) {
        out.json("fichera.json", &run.diagnostics.reports)?;
    }
    let mut diag = serde_json::to_value(&run.diagnostics).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(obj) = diag.as_object_mut() {
        obj.remove("reports");
        obj.remove("classifications");
        let worst = run.diagnostics.classifications.iter().map(|c| c.to_string()).collect::<std::collections::BTreeSet<_>>();
        obj.insert("classifications_seen".into(), json!(worst));
        if let Some(e) = &exact {
            let center = crate::pme::domain_center(&problem);
            let radii = run.front.radii(&center);
            let rel = run
                .front
                .samples
                .iter()
                .zip(&radii)
                .map(|(s, r)| (r - e.front_radius(s.t)).abs() / e.front_radius(s.t))
                .fold(0.0, f64::max);
            obj.insert("front_rel_error".into(), json!(rel));
            obj.insert("exact_front_exponent".into(), json!(e.front_exponent()));
        }
    }
    Ok(diag)
}

fn cmd_taylor(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    require(cfg, ProblemType::Pme, "taylor")?;
    let (problem, _) = cfg.pme_problem()?;
    let tc = &cfg.taylor;
    let formal = formal_coefficients(&problem, tc.order)?;
    let ht = build_htilde(&problem, &formal, tc.t_end)?;
    let jet = residual_jet(&problem, &ht, tc.j_max, tc.dt_probe)?;
    let rho = time_shift_rho(&problem, &ht, tc.shift, jet.tolerance)?;
    let distance = shift_distance(&problem, &rho, 41)?;
    if cfg.wants(Format::Csv) {
        out.write("taylor_coefficients.csv", |w| {
            let dim = problem.dim();
            let cols: Vec<String> = (0..formal.coefficients.len()).map(|j| format!("a{j}")).collect();
            writeln!(w, "idx,{},{}", if dim == 1 { "x" } else { "x,y" }, cols.join(","))?;
            for (i, p) in problem.grid().points().iter().enumerate() {
                let c: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
                let a: Vec<String> = formal.coefficients.iter().map(|f| format!("{:.17e}", f.values[i])).collect();
                writeln!(w, "{i},{},{}", c.join(","), a.join(","))?;
            }
            Ok(())
        })?;
    }
    let summary = json!({
        "order": formal.order(),
        "coefficient_max_abs": formal.coefficients.iter().map(|a| a.max_abs()).collect::<Vec<_>>(),
        "residual_jet": jet,
        "vanishes": (0..jet.norms.len()).map(|j| jet.vanishes(j)).collect::<Vec<_>>(),
        "shift": rho.shift,
        "shift_jump": rho.jump,
        "shift_derivative_jump": rho.derivative_jump,
        "shift_distance": distance,
        "htilde_bound": ht.bound(),
    });
    if cfg.wants(Format::Json) {
        out.json("taylor.json", &summary)?;
    }
    Ok(summary)
}

/// One row of the convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub dx: f64,
    pub error: f64,
    /// Observed order against the previous row.
    pub order: Option<f64>,
}

/// Coefficients, forcing and exact solution at `t` on one grid.
#[derive(Debug, Clone)]
pub struct MmsBundle {
    pub coefficients: LinearCoefficients,
    pub t: f64,
    pub forcing: Vec<f64>,
    pub exact: ScalarField,
}

impl MmsBundle {
    /// CSV rows `idx,x,a,b,g,w_exact`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let snap = self.coefficients.snapshot(self.t)?;
        writeln!(out, "idx,x,a,b,g,w_exact")?;
        for (i, p) in self.exact.grid().points().iter().enumerate() {
            writeln!(
                out,
                "{i},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                p[0], snap.a[0][i], snap.b[0][i], self.forcing[i], self.exact.values[i]
            )?;
        }
        Ok(())
    }
}

/// Manufactured-solution errors on successively finer line grids.
pub fn mms_study(cfg: &RunConfig) -> Result<(Vec<ConvergenceRow>, f64)> {
    let (rows, zero, _) = mms_study_with_bundles(cfg)?;
    Ok((rows, zero))
}

fn mms_study_with_bundles(cfg: &RunConfig) -> Result<(Vec<ConvergenceRow>, f64, Vec<MmsBundle>)> {
    let domain = match &cfg.problem.domain {
        Some(_) => cfg.domain()?,
        None => Domain::interval(0.0, 1.0)?,
    };
    if domain.dim() != 1 {
        return Err(invalid("mms runs on an interval"));
    }
    let sol = cfg.manufactured(1)?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut bundles = Vec::new();
    let mut zero_max: f64 = 0.0;
    for &nx in &cfg.mms.grids {
        let grid = Grid::for_domain(&domain, nx, cfg.discretization.order)?;
        let dx = grid.dx().ok_or_else(|| invalid("mms runs on a line grid"))?;
        let base = cfg.linear_coefficients(grid.clone())?;
        let run_cfg = LinearRunConfig {
            dt: cfg.mms.dt_over_dx * dx,
            t_end: cfg.mms.t_end,
            theta: cfg.mms.theta,
            energy: false,
            ..cfg.linear_run_config()
        };
        let zero = solve_linear(&base, &domain, &run_cfg)?;
        zero_max = zero_max.max(zero.final_w.max_abs());
        let forced = mms_linear(&base, &sol, cfg.mms.k_max)?;
        let run = solve_linear(&forced, &domain, &run_cfg)?;
        let exact = sol.field(&grid, cfg.mms.t_end)?;
        let error = run.final_w.combine(1.0, &exact, -1.0).max_abs();
        let order = rows.last().map(|p| (p.error / error).ln() / (p.dx / dx).ln());
        rows.push(ConvergenceRow { nx, dx, error, order });
        let forcing = forced.forcing(cfg.mms.t_end)?;
        bundles.push(MmsBundle { coefficients: forced, t: cfg.mms.t_end, forcing, exact });
    }
    Ok((rows, zero_max, bundles))
}

fn cmd_mms(cfg: &RunConfig, out: &mut Artifacts) -> Result<Value> {
    require(cfg, ProblemType::Linear, "mms")?;
    let (rows, zero_max, bundles) = mms_study_with_bundles(cfg)?;
    if cfg.wants(Format::Csv) {
        for b in &bundles {
            out.write(&format!("mms_{:05}.csv", b.exact.len()), |w| b.write_csv(w))?;
        }
        out.write("convergence.csv", |w| {
            writeln!(w, "nx,dx,error,order")?;
            for r in &rows {
                let o = r.order.map(|o| format!("{o:.17e}")).unwrap_or_default();
                writeln!(w, "{},{:.17e},{:.17e},{o}", r.nx, r.dx, r.error)?;
            }
            Ok(())
        })?;
    }
    let min_order = rows.iter().filter_map(|r| r.order).fold(f64::INFINITY, f64::min);
    Ok(json!({
        "rows": rows,
        "min_order": if min_order.is_finite() { Some(min_order) } else { None },
        "zero_forcing_max_abs": zero_max,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(set: &[&str]) -> CommonArgs {
        CommonArgs { set: set.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    #[test]
    fn overrides_build_a_valid_preset() {
        let cfg = load_config(&args(&[
            "problem.type=\"pme\"",
            "problem.m=2",
            "problem.v0.quadratic-pressure.a0=1.0",
        ]))
        .unwrap();
        assert_eq!(cfg.problem.m, Some(2.0));
        assert_eq!(cfg.pme_run_config().t_start, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = load_config(&args(&["problem.type=\"pme\"", "problem.m=2", "problem.colour=3"])).unwrap_err();
        assert_eq!(e.class(), ErrorClass::Config);
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn negative_grid_size_is_a_config_error() {
        let e = load_config(&args(&[
            "problem.type=\"linear\"",
            "problem.coefficients.builtin=\"logistic\"",
            "discretization.nx=-5",
        ]))
        .unwrap_err();
        assert_eq!(exit_code(e.class()), 1);
    }

    #[test]
    fn bare_words_become_strings() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "problem.type=pme").unwrap();
        assert_eq!(t["problem"]["type"].as_str(), Some("pme"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = load_config(&args(&[
            "problem.type=\"linear\"",
            "problem.coefficients.builtin=\"logistic\"",
            "problem.domain.kind=\"interval\"",
            "problem.domain.params={a=0.0, b=1.0}",
            "regularization={epsilon=1e-3, N=1}",
        ]))
        .unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parameters_are_bound_in_expressions() {
        let cfg = load_config(&args(&["problem.type=\"pme\"", "problem.m=2", "problem.v0.expression=\"1-x^2\"", "problem.domain.kind=\"interval\"", "problem.domain.params={a=-1.0,b=1.0}"])).unwrap();
        let src = cfg.bind_source("(m-1)*x").unwrap();
        let v = Expr::parse(&src).unwrap().eval(&Bindings::new().with("x", 3.0)).unwrap();
        assert_eq!(v, 3.0);
    }
}

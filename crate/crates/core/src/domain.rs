//! The fixed region Ω₀: geometry, boundary-fitted collar charts and a
//! partition of unity adapted to them.
//!
//! In every chart the normal coordinate `Y` is minus the distance to the
//! boundary, so `Y = 0` on ∂Ω₀ and `Y < 0` inside. Boundary cutoffs are
//! constant along normal lines for `|Y| <= c0/2`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic trigonometric interpolant of equally spaced samples on [0, 2π).
#[derive(Debug, Clone, PartialEq)]
pub struct TrigInterp {
    a0: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    nyquist: f64,
}

impl TrigInterp {
    pub fn new(samples: &[f64]) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let m = (n - 1) / 2;
        let a0 = samples.iter().sum::<f64>() / nf;
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        for k in 1..=m {
            let (mut sa, mut sb) = (0.0, 0.0);
            for (j, v) in samples.iter().enumerate() {
                let ang = 2.0 * PI * (k * j) as f64 / nf;
                sa += v * ang.cos();
                sb += v * ang.sin();
            }
            a[k - 1] = 2.0 * sa / nf;
            b[k - 1] = 2.0 * sb / nf;
        }
        let nyquist = if n.is_multiple_of(2) {
            samples.iter().enumerate().map(|(j, v)| if j % 2 == 0 { *v } else { -*v }).sum::<f64>() / nf
        } else {
            0.0
        };
        Self { a0, a, b, nyquist }
    }

    /// Value (`deriv = 0`) or derivative of order `deriv` at parameter `s`.
    pub fn eval(&self, s: f64, deriv: u32) -> f64 {
        let mut out = if deriv == 0 { self.a0 } else { 0.0 };
        let cycle = |c: f64, sn: f64, k: f64| -> f64 {
            // derivative of cos(ks) and sin(ks) of order `deriv`
            let kd = k.powi(deriv as i32);
            match deriv % 4 {
                0 => kd * c,
                1 => -kd * sn,
                2 => -kd * c,
                _ => kd * sn,
            }
        };
        for k in 1..=self.a.len() {
            let kf = k as f64;
            let (sn, c) = (kf * s).sin_cos();
            out += self.a[k - 1] * cycle(c, sn, kf);
            // sin(ks) derivative = cos(k s - π/2) derivative
            let (sn2, c2) = (kf * s - PI / 2.0).sin_cos();
            out += self.b[k - 1] * cycle(c2, sn2, kf);
        }
        if self.nyquist != 0.0 {
            let kf = (2 * self.a.len() + 2) as f64 / 2.0;
            let (sn, c) = (kf * s).sin_cos();
            out += self.nyquist * cycle(c, sn, kf);
        }
        out
    }
}

/// Closed star-shaped boundary curve given by counterclockwise samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StarCurve {
    samples: Vec<[f64; 2]>,
    center: [f64; 2],
    xs: TrigInterp,
    ys: TrigInterp,
    radial: TrigInterp,
    mean_radius: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

impl StarCurve {
    pub fn new(samples: Vec<[f64; 2]>) -> Result<Self> {
        if samples.len() < 8 {
            return Err(Error::InvalidInput("star-shaped boundary needs at least 8 samples".into()));
        }
        let n = samples.len() as f64;
        let center = [
            samples.iter().map(|p| p[0]).sum::<f64>() / n,
            samples.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        // orientation and star-shapedness: polar angle strictly increasing
        let mut total = 0.0;
        for i in 0..samples.len() {
            let p = samples[i];
            let q = samples[(i + 1) % samples.len()];
            let a0 = (p[1] - center[1]).atan2(p[0] - center[0]);
            let a1 = (q[1] - center[1]).atan2(q[0] - center[0]);
            let d = wrap_angle(a1 - a0);
            if d <= 0.0 {
                return Err(Error::InvalidInput(
                    "boundary samples must be counterclockwise and star-shaped about their centroid".into(),
                ));
            }
            total += d;
        }
        if (total - 2.0 * PI).abs() > 1e-6 {
            return Err(Error::InvalidInput("boundary samples do not wind once around the centroid".into()));
        }
        let xs = TrigInterp::new(&samples.iter().map(|p| p[0]).collect::<Vec<_>>());
        let ys = TrigInterp::new(&samples.iter().map(|p| p[1]).collect::<Vec<_>>());
        let mut curve = Self {
            samples,
            center,
            xs,
            ys,
            radial: TrigInterp::new(&[1.0]),
            mean_radius: 1.0,
        };
        // radial function R(θ) resampled on a uniform angle grid
        let m = 4 * curve.samples.len();
        let radii: Vec<f64> = (0..m)
            .map(|j| {
                let theta = 2.0 * PI * j as f64 / m as f64;
                let s = curve.param_at_angle(theta);
                let p = curve.point(s);
                ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt()
            })
            .collect();
        curve.mean_radius = radii.iter().sum::<f64>() / m as f64;
        curve.radial = TrigInterp::new(&radii);
        Ok(curve)
    }

    /// Ellipse with semi-axes `a`, `b` sampled uniformly in the
    /// parametric angle.
    pub fn ellipse(center: [f64; 2], a: f64, b: f64, n: usize) -> Result<Self> {
        let samples = (0..n)
            .map(|k| {
                let s = 2.0 * PI * k as f64 / n as f64;
                [center[0] + a * s.cos(), center[1] + b * s.sin()]
            })
            .collect();
        Self::new(samples)
    }

    /// Reads `x,y` rows (header optional) ordered counterclockwise.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() < 2 {
                return Err(Error::InvalidInput(format!("line {}: expected two columns", lineno + 1)));
            }
            match (parts[0].parse::<f64>(), parts[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => samples.push([x, y]),
                _ if lineno == 0 => continue, // header
                _ => return Err(Error::InvalidInput(format!("line {}: malformed number", lineno + 1))),
            }
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        [self.xs.eval(s, 0), self.ys.eval(s, 0)]
    }

    pub fn tangent(&self, s: f64) -> [f64; 2] {
        [self.xs.eval(s, 1), self.ys.eval(s, 1)]
    }

    fn second(&self, s: f64) -> [f64; 2] {
        [self.xs.eval(s, 2), self.ys.eval(s, 2)]
    }

    /// Outward unit normal at parameter `s`.
    pub fn normal(&self, s: f64) -> [f64; 2] {
        let t = self.tangent(s);
        let l = (t[0] * t[0] + t[1] * t[1]).sqrt();
        [t[1] / l, -t[0] / l]
    }

    /// Signed curvature (positive for convex arcs).
    pub fn curvature(&self, s: f64) -> f64 {
        let t = self.tangent(s);
        let a = self.second(s);
        (t[0] * a[1] - t[1] * a[0]) / (t[0] * t[0] + t[1] * t[1]).powf(1.5)
    }

    fn param_at_angle(&self, theta: f64) -> f64 {
        let n = self.samples.len();
        // start from the nearest sample in angle
        let mut best = 0;
        let mut bestd = f64::INFINITY;
        for (k, p) in self.samples.iter().enumerate() {
            let a = (p[1] - self.center[1]).atan2(p[0] - self.center[0]);
            let d = wrap_angle(a - theta).abs();
            if d < bestd {
                bestd = d;
                best = k;
            }
        }
        let mut s = 2.0 * PI * best as f64 / n as f64;
        for _ in 0..50 {
            let p = self.point(s);
            let t = self.tangent(s);
            let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
            let r2 = dx * dx + dy * dy;
            let g = wrap_angle(dy.atan2(dx) - theta);
            let dg = (dx * t[1] - dy * t[0]) / r2;
            let step = g / dg;
            s -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        s
    }

    /// Nearest-point parameter on the curve.
    pub fn nearest_param(&self, x: &[f64]) -> f64 {
        let n = 8 * self.samples.len();
        let mut best = 0.0;
        let mut bestd = f64::INFINITY;
        for k in 0..n {
            let s = 2.0 * PI * k as f64 / n as f64;
            let p = self.point(s);
            let d = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
            if d < bestd {
                bestd = d;
                best = s;
            }
        }
        let mut s = best;
        for _ in 0..50 {
            let p = self.point(s);
            let t = self.tangent(s);
            let a = self.second(s);
            let r = [p[0] - x[0], p[1] - x[1]];
            let g = r[0] * t[0] + r[1] * t[1];
            let dg = t[0] * t[0] + t[1] * t[1] + r[0] * a[0] + r[1] * a[1];
            if dg <= 0.0 {
                break;
            }
            let step = g / dg;
            s -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        s.rem_euclid(2.0 * PI)
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        let s = self.nearest_param(x);
        let p = self.point(s);
        let nrm = self.normal(s);
        let r = [x[0] - p[0], x[1] - p[1]];
        let d = (r[0] * r[0] + r[1] * r[1]).sqrt();
        if r[0] * nrm[0] + r[1] * nrm[1] >= 0.0 {
            d
        } else {
            -d
        }
    }

    /// Radial function R(θ) about the centroid and its first two derivatives.
    pub fn radius_at(&self, theta: f64) -> [f64; 3] {
        [self.radial.eval(theta, 0), self.radial.eval(theta, 1), self.radial.eval(theta, 2)]
    }

    pub fn mean_radius(&self) -> f64 {
        self.mean_radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    Interval { a: f64, b: f64 },
    Disk { center: [f64; 2], radius: f64 },
    /// Ball of radius `radius` in ℝⁿ, used for radially symmetric data.
    Radial { dim: usize, radius: f64 },
    StarShaped(Box<StarCurve>),
}

/// Serializable description of a domain (for manifests and grid headers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainDescriptor {
    Interval { a: f64, b: f64, collar: f64 },
    Disk { center: [f64; 2], radius: f64, collar: f64 },
    Radial { dim: usize, radius: f64, collar: f64 },
    StarShaped { samples: usize, collar: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    collar: f64,
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(b > a) {
            return Err(Error::InvalidInput(format!("interval needs a < b, got ({a}, {b})")));
        }
        Self::with_default_collar(DomainKind::Interval { a, b })
    }

    pub fn disk(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput("disk radius must be positive".into()));
        }
        Self::with_default_collar(DomainKind::Disk { center, radius })
    }

    pub fn radial(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) {
            return Err(Error::InvalidInput("radial domain needs dim >= 1 and radius > 0".into()));
        }
        Self::with_default_collar(DomainKind::Radial { dim, radius })
    }

    pub fn star_shaped(curve: StarCurve) -> Result<Self> {
        Self::with_default_collar(DomainKind::StarShaped(Box::new(curve)))
    }

    fn with_default_collar(kind: DomainKind) -> Result<Self> {
        let mut d = Domain { kind, collar: 0.0 };
        let c = (0.2 * d.diameter()).min(d.max_injective_collar());
        d.collar = c;
        Ok(d)
    }

    /// Overrides the collar width; fails if the normal collar map is not
    /// injective at that width.
    pub fn with_collar(mut self, width: f64) -> Result<Self> {
        if !(width > 0.0) || !self.collar_is_injective(width) {
            return Err(Error::CollarTooWide { width });
        }
        self.collar = width;
        Ok(self)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn collar_width(&self) -> f64 {
        self.collar
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::Interval { .. } => 1,
            DomainKind::Disk { .. } | DomainKind::StarShaped(_) => 2,
            DomainKind::Radial { dim, .. } => *dim,
        }
    }

    pub fn descriptor(&self) -> DomainDescriptor {
        let collar = self.collar;
        match &self.kind {
            DomainKind::Interval { a, b } => DomainDescriptor::Interval { a: *a, b: *b, collar },
            DomainKind::Disk { center, radius } => DomainDescriptor::Disk { center: *center, radius: *radius, collar },
            DomainKind::Radial { dim, radius } => DomainDescriptor::Radial { dim: *dim, radius: *radius, collar },
            DomainKind::StarShaped(c) => DomainDescriptor::StarShaped { samples: c.samples.len(), collar },
        }
    }

    pub fn diameter(&self) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => b - a,
            DomainKind::Disk { radius, .. } | DomainKind::Radial { radius, .. } => 2.0 * radius,
            DomainKind::StarShaped(c) => {
                let mut m: f64 = 0.0;
                for p in &c.samples {
                    for q in &c.samples {
                        m = m.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                    }
                }
                m
            }
        }
    }

    /// Lebesgue measure of Ω₀.
    pub fn measure(&self) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => b - a,
            DomainKind::Disk { radius, .. } => PI * radius * radius,
            DomainKind::Radial { dim, radius } => {
                // volume of the n-ball via the recursion V_n = 2π/n V_{n-2} r^2
                let mut v = if dim % 2 == 0 { 1.0 } else { 2.0 * radius };
                let mut k = if dim % 2 == 0 { 2 } else { 3 };
                while k <= *dim {
                    v *= 2.0 * PI * radius * radius / k as f64;
                    k += 2;
                }
                v
            }
            DomainKind::StarShaped(c) => {
                let n = c.samples.len();
                (0..n)
                    .map(|i| {
                        let p = c.samples[i];
                        let q = c.samples[(i + 1) % n];
                        0.5 * (p[0] * q[1] - q[0] * p[1])
                    })
                    .sum()
            }
        }
    }

    /// Axis-aligned bounding box, as (min corner, max corner).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            DomainKind::Interval { a, b } => (vec![*a], vec![*b]),
            DomainKind::Disk { center, radius } => (
                vec![center[0] - radius, center[1] - radius],
                vec![center[0] + radius, center[1] + radius],
            ),
            DomainKind::Radial { dim, radius } => (vec![-radius; *dim], vec![*radius; *dim]),
            DomainKind::StarShaped(c) => {
                let mut lo = vec![f64::INFINITY; 2];
                let mut hi = vec![f64::NEG_INFINITY; 2];
                for p in &c.samples {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Signed distance to ∂Ω₀, negative inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => {
                let p = x[0];
                if p < *a {
                    a - p
                } else if p > *b {
                    p - b
                } else {
                    -(p - a).min(b - p)
                }
            }
            DomainKind::Disk { center, radius } => {
                ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt() - radius
            }
            DomainKind::Radial { radius, .. } => x.iter().map(|v| v * v).sum::<f64>().sqrt() - radius,
            DomainKind::StarShaped(c) => c.signed_distance(x),
        }
    }

    /// Unit vector pointing away from the nearest boundary point (the
    /// gradient of the signed distance within the collar).
    pub fn distance_gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            DomainKind::Interval { a, b } => {
                if (x[0] - a) <= (b - x[0]) {
                    vec![-1.0]
                } else {
                    vec![1.0]
                }
            }
            DomainKind::Disk { center, .. } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if r == 0.0 {
                    vec![1.0, 0.0]
                } else {
                    vec![d[0] / r, d[1] / r]
                }
            }
            DomainKind::Radial { dim, .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    let mut e = vec![0.0; *dim];
                    e[0] = 1.0;
                    e
                } else {
                    x.iter().map(|v| v / r).collect()
                }
            }
            DomainKind::StarShaped(c) => {
                let n = c.normal(c.nearest_param(x));
                vec![n[0], n[1]]
            }
        }
    }

    /// Outward unit normal at a boundary point.
    pub fn outward_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.signed_distance(x);
        let tol = 1e-8 * self.diameter().max(1.0);
        if d.abs() > tol {
            return Err(Error::NotOnBoundary { point: x.to_vec(), distance: d });
        }
        Ok(self.distance_gradient(x))
    }

    fn max_injective_collar(&self) -> f64 {
        match &self.kind {
            DomainKind::Interval { a, b } => 0.5 * (b - a),
            DomainKind::Disk { radius, .. } | DomainKind::Radial { radius, .. } => *radius,
            DomainKind::StarShaped(curve) => {
                // the curvature bound caps the collar; the global test usually passes just below it
                let n = 4 * curve.samples.len();
                let kmax = (0..n)
                    .map(|k| curve.curvature(2.0 * PI * k as f64 / n as f64))
                    .fold(0.0f64, f64::max);
                let mut hi = 0.5 * self.diameter();
                if kmax > 0.0 {
                    hi = hi.min(1.0 / kmax);
                }
                if self.collar_is_injective(0.99 * hi) {
                    return 0.99 * hi;
                }
                let mut lo = 0.0;
                for _ in 0..12 {
                    let mid = 0.5 * (lo + hi);
                    if self.collar_is_injective(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }

    /// Numerical injectivity test of the normal collar map at width `c`.
    pub fn collar_is_injective(&self, c: f64) -> bool {
        match &self.kind {
            DomainKind::Interval { a, b } => c <= 0.5 * (b - a),
            DomainKind::Disk { radius, .. } | DomainKind::Radial { radius, .. } => c < *radius,
            DomainKind::StarShaped(curve) => {
                let n = 2 * curve.samples.len();
                let tol = 1e-7 * self.diameter();
                for k in 0..n {
                    let s = 2.0 * PI * k as f64 / n as f64;
                    // local injectivity: 1 + Y κ > 0 for Y in (-c, 0]
                    if 1.0 - c * curve.curvature(s) <= 0.0 {
                        return false;
                    }
                    let p = curve.point(s);
                    let nrm = curve.normal(s);
                    for frac in [0.25, 0.5, 0.75, 1.0] {
                        let y = -c * frac;
                        let q = [p[0] + y * nrm[0], p[1] + y * nrm[1]];
                        if (curve.signed_distance(&q) - y).abs() > tol {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    /// Boundary-fitted charts covering the collar and a partition of unity
    /// subordinate to them (index 0 is the interior cutoff).
    pub fn build_charts(&self, count: usize) -> Result<(Vec<Chart>, PartitionOfUnity)> {
        if !self.collar_is_injective(self.collar) {
            return Err(Error::CollarTooWide { width: self.collar });
        }
        let charts: Vec<Chart> = match &self.kind {
            DomainKind::Interval { a, b } => {
                if count != 2 {
                    return Err(Error::InvalidInput("an interval has exactly two boundary charts".into()));
                }
                vec![
                    Chart { index: 1, kind: ChartKind::IntervalEnd { endpoint: *a, inward: 1.0 }, collar: 0.0 },
                    Chart { index: 2, kind: ChartKind::IntervalEnd { endpoint: *b, inward: -1.0 }, collar: 0.0 },
                ]
            }
            DomainKind::Disk { center, radius } => {
                if count < 2 {
                    return Err(Error::InvalidInput("a disk needs at least two boundary charts".into()));
                }
                let half = 1.5 * PI / count as f64;
                (0..count)
                    .map(|l| Chart {
                        index: l + 1,
                        kind: ChartKind::Arc {
                            center: *center,
                            radius: *radius,
                            theta0: 2.0 * PI * l as f64 / count as f64,
                            half_width: half,
                        },
                        collar: 0.0,
                    })
                    .collect()
            }
            DomainKind::StarShaped(curve) => {
                if count < 2 {
                    return Err(Error::InvalidInput("a closed curve needs at least two boundary charts".into()));
                }
                let half = 1.5 * PI / count as f64;
                (0..count)
                    .map(|l| Chart {
                        index: l + 1,
                        kind: ChartKind::CurveArc {
                            curve: (**curve).clone(),
                            s0: 2.0 * PI * l as f64 / count as f64,
                            half_width: half,
                        },
                        collar: 0.0,
                    })
                    .collect()
            }
            DomainKind::Radial { .. } => {
                return Err(Error::InvalidInput("charts are not built for radial n-D domains".into()))
            }
        };
        let charts: Vec<Chart> = charts.into_iter().map(|mut c| {
            c.collar = self.collar;
            c
        }).collect();
        let pou = PartitionOfUnity { domain: self.clone(), charts: charts.clone() };
        Ok((charts, pou))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChartKind {
    /// Endpoint of an interval; `inward` is +1 at the left end, −1 at the right.
    IntervalEnd { endpoint: f64, inward: f64 },
    Arc { center: [f64; 2], radius: f64, theta0: f64, half_width: f64 },
    CurveArc { curve: StarCurve, s0: f64, half_width: f64 },
}

/// One boundary chart Φ_λ: collar patch → Q_{n−1} × (−c0, 0].
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub index: usize,
    pub kind: ChartKind,
    collar: f64,
}

impl Chart {
    pub fn collar_width(&self) -> f64 {
        self.collar
    }

    /// Chart coordinates `(X, Y)`; `X` is empty in 1D.
    pub fn to_chart(&self, x: &[f64]) -> (Vec<f64>, f64) {
        match &self.kind {
            ChartKind::IntervalEnd { endpoint, inward } => (vec![], -inward * (x[0] - endpoint)),
            ChartKind::Arc { center, radius, theta0, half_width } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let th = d[1].atan2(d[0]);
                (vec![wrap_angle(th - theta0) / half_width], r - radius)
            }
            ChartKind::CurveArc { curve, s0, half_width } => {
                let s = curve.nearest_param(x);
                (vec![wrap_angle(s - s0) / half_width], curve.signed_distance(x))
            }
        }
    }

    pub fn from_chart(&self, xc: &[f64], y: f64) -> Vec<f64> {
        match &self.kind {
            ChartKind::IntervalEnd { endpoint, inward } => vec![endpoint - inward * y],
            ChartKind::Arc { center, radius, theta0, half_width } => {
                let th = theta0 + half_width * xc[0];
                vec![center[0] + (radius + y) * th.cos(), center[1] + (radius + y) * th.sin()]
            }
            ChartKind::CurveArc { curve, s0, half_width } => {
                let s = s0 + half_width * xc[0];
                let p = curve.point(s);
                let n = curve.normal(s);
                vec![p[0] + y * n[0], p[1] + y * n[1]]
            }
        }
    }

    /// Whether `x` lies in the chart patch (|X| < 1, −c0 < Y ≤ 0).
    pub fn contains(&self, x: &[f64]) -> bool {
        let (xc, y) = self.to_chart(x);
        let tol = 1e-12 * (1.0 + self.collar);
        y > -self.collar && y <= tol && xc.iter().all(|v| v.abs() < 1.0)
    }

    /// Unit vector ∂x/∂Y at `x` (the outward normal of the nearest
    /// boundary point).
    pub fn normal_direction(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            ChartKind::IntervalEnd { inward, .. } => vec![-inward],
            ChartKind::Arc { center, .. } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt().max(f64::MIN_POSITIVE);
                vec![d[0] / r, d[1] / r]
            }
            ChartKind::CurveArc { curve, .. } => {
                let n = curve.normal(curve.nearest_param(x));
                vec![n[0], n[1]]
            }
        }
    }

    /// Tangential weight used by the partition of unity (depends on X only).
    fn tangential_bump(&self, x: &[f64]) -> f64 {
        let (xc, _) = self.to_chart(x);
        xc.iter().map(|v| bump(*v)).product()
    }

    /// Columns ∂x/∂X (1D: none) and ∂x/∂Y, and ∂²x/∂X² at chart point.
    pub fn jacobian(&self, xc: &[f64], y: f64) -> ChartJacobian {
        match &self.kind {
            ChartKind::IntervalEnd { inward, .. } => ChartJacobian { d_x: None, d_y: vec![-inward], d_xx: None },
            ChartKind::Arc { radius, theta0, half_width, .. } => {
                let th = theta0 + half_width * xc[0];
                let (s, c) = th.sin_cos();
                let rr = radius + y;
                ChartJacobian {
                    d_x: Some(vec![-rr * half_width * s, rr * half_width * c]),
                    d_y: vec![c, s],
                    d_xx: Some(vec![-rr * half_width * half_width * c, -rr * half_width * half_width * s]),
                }
            }
            ChartKind::CurveArc { curve, s0, half_width } => {
                let s = s0 + half_width * xc[0];
                let t = curve.tangent(s);
                let a = curve.second(s);
                let n = curve.normal(s);
                let k = curve.curvature(s);
                // n'(s) = -κ t (unit-speed corrected by |γ'|)
                let nd = [-k * t[0], -k * t[1]];
                let l = (t[0] * t[0] + t[1] * t[1]).sqrt();
                let h = 1e-5;
                let ndd = {
                    let np = curve.normal(s + h);
                    let nm = curve.normal(s - h);
                    [(np[0] - 2.0 * n[0] + nm[0]) / (h * h), (np[1] - 2.0 * n[1] + nm[1]) / (h * h)]
                };
                let _ = l;
                ChartJacobian {
                    d_x: Some(vec![half_width * (t[0] + y * nd[0]), half_width * (t[1] + y * nd[1])]),
                    d_y: vec![n[0], n[1]],
                    d_xx: Some(vec![
                        half_width * half_width * (a[0] + y * ndd[0]),
                        half_width * half_width * (a[1] + y * ndd[1]),
                    ]),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartJacobian {
    pub d_x: Option<Vec<f64>>,
    pub d_y: Vec<f64>,
    pub d_xx: Option<Vec<f64>>,
}

/// Smooth compactly supported bump on (−1, 1).
fn bump(v: f64) -> f64 {
    if v.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - v * v)).exp()
    }
}

/// C^∞ step: 0 for s ≤ 0, 1 for s ≥ 1.
pub fn smooth_step(s: f64) -> f64 {
    let f = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
    let a = f(s);
    let b = f(1.0 - s);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Partition of unity {ξ_λ}: ξ₀ is supported in Ω_{c0/2} ⊂ U₀ = Ω_{c0/4};
/// boundary cutoffs equal χ(dist)·ψ_λ(X) with χ ≡ 1 for dist ≤ c0/2.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    domain: Domain,
    charts: Vec<Chart>,
}

impl PartitionOfUnity {
    /// Collar profile χ as a function of distance to the boundary.
    pub fn collar_profile(&self, dist: f64) -> f64 {
        let c0 = self.domain.collar;
        1.0 - smooth_step((dist - 0.5 * c0) / (0.25 * c0))
    }

    /// Cutoff values `[ξ₀, ξ₁, …, ξ_K]` at `x`.
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        let dist = -self.domain.signed_distance(x);
        let chi = self.collar_profile(dist.max(0.0));
        let mut out = Vec::with_capacity(self.charts.len() + 1);
        out.push(1.0 - chi);
        if self.charts.len() == 2 && matches!(self.charts[0].kind, ChartKind::IntervalEnd { .. }) {
            // 1D: one chart per endpoint, collars disjoint
            let left = x[0] - self.charts[0].from_chart(&[], 0.0)[0] <= self.charts[1].from_chart(&[], 0.0)[0] - x[0];
            out.push(if left { chi } else { 0.0 });
            out.push(if left { 0.0 } else { chi });
            return out;
        }
        let bumps: Vec<f64> = self.charts.iter().map(|c| c.tangential_bump(x)).collect();
        let total: f64 = bumps.iter().sum();
        for b in bumps {
            out.push(if total > 0.0 { chi * b / total } else { 0.0 });
        }
        out
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
}

//! Radial curvature profiles and the warping function `h` solving
//! `h'' + K h = 0, h(0) = 0, h'(0) = 1`.
//!
//! Constant profiles `K = b^2` use the closed forms `h(t) = t` and
//! `h(t) = sin(bt)/b`. Everything else goes through a fixed-step RK4 table
//! with cubic Hermite evaluation between nodes.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::error::{LabError, Result};

/// Radial curvature bound `K(r)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CurvatureProfile {
    Constant { b_squared: f64 },
    /// Piecewise-linear samples `(r, K)`. `signed` profiles may go negative
    /// and are only usable as ambient metric warps, never as comparison bounds.
    Tabulated { samples: Vec<(f64, f64)>, signed: bool },
}

impl CurvatureProfile {
    pub fn constant(b_squared: f64) -> Result<Self> {
        if !(b_squared >= 0.0) || !b_squared.is_finite() {
            return Err(LabError::InvalidArgument(format!(
                "curvature b^2 must be a finite nonnegative number, got {b_squared}"
            )));
        }
        Ok(CurvatureProfile::Constant { b_squared })
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        Self::check_radii(&samples)?;
        if let Some(&(r, v)) = samples.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(LabError::InvalidArgument(format!(
                "curvature profile must be nonnegative, got K({r}) = {v}"
            )));
        }
        Ok(CurvatureProfile::Tabulated { samples, signed: false })
    }

    /// Tabulated profile allowed to take negative values (e.g. hyperbolic
    /// space with `K = -1`). Only admissible as the ambient metric.
    pub fn tabulated_signed(samples: Vec<(f64, f64)>) -> Result<Self> {
        Self::check_radii(&samples)?;
        if samples.iter().any(|(_, v)| !v.is_finite()) {
            return Err(LabError::InvalidArgument("non-finite curvature sample".into()));
        }
        Ok(CurvatureProfile::Tabulated { samples, signed: true })
    }

    fn check_radii(samples: &[(f64, f64)]) -> Result<()> {
        if samples.len() < 2 {
            return Err(LabError::InvalidArgument(
                "tabulated profile needs at least two samples".into(),
            ));
        }
        if samples[0].0 != 0.0 {
            return Err(LabError::InvalidArgument(format!(
                "tabulated profile must start at r = 0, starts at {}",
                samples[0].0
            )));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(LabError::InvalidArgument(format!(
                    "tabulated radii must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(())
    }

    /// Parse the two-column `r value` text format (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let samples = parse_two_columns(text)?;
        if samples.iter().any(|(_, v)| *v < 0.0) {
            Self::tabulated_signed(samples)
        } else {
            Self::tabulated(samples)
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            CurvatureProfile::Constant { b_squared } => *b_squared,
            CurvatureProfile::Tabulated { samples, .. } => {
                let last = samples.len() - 1;
                if r <= 0.0 {
                    return samples[0].1;
                }
                if r >= samples[last].0 {
                    return samples[last].1;
                }
                let i = samples.partition_point(|(x, _)| *x <= r) - 1;
                let (r0, v0) = samples[i];
                let (r1, v1) = samples[i + 1];
                v0 + (v1 - v0) * (r - r0) / (r1 - r0)
            }
        }
    }

    /// Largest radius covered by the profile.
    pub fn coverage(&self) -> f64 {
        match self {
            CurvatureProfile::Constant { .. } => f64::INFINITY,
            CurvatureProfile::Tabulated { samples, .. } => samples[samples.len() - 1].0,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            CurvatureProfile::Constant { .. } => true,
            CurvatureProfile::Tabulated { samples, .. } => samples.iter().all(|(_, v)| *v >= 0.0),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            CurvatureProfile::Constant { b_squared } => *b_squared,
            CurvatureProfile::Tabulated { samples, .. } => {
                samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Pointwise `max(K, 0)`; a valid comparison bound for any profile.
    pub fn clamped_nonnegative(&self) -> Self {
        match self {
            CurvatureProfile::Constant { b_squared } => CurvatureProfile::Constant { b_squared: *b_squared },
            CurvatureProfile::Tabulated { samples, .. } => CurvatureProfile::Tabulated {
                samples: samples.iter().map(|&(r, v)| (r, v.max(0.0))).collect(),
                signed: false,
            },
        }
    }
}

pub(crate) fn parse_two_columns(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(LabError::Parse(format!(
                "line {}: expected two columns, found {}",
                lineno + 1,
                cols.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| LabError::Parse(format!("line {}: {e}", lineno + 1)))
        };
        out.push((parse(cols[0])?, parse(cols[1])?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WarpRepresentation {
    AnalyticEuclidean,
    AnalyticSphere { b: f64 },
    OdeTable { step: f64 },
}

#[derive(Debug, Clone)]
struct OdeTable {
    step: f64,
    h: Vec<f64>,
    hp: Vec<f64>,
    hpp: Vec<f64>,
}

/// Solution of the warping Cauchy problem together with `r̄₀` (end of the
/// increasing branch) and `s̄₀ = h(r̄₀)`.
#[derive(Debug, Clone)]
pub struct WarpingFunction {
    profile: CurvatureProfile,
    representation: WarpRepresentation,
    r_bar0: f64,
    s_bar0: f64,
    domain_end: f64,
    table: Option<OdeTable>,
    error_estimate: f64,
}

/// Solve for `h` on `[0, r_max]`. Constant profiles bypass the ODE.
pub fn solve_warping(profile: CurvatureProfile, r_max: f64, step: f64) -> Result<WarpingFunction> {
    check_grid(r_max, step)?;
    match profile {
        CurvatureProfile::Constant { b_squared } => Ok(WarpingFunction::analytic(b_squared)),
        _ => WarpingFunction::ode(profile, r_max, step),
    }
}

fn check_grid(r_max: f64, step: f64) -> Result<()> {
    if !(r_max > 0.0) || !r_max.is_finite() {
        return Err(LabError::InvalidArgument(format!("r_max must be positive, got {r_max}")));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(LabError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    Ok(())
}

fn rk4_step(profile: &CurvatureProfile, r: f64, h: f64, hp: f64, dt: f64) -> (f64, f64) {
    let f = |r: f64, y0: f64, y1: f64| (y1, -profile.value(r) * y0);
    let (k1a, k1b) = f(r, h, hp);
    let (k2a, k2b) = f(r + 0.5 * dt, h + 0.5 * dt * k1a, hp + 0.5 * dt * k1b);
    let (k3a, k3b) = f(r + 0.5 * dt, h + 0.5 * dt * k2a, hp + 0.5 * dt * k2b);
    let (k4a, k4b) = f(r + dt, h + dt * k3a, hp + dt * k3b);
    (
        h + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
        hp + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
    )
}

fn integrate(profile: &CurvatureProfile, n: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let mut h = Vec::with_capacity(n + 1);
    let mut hp = Vec::with_capacity(n + 1);
    h.push(0.0);
    hp.push(1.0);
    for i in 0..n {
        let (a, b) = rk4_step(profile, i as f64 * dt, h[i], hp[i], dt);
        h.push(a);
        hp.push(b);
    }
    (h, hp)
}

fn hermite(x0: f64, dt: f64, f0: f64, d0: f64, f1: f64, d1: f64, x: f64) -> f64 {
    let s = ((x - x0) / dt).clamp(0.0, 1.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * f0 + h10 * dt * d0 + h01 * f1 + h11 * dt * d1
}

impl WarpingFunction {
    /// Closed form for `K = b^2`.
    pub fn analytic(b_squared: f64) -> Self {
        let profile = CurvatureProfile::Constant { b_squared };
        if b_squared == 0.0 {
            WarpingFunction {
                profile,
                representation: WarpRepresentation::AnalyticEuclidean,
                r_bar0: f64::INFINITY,
                s_bar0: f64::INFINITY,
                domain_end: f64::INFINITY,
                table: None,
                error_estimate: 0.0,
            }
        } else {
            let b = b_squared.sqrt();
            WarpingFunction {
                profile,
                representation: WarpRepresentation::AnalyticSphere { b },
                r_bar0: FRAC_PI_2 / b,
                s_bar0: 1.0 / b,
                domain_end: f64::INFINITY,
                table: None,
                error_estimate: 0.0,
            }
        }
    }

    /// `h(t) = t`.
    pub fn euclidean() -> Self {
        Self::analytic(0.0)
    }

    /// Integrate the Cauchy problem numerically, whatever the profile kind.
    pub fn ode(profile: CurvatureProfile, r_max: f64, step: f64) -> Result<Self> {
        check_grid(r_max, step)?;
        if profile.coverage() < r_max {
            return Err(LabError::DomainTooShort(format!(
                "profile covers [0, {}] but r_max = {r_max}",
                profile.coverage()
            )));
        }
        let n = (r_max / step).ceil().max(1.0) as usize;
        let dt = r_max / n as f64;
        let (h, hp) = integrate(&profile, n, dt);
        // Richardson estimate from a half-step run at the shared nodes.
        let (hf, hpf) = integrate(&profile, 2 * n, 0.5 * dt);
        let error_estimate = (0..=n)
            .map(|i| (h[i] - hf[2 * i]).abs().max((hp[i] - hpf[2 * i]).abs()))
            .fold(0.0, f64::max)
            / 15.0;
        let hpp: Vec<f64> = (0..=n).map(|i| -profile.value(i as f64 * dt) * h[i]).collect();

        let mut r_bar0 = f64::INFINITY;
        let mut s_bar0 = f64::INFINITY;
        if let Some(i) = (0..n).find(|&i| hp[i] > 0.0 && hp[i + 1] <= 0.0) {
            // h' is monotone on the branch: bisect on a partial RK4 step.
            let (mut lo, mut hi) = (0.0, dt);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                let (_, d) = rk4_step(&profile, i as f64 * dt, h[i], hp[i], mid);
                if d > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let delta = 0.5 * (lo + hi);
            r_bar0 = i as f64 * dt + delta;
            s_bar0 = rk4_step(&profile, i as f64 * dt, h[i], hp[i], delta).0;
        }
        Ok(WarpingFunction {
            profile,
            representation: WarpRepresentation::OdeTable { step: dt },
            r_bar0,
            s_bar0,
            domain_end: r_max,
            table: Some(OdeTable { step: dt, h, hp, hpp }),
            error_estimate,
        })
    }

    pub fn profile(&self) -> &CurvatureProfile {
        &self.profile
    }

    pub fn representation(&self) -> WarpRepresentation {
        self.representation
    }

    pub fn r_bar0(&self) -> f64 {
        self.r_bar0
    }

    pub fn s_bar0(&self) -> f64 {
        self.s_bar0
    }

    /// Largest radius where `h` is defined (infinite for closed forms).
    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    /// Richardson estimate of the ODE global error (zero for closed forms).
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    /// Admissible as a comparison bound (profile nonnegative).
    pub fn is_comparison_admissible(&self) -> bool {
        self.profile.is_nonnegative()
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.representation, WarpRepresentation::AnalyticEuclidean)
    }

    fn locate(&self, t: &OdeTable, r: f64) -> usize {
        let n = t.h.len() - 1;
        ((r / t.step).floor().max(0.0) as usize).min(n - 1)
    }

    pub fn h(&self, r: f64) -> f64 {
        match (&self.representation, &self.table) {
            (WarpRepresentation::AnalyticEuclidean, _) => r,
            (WarpRepresentation::AnalyticSphere { b }, _) => (b * r).sin() / b,
            (_, Some(t)) => {
                let i = self.locate(t, r);
                let x0 = i as f64 * t.step;
                hermite(x0, t.step, t.h[i], t.hp[i], t.h[i + 1], t.hp[i + 1], r)
            }
            _ => unreachable!("ode representation without table"),
        }
    }

    pub fn h_prime(&self, r: f64) -> f64 {
        match (&self.representation, &self.table) {
            (WarpRepresentation::AnalyticEuclidean, _) => 1.0,
            (WarpRepresentation::AnalyticSphere { b }, _) => (b * r).cos(),
            (_, Some(t)) => {
                let i = self.locate(t, r);
                let x0 = i as f64 * t.step;
                hermite(x0, t.step, t.hp[i], t.hpp[i], t.hp[i + 1], t.hpp[i + 1], r)
            }
            _ => unreachable!("ode representation without table"),
        }
    }

    pub fn h_second(&self, r: f64) -> f64 {
        -self.profile.value(r) * self.h(r)
    }

    /// First positive zero of `h` inside the domain, if any. For the round
    /// sphere model this is the antipodal radius `π/b`.
    pub fn first_zero(&self) -> f64 {
        match (&self.representation, &self.table) {
            (WarpRepresentation::AnalyticEuclidean, _) => f64::INFINITY,
            (WarpRepresentation::AnalyticSphere { b }, _) => std::f64::consts::PI / b,
            (_, Some(t)) => (1..t.h.len())
                .find(|&i| t.h[i] <= 0.0)
                .map(|i| i as f64 * t.step)
                .unwrap_or(f64::INFINITY),
            _ => unreachable!(),
        }
    }

    /// Inverse of `h` on the increasing branch `(0, r̄₀)`.
    pub fn h_inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(LabError::InvalidArgument(format!("h_inverse needs y > 0, got {y}")));
        }
        if y >= self.s_bar0 {
            return Err(LabError::OutOfRange(format!(
                "y = {y} is not below s̄₀ = {}",
                self.s_bar0
            )));
        }
        match self.representation {
            WarpRepresentation::AnalyticEuclidean => Ok(y),
            WarpRepresentation::AnalyticSphere { b } => Ok((y * b).asin() / b),
            WarpRepresentation::OdeTable { .. } => {
                let mut hi = self.r_bar0.min(self.domain_end);
                if self.h(hi) < y {
                    return Err(LabError::OutOfRange(format!(
                        "y = {y} exceeds h on the tabulated domain (max {})",
                        self.h(hi)
                    )));
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.h(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi.max(1.0) {
                        break;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

/// Free-function form of [`WarpingFunction::h_inverse`].
pub fn h_inverse(w: &WarpingFunction, y: f64) -> Result<f64> {
    w.h_inverse(y)
}

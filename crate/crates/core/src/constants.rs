//! Explicit constants and exponent algebra: `𝒜_p`, `ℬ_p`, the
//! Hoffman–Spruck constant, the weighted constants `Γ, Φ, Δ`, the
//! interpolation constants `Λ, C`, and the balance-condition closures.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{LabError, Result};

/// Identities in the balance algebra are checked to this absolute tolerance.
pub const BALANCE_TOL: f64 = 1e-12;

/// `𝒜_p = max{1, 2^{(p-2)/2}}`.
pub fn a_p(p: f64) -> f64 {
    1f64.max(2f64.powf((p - 2.0) / 2.0))
}

/// `ℬ_p = max{1, 2^{(2-p)/2}}`.
pub fn b_p(p: f64) -> f64 {
    1f64.max(2f64.powf((2.0 - p) / 2.0))
}

/// The two sides of `min{1, 2^{(p-2)/2}}(a^p + b^p) ≤ (a² + b²)^{p/2} ≤ 𝒜_p (a^p + b^p)`.
pub fn power_split_bounds(p: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidArgument(format!("power split needs p >= 1, got {p}")));
    }
    if !(a >= 0.0 && b >= 0.0) {
        return Err(LabError::InvalidArgument("power split needs a, b >= 0".into()));
    }
    let sum = a.powf(p) + b.powf(p);
    let lo = 1f64.min(2f64.powf((p - 2.0) / 2.0));
    Ok((lo * sum, a_p(p) * sum))
}

/// `Γ(x)` for positive integers and half-integers.
fn gamma_half_integer(x: f64) -> f64 {
    let twice = (2.0 * x).round() as i64;
    debug_assert!((2.0 * x - twice as f64).abs() < 1e-12 && twice > 0);
    if twice % 2 == 0 {
        (1..twice / 2).map(|i| i as f64).product()
    } else {
        // Γ(n + 1/2) = (2n)! √π / (4^n n!)
        let n = (twice - 1) / 2;
        (1..=n).map(|i| (2 * i - 1) as f64 / 2.0).product::<f64>() * PI.sqrt()
    }
}

/// Volume of the unit ball in `ℝ^k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    let kf = k as f64;
    PI.powf(kf / 2.0) / gamma_half_integer(kf / 2.0 + 1.0)
}

pub fn sobolev_exponent(k: usize, p: f64) -> Result<f64> {
    let kf = k as f64;
    if !(p >= 1.0 && p < kf) {
        return Err(LabError::InvalidExponent(format!("p* needs 1 <= p < k, got p = {p}, k = {k}")));
    }
    Ok(kf * p / (kf - p))
}

fn check_sobolev_range(k: usize, p: f64) -> Result<()> {
    if k < 2 {
        return Err(LabError::InvalidArgument(format!("Hoffman-Spruck constant needs k >= 2, got {k}")));
    }
    if !(p >= 1.0 && p < k as f64) {
        return Err(LabError::InvalidArgument(format!("Hoffman-Spruck constant needs 1 <= p < k, got p = {p}")));
    }
    Ok(())
}

/// `S_{k,p,z}`; `flat` replaces the leading `π/2` by 1 (ambient curvature bound `b = 0`).
pub fn hoffman_spruck_constant(k: usize, p: f64, z: f64, flat: bool) -> Result<f64> {
    check_sobolev_range(k, p)?;
    if !(z > 0.0 && z < 1.0) {
        return Err(LabError::InvalidArgument(format!("z must lie in (0, 1), got {z}")));
    }
    let kf = k as f64;
    let lead = if flat { 0.0 } else { (PI / 2.0).ln() };
    let log = lead + kf * 2f64.ln() + kf.ln() - z.ln() - (kf - 1.0).ln()
        + (-(unit_ball_volume(k).ln()) - (1.0 - z).ln()) / kf
        + (p - 1.0) * 2f64.ln()
        + p * (p * (kf - 1.0) / (kf - p)).ln();
    Ok(log.exp())
}

/// `S_{k,p} = min_z S_{k,p,z}`, attained at `z = k/(k+1)`.
pub fn sobolev_constant(k: usize, p: f64, flat: bool) -> Result<f64> {
    let kf = k as f64;
    hoffman_spruck_constant(k, p, kf / (kf + 1.0), flat)
}

/// Golden-section minimiser on `[lo, hi]` for a unimodal function.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv * (hi - lo);
    let mut d = lo + inv * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Numerical argmin of `z ↦ S_{k,p,z}` on `(0, 1)`.
pub fn argmin_hoffman_spruck(k: usize, p: f64) -> Result<f64> {
    check_sobolev_range(k, p)?;
    Ok(golden_section(|z| hoffman_spruck_constant(k, p, z, true).unwrap_or(f64::INFINITY), 1e-9, 1.0 - 1e-9, 1e-12))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedConstants {
    pub a_kpa: f64,
    pub b_kpa: f64,
    pub eps0: f64,
    pub gamma: f64,
    pub phi: f64,
    pub delta: f64,
}

fn check_weighted(k: usize, p: f64, alpha: f64, hp0: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p must be >= 1, got {p}")));
    }
    if !(hp0 > 0.0 && hp0 <= 1.0) {
        return Err(LabError::InvalidArgument(format!("h'(r0) must lie in (0, 1], got {hp0}")));
    }
    let gamma = p * (alpha + 1.0);
    if !(gamma < k as f64) {
        return Err(LabError::ConstantUndefined(format!(
            "p(alpha + 1) = {gamma} must be below k = {k}"
        )));
    }
    Ok(gamma)
}

/// `A_{k,p,α} = 𝒜_p h'(r₀)^{1-p} p^p / (k - γ)^p` with `γ = p(α+1)`.
fn a_kpa(k: usize, p: f64, gamma: f64, hp0: f64) -> f64 {
    a_p(p) * hp0.powf(1.0 - p) * (p / (k as f64 - gamma)).powf(p)
}

/// `C_{k,p,α,ε}`, minimised over `ε` to give `Γ_{k,p,α}`.
pub fn k_of_eps(k: usize, p: f64, alpha: f64, hp0: f64, eps: f64) -> Result<f64> {
    let gamma = check_weighted(k, p, alpha, hp0)?;
    let al = alpha.abs();
    let big_a = a_kpa(k, p, gamma, hp0);
    Ok(a_p(p) * (al + eps * eps).powf(p / 2.0) * (al.powf(p / 2.0) * b_p(p) * big_a + eps.powf(-p)))
}

pub fn weighted_constants(k: usize, p: f64, alpha: f64, hp0: f64) -> Result<WeightedConstants> {
    let gamma = check_weighted(k, p, alpha, hp0)?;
    let kf = k as f64;
    let al = alpha.abs();
    let big_a = a_kpa(k, p, gamma, hp0);
    let b = gamma * p / (kf - gamma);
    let eps0 = if al == 0.0 { 1.0 } else { (al.powf((p - 2.0) / 2.0) * b_p(p) * big_a).powf(-1.0 / (p + 2.0)) };
    let ratio = p / (kf - gamma);
    let e = 2.0 * p / (2.0 + p);
    let two = (p - 2.0).abs();
    let gamma_c = hp0.powf(1.0 - p)
        * a_p(p)
        * (hp0.powf(2.0 * (p - 1.0) / (p + 2.0)) + al.powf(e) * 2f64.powf(two / (p + 2.0)) * ratio.powf(e))
            .powf((p + 2.0) / 2.0);
    let inner = (al.powf(e) + 2f64.powf(-two / (p + 2.0)) * hp0.powf(2.0 * (p - 1.0) / (p + 2.0)) * ratio.powf(-e))
        .powf(p / 2.0)
        * al.powf(e);
    Ok(WeightedConstants {
        a_kpa: big_a,
        b_kpa: b,
        eps0,
        gamma: gamma_c,
        phi: 2f64.powf(two / 2.0) * b * inner,
        delta: a_p(p) * inner,
    })
}

/// First display form of `Γ_{k,p,α}`, used to cross-check the factored one.
pub fn gamma_first_form(k: usize, p: f64, alpha: f64, hp0: f64) -> Result<f64> {
    let gamma = check_weighted(k, p, alpha, hp0)?;
    let e = 2.0 * p / (2.0 + p);
    let ratio = p / (k as f64 - gamma);
    Ok(a_p(p)
        * (1.0
            + alpha.abs().powf(e)
                * 2f64.powf((p - 2.0).abs() / (p + 2.0))
                * hp0.powf(2.0 * (1.0 - p) / (2.0 + p))
                * ratio.powf(e))
        .powf((p + 2.0) / 2.0))
}

/// Hardy constant `Λ = 𝒜_p p^p h'(r₀)^{-p} / (k - p(α+1))^p`.
pub fn hardy_lambda(k: usize, p: f64, alpha: f64, hp0: f64) -> Result<f64> {
    let gamma = check_weighted(k, p, alpha, hp0)?;
    Ok(a_p(p) * (p / (k as f64 - gamma)).powf(p) * hp0.powf(-p))
}

/// Exponent tuple of the Caffarelli–Kohn–Nirenberg inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterSet {
    pub k: usize,
    pub p: f64,
    pub q: f64,
    pub t: f64,
    pub p_star: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub a: f64,
    pub b_interp: f64,
    pub c: f64,
    pub theta: f64,
    pub s: f64,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= BALANCE_TOL * (1.0 + a.abs().max(b.abs()))
}

impl ParameterSet {
    /// Check every invariant; the error names the first one violated.
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(LabError::InconsistentParameters(format!("{what} violated for {self:?}")));
        let kf = self.k as f64;
        if self.k < 1 || !(self.p >= 1.0 && self.p < kf) {
            return fail("1 <= p < k");
        }
        if !(self.q > 0.0 && self.t > 0.0 && self.s > 0.0) {
            return fail("q, t, s > 0");
        }
        if !close(self.p_star, kf * self.p / (kf - self.p)) {
            return fail("p* = kp/(k-p)");
        }
        if !(self.alpha < (kf - self.p) / self.p) {
            return fail("alpha < (k-p)/p");
        }
        for (name, v) in [("a", self.a), ("b", self.b_interp), ("c", self.c), ("theta", self.theta)] {
            if !(-BALANCE_TOL..=1.0 + BALANCE_TOL).contains(&v) {
                return fail(&format!("{name} in [0, 1]"));
            }
        }
        if !(self.alpha - BALANCE_TOL <= self.sigma && self.sigma <= self.alpha + 1.0 + BALANCE_TOL) {
            return fail("alpha <= sigma <= alpha + 1");
        }
        if !close(self.gamma, self.a * self.sigma + (1.0 - self.a) * self.beta) {
            return fail("gamma = a sigma + (1-a) beta");
        }
        let lhs = 1.0 / self.t - self.gamma / kf;
        let rhs = self.a * (1.0 / self.p - (self.alpha + 1.0) / kf) + (1.0 - self.a) * (1.0 / self.q - self.beta / kf);
        if !close(lhs, rhs) {
            return fail("balance 1/t - gamma/k = a(1/p - (alpha+1)/k) + (1-a)(1/q - beta/k)");
        }
        if !close(1.0 / self.s, 1.0 / self.p - ((self.alpha + 1.0) - self.sigma) / kf)
            || !close(1.0 / self.s, 1.0 / self.p_star + (self.sigma - self.alpha) / kf)
        {
            return fail("1/s = 1/p - ((alpha+1) - sigma)/k");
        }
        if !close(self.s, (1.0 - self.c) * self.p + self.c * self.p_star) {
            return fail("s = (1-c)p + c p*");
        }
        if !close(1.0 / self.t, self.a / self.s + (1.0 - self.a) / self.q) {
            return fail("1/t = a/s + (1-a)/q");
        }
        let den = self.a * self.q + (1.0 - self.a) * self.s;
        if !close(self.b_interp, self.a * self.q / den) {
            return fail("b = aq/(aq + (1-a)s)");
        }
        if !close((1.0 - self.b_interp) * self.a * self.q, (1.0 - self.a) * self.b_interp * self.s) {
            return fail("(1-b)aq = (1-a)bs");
        }
        if !close(self.gamma * self.t, self.b_interp * self.s * self.sigma + (1.0 - self.b_interp) * self.q * self.beta) {
            return fail("gamma t = b s sigma + (1-b) q beta");
        }
        if !close(self.theta * (1.0 - self.c) * self.p, (1.0 - self.theta) * self.c * self.p_star) {
            return fail("theta(1-c)p = (1-theta)c p*");
        }
        Ok(())
    }

    /// Residuals of the interpolation identities, for auditing.
    pub fn identity_residuals(&self) -> [f64; 4] {
        let den = self.a * self.q + (1.0 - self.a) * self.s;
        [
            (1.0 / self.t - (self.a / self.s + (1.0 - self.a) / self.q)).abs(),
            (self.b_interp - self.a * self.q / den).abs(),
            ((1.0 - self.b_interp) * self.a * self.q - (1.0 - self.a) * self.b_interp * self.s).abs(),
            (self.gamma * self.t - (self.b_interp * self.s * self.sigma + (1.0 - self.b_interp) * self.q * self.beta))
                .abs(),
        ]
    }
}

/// Partially specified parameters; `solve_balance` fills the rest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct BalanceInput {
    pub k: Option<usize>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub t: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub a: Option<f64>,
}

/// `s`, `c`, `θ` from `(k, p, α, σ)`.
fn interpolation_exponents(k: usize, p: f64, alpha: f64, sigma: f64) -> Result<(f64, f64, f64, f64)> {
    let kf = k as f64;
    let p_star = sobolev_exponent(k, p)?;
    if !(alpha < (kf - p) / p) {
        return Err(LabError::InfeasibleParameters(format!("alpha = {alpha} must be below (k-p)/p")));
    }
    if !(alpha <= sigma && sigma <= alpha + 1.0) {
        return Err(LabError::InfeasibleParameters(format!("sigma = {sigma} must lie in [alpha, alpha + 1]")));
    }
    let theta = alpha + 1.0 - sigma;
    let s = kf * p / (kf - p * theta);
    let c = theta * (kf - p) / (kf - theta * p);
    Ok((p_star, s, c, theta))
}

pub fn solve_balance(input: &BalanceInput) -> Result<ParameterSet> {
    let BalanceInput { k, p, q, t, alpha, beta, gamma, sigma, a } = *input;
    let (Some(k), Some(p)) = (k, p) else {
        return Err(LabError::ClosureUnsupported("k and p are always required".into()));
    };
    let pattern =
        (q.is_some(), t.is_some(), alpha.is_some(), beta.is_some(), gamma.is_some(), sigma.is_some(), a.is_some());
    if let (Some(q), false) = (q, q > Some(0.0)) {
        return Err(LabError::InfeasibleParameters(format!("q = {q} must be positive")));
    }
    let set = match pattern {
        (false, false, true, false, false, true, false) => {
            let (alpha, sigma) = (alpha.unwrap(), sigma.unwrap());
            let (p_star, s, c, theta) = interpolation_exponents(k, p, alpha, sigma)?;
            ParameterSet { k, p, q: s, t: s, p_star, alpha, beta: sigma, gamma: sigma, sigma, a: 1.0, b_interp: 1.0, c, theta, s }
        }
        (true, false, true, true, false, true, true) => {
            let (q, alpha, beta, sigma, a) = (q.unwrap(), alpha.unwrap(), beta.unwrap(), sigma.unwrap(), a.unwrap());
            if !(0.0..=1.0).contains(&a) {
                return Err(LabError::InfeasibleParameters(format!("a = {a} must lie in [0, 1]")));
            }
            let (p_star, s, c, theta) = interpolation_exponents(k, p, alpha, sigma)?;
            let gamma = a * sigma + (1.0 - a) * beta;
            let t = 1.0 / (a / s + (1.0 - a) / q);
            let b_interp = a * q / (a * q + (1.0 - a) * s);
            ParameterSet { k, p, q, t, p_star, alpha, beta, gamma, sigma, a, b_interp, c, theta, s }
        }
        (true, true, true, true, true, false, false) => {
            let (q, t, alpha, beta, gamma) = (q.unwrap(), t.unwrap(), alpha.unwrap(), beta.unwrap(), gamma.unwrap());
            if !(t > 0.0) {
                return Err(LabError::InfeasibleParameters(format!("t = {t} must be positive")));
            }
            let kf = k as f64;
            let u = 1.0 / p - (alpha + 1.0) / kf;
            let v = 1.0 / q - beta / kf;
            let w = 1.0 / t - gamma / kf;
            let a = if (u - v).abs() < BALANCE_TOL {
                if (w - v).abs() < BALANCE_TOL && close(gamma, beta) {
                    0.0
                } else {
                    return Err(LabError::InfeasibleParameters("balance condition has no solution in a".into()));
                }
            } else {
                (w - v) / (u - v)
            };
            if !(-BALANCE_TOL..=1.0 + BALANCE_TOL).contains(&a) {
                return Err(LabError::InfeasibleParameters(format!("balance forces a = {a} outside [0, 1]")));
            }
            let a = a.clamp(0.0, 1.0);
            let sigma = if a == 0.0 {
                if !close(gamma, beta) {
                    return Err(LabError::InfeasibleParameters("a = 0 requires gamma = beta".into()));
                }
                alpha + 1.0
            } else {
                (gamma - (1.0 - a) * beta) / a
            };
            let (p_star, s, c, theta) = interpolation_exponents(k, p, alpha, sigma)?;
            let b_interp = a * q / (a * q + (1.0 - a) * s);
            ParameterSet { k, p, q, t, p_star, alpha, beta, gamma, sigma, a, b_interp, c, theta, s }
        }
        _ => {
            return Err(LabError::ClosureUnsupported(
                "supported closures: (alpha, sigma), (q, alpha, beta, sigma, a), (q, t, alpha, beta, gamma)".into(),
            ))
        }
    };
    set.validate()?;
    Ok(set)
}

/// `(Λ, C)` with `C = (Λ/h'(r₀))^{p(1-c)/s} (SΓ)^{p*c/s}`.
pub fn interpolation_constants(params: &ParameterSet, hp0: f64, s_const: f64) -> Result<(f64, f64)> {
    params.validate()?;
    let lambda = hardy_lambda(params.k, params.p, params.alpha, hp0)?;
    let gamma = weighted_constants(params.k, params.p, params.alpha, hp0)?.gamma;
    let (p, s, c) = (params.p, params.s, params.c);
    let big_c = (lambda / hp0).powf(p * (1.0 - c) / s) * (s_const * gamma).powf(params.p_star * c / s);
    Ok((lambda, big_c))
}

/// Every constant an inequality report may quote.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConstantBundle {
    pub a_p: f64,
    pub b_p: f64,
    pub h_prime_r0: f64,
    pub s_kpz: Option<f64>,
    pub s_kp: Option<f64>,
    pub a_kpa: Option<f64>,
    pub b_kpa: Option<f64>,
    pub eps0: Option<f64>,
    pub gamma: Option<f64>,
    pub phi: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub c: Option<f64>,
}

impl ConstantBundle {
    pub fn basic(p: f64, hp0: f64) -> Self {
        ConstantBundle { a_p: a_p(p), b_p: b_p(p), h_prime_r0: hp0, ..Default::default() }
    }

    pub fn with_weighted(mut self, w: &WeightedConstants) -> Self {
        self.a_kpa = Some(w.a_kpa);
        self.b_kpa = Some(w.b_kpa);
        self.eps0 = Some(w.eps0);
        self.gamma = Some(w.gamma);
        self.phi = Some(w.phi);
        self.delta = Some(w.delta);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-14);
        assert!((unit_ball_volume(2) - PI).abs() < 1e-14);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-13);
        assert!((unit_ball_volume(5) - 8.0 * PI * PI / 15.0).abs() < 1e-13);
    }

    #[test]
    fn power_split_examples() {
        let (lo, hi) = power_split_bounds(2.0, 0.3, 1.7).unwrap();
        assert!((lo - hi).abs() < 1e-15);
        let (lo, hi) = power_split_bounds(1.0, 1.0, 1.0).unwrap();
        assert!((lo - 2f64.sqrt()).abs() < 1e-15 && hi == 2.0);
        let (lo, hi) = power_split_bounds(4.0, 1.0, 0.0).unwrap();
        assert_eq!((lo, hi), (1.0, 2.0));
        assert!(power_split_bounds(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn hoffman_spruck_pinned_value() {
        // (π/2)(2³·3)/((3/4)·2) ((3/(4π))/(1/4))^{1/3} 2 (2·2/1)² = 256π (3/π)^{1/3}
        let exact = 256.0 * PI * (3.0 / PI).powf(1.0 / 3.0);
        let v = hoffman_spruck_constant(3, 2.0, 0.75, false).unwrap();
        assert!((v / exact - 1.0).abs() < 1e-13, "{v} vs {exact}");
        let flat = hoffman_spruck_constant(3, 2.0, 0.75, true).unwrap();
        assert!((v / flat - PI / 2.0).abs() < 1e-13);
        assert!(hoffman_spruck_constant(3, 3.0, 0.5, false).is_err());
        // Closed form at the optimal z.
        let k = 3.0f64;
        let s17 = PI / 2.0 * 2f64.powf(k) * (k + 1.0).powf((k + 1.0) / k) / (k - 1.0)
            * unit_ball_volume(3).powf(-1.0 / k)
            * 2.0
            * 16.0;
        assert!((sobolev_constant(3, 2.0, false).unwrap() / s17 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn argmin_of_hoffman_spruck() {
        for (k, p) in [(3, 1.0), (3, 2.0), (4, 2.0), (5, 3.0)] {
            let z = argmin_hoffman_spruck(k, p).unwrap();
            assert!((z - k as f64 / (k as f64 + 1.0)).abs() < 1e-6, "{k} {p} {z}");
        }
    }

    #[test]
    fn weighted_examples() {
        let w = weighted_constants(3, 2.0, 0.0, 1.0).unwrap();
        assert_eq!((w.gamma, w.phi, w.delta), (1.0, 0.0, 0.0));
        let w = weighted_constants(4, 2.0, 0.5, 1.0).unwrap();
        assert!((w.b_kpa - 6.0).abs() < 1e-14);
        let eps = golden_section(|e| k_of_eps(4, 2.0, 0.5, 1.0, e).unwrap(), 1e-4, 5.0, 1e-10);
        assert!((eps - w.eps0).abs() < 1e-4);
        let at = k_of_eps(4, 2.0, 0.5, 1.0, w.eps0).unwrap();
        assert!((at / w.gamma - 1.0).abs() < 1e-12);
        assert!(matches!(weighted_constants(3, 2.0, 0.5, 1.0), Err(LabError::ConstantUndefined(_))));
    }

    #[test]
    fn weighted_constants_continuous_at_zero() {
        let w0 = weighted_constants(4, 1.5, 0.0, 0.8).unwrap();
        for a in [1e-8, -1e-8] {
            let w = weighted_constants(4, 1.5, a, 0.8).unwrap();
            assert!((w.gamma - w0.gamma).abs() < 1e-5);
            assert!(w.phi.abs() < 1e-5 && w.delta.abs() < 1e-5);
        }
    }

    #[test]
    fn hardy_constants_blow_up() {
        let mut prev = (0.0, 0.0);
        for i in 0..20 {
            let alpha = -0.5 + i as f64 * 0.05;
            let l = hardy_lambda(3, 1.5, alpha, 0.9).unwrap();
            let a = weighted_constants(3, 1.5, alpha, 0.9).unwrap().a_kpa;
            assert!(l > prev.0 && a > prev.1);
            prev = (l, a);
        }
    }

    #[test]
    fn balance_examples() {
        let nash = solve_balance(&BalanceInput {
            k: Some(3),
            p: Some(2.0),
            q: Some(1.0),
            alpha: Some(0.0),
            beta: Some(0.0),
            sigma: Some(0.0),
            a: Some(0.6),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(nash.t, 2.0);
        let hpw = solve_balance(&BalanceInput {
            k: Some(3),
            p: Some(2.0),
            q: Some(2.0),
            t: Some(2.0),
            alpha: Some(0.0),
            beta: Some(-1.0),
            gamma: Some(0.0),
            ..Default::default()
        })
        .unwrap();
        assert!((hpw.a - 0.5).abs() < 1e-12);
        assert!((hpw.sigma - 1.0).abs() < 1e-12);
        let zero = solve_balance(&BalanceInput {
            k: Some(4),
            p: Some(2.0),
            q: Some(3.0),
            alpha: Some(0.2),
            beta: Some(0.7),
            sigma: Some(0.5),
            a: Some(0.0),
            ..Default::default()
        })
        .unwrap();
        assert!(close(zero.gamma, 0.7) && close(zero.t, 3.0));
        let one = solve_balance(&BalanceInput {
            k: Some(4),
            p: Some(2.0),
            q: Some(3.0),
            alpha: Some(0.2),
            beta: Some(0.7),
            sigma: Some(0.5),
            a: Some(1.0),
            ..Default::default()
        })
        .unwrap();
        assert!(close(one.t, one.s) && close(1.0 / one.t, 0.5 - (1.2 - 0.5) / 4.0));
        assert!(matches!(
            solve_balance(&BalanceInput { k: Some(3), p: Some(2.0), ..Default::default() }),
            Err(LabError::ClosureUnsupported(_))
        ));
        assert!(matches!(
            solve_balance(&BalanceInput { k: Some(3), p: Some(2.0), alpha: Some(0.0), sigma: Some(2.0), ..Default::default() }),
            Err(LabError::InfeasibleParameters(_))
        ));
    }

    #[test]
    fn interpolation_endpoints() {
        let s = sobolev_constant(3, 2.0, true).unwrap();
        let hp0 = 0.8;
        let hardy = solve_balance(&BalanceInput {
            k: Some(3),
            p: Some(2.0),
            alpha: Some(-0.2),
            sigma: Some(0.8),
            ..Default::default()
        })
        .unwrap();
        let (l, c) = interpolation_constants(&hardy, hp0, s).unwrap();
        assert!((c - l / hp0).abs() < 1e-12 * c);
        let sob = solve_balance(&BalanceInput {
            k: Some(3),
            p: Some(2.0),
            alpha: Some(-0.2),
            sigma: Some(-0.2),
            ..Default::default()
        })
        .unwrap();
        let (_, c) = interpolation_constants(&sob, hp0, s).unwrap();
        let g = weighted_constants(3, 2.0, -0.2, hp0).unwrap().gamma;
        assert!((c - s * g).abs() < 1e-12 * c);
    }

    proptest! {
        #[test]
        fn ap_bp_product(p in 1.0f64..6.0) {
            prop_assert!((a_p(p) * b_p(p) - 2f64.powf((p - 2.0).abs() / 2.0)).abs() < 1e-14);
        }

        #[test]
        fn gamma_forms_agree(k in 2usize..7, p in 1.0f64..5.0, alpha in -0.9f64..0.0, hp0 in 0.1f64..1.0) {
            prop_assume!(p < k as f64 && p * (alpha + 1.0) < k as f64);
            let a = weighted_constants(k, p, alpha, hp0).unwrap().gamma;
            let b = gamma_first_form(k, p, alpha, hp0).unwrap();
            prop_assert!((a / b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn closures_revalidate(k in 2usize..7, pf in 0.0f64..1.0, a in 0.0f64..1.0, q in 0.5f64..4.0,
                               al in 0.0f64..1.0, st in 0.0f64..1.0, beta in -1.0f64..1.0) {
            let kf = k as f64;
            let p = 1.0 + pf * (kf - 1.0) * 0.95;
            let amax = (kf - p) / p;
            let alpha = -0.9 + al * (amax + 0.9) * 0.95;
            let sigma = alpha + st;
            let set = solve_balance(&BalanceInput {
                k: Some(k), p: Some(p), q: Some(q), alpha: Some(alpha), beta: Some(beta), sigma: Some(sigma), a: Some(a),
                ..Default::default()
            }).unwrap();
            prop_assert!(set.validate().is_ok());
            let back = solve_balance(&BalanceInput {
                k: Some(k), p: Some(p), q: Some(q), t: Some(set.t), alpha: Some(alpha), beta: Some(beta),
                gamma: Some(set.gamma), ..Default::default()
            });
            if let Ok(b) = back { prop_assert!(b.validate().is_ok()); }
        }
    }
}

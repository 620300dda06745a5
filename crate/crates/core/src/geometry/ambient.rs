//! Model ambient spaces with a pole.
//!
//! Warped ambients `dr^2 + h(r)^2 dσ^2` are represented in geodesic normal
//! coordinates `y = x - ξ₀` around the pole, where
//! `g = λ I + (1 - λ) ŷŷᵀ` with `λ = (h(r)/r)^2`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::warp::{solve_warping, WarpingFunction};

#[derive(Debug, Clone)]
pub enum AmbientKind {
    Euclidean,
    Warped { metric: WarpingFunction },
}

#[derive(Debug, Clone)]
pub struct AmbientSpace {
    dim_n: usize,
    kind: AmbientKind,
    pole: DVector<f64>,
    comparison: WarpingFunction,
    r0: f64,
    injectivity_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialData {
    pub r: f64,
    pub grad_r: Vec<f64>,
    pub hessian_bound: f64,
}

impl AmbientSpace {
    pub fn euclidean(n: usize) -> Result<Self> {
        Self::euclidean_with_pole(DVector::zeros(n))
    }

    pub fn euclidean_with_pole(pole: DVector<f64>) -> Result<Self> {
        let n = pole.len();
        if n == 0 {
            return Err(LabError::InvalidArgument("ambient dimension must be positive".into()));
        }
        Ok(AmbientSpace {
            dim_n: n,
            kind: AmbientKind::Euclidean,
            pole,
            comparison: WarpingFunction::euclidean(),
            r0: f64::INFINITY,
            injectivity_radius: f64::INFINITY,
        })
    }

    /// Rotationally symmetric ambient with metric warp `metric` and pole at
    /// the origin. The comparison warp solves the problem for `max(K, 0)`.
    /// `r0` must leave `h'(r0) > 0` for the comparison warp; an infinite
    /// `r0` is only accepted when the comparison warp is Euclidean.
    pub fn warped(n: usize, metric: WarpingFunction, r0: f64) -> Result<Self> {
        if n < 2 {
            return Err(LabError::InvalidArgument(
                "warped ambients need dimension at least 2".into(),
            ));
        }
        let comparison = if metric.is_comparison_admissible() {
            metric.clone()
        } else {
            let clamped = metric.profile().clamped_nonnegative();
            let step = match metric.representation() {
                crate::warp::WarpRepresentation::OdeTable { step } => step,
                _ => 1e-3,
            };
            let w = solve_warping(clamped, metric.domain_end().min(1e6), step)?;
            if w.profile().max_value() == 0.0 {
                WarpingFunction::euclidean()
            } else {
                w
            }
        };
        let injectivity_radius = metric.first_zero();
        let amb = AmbientSpace {
            dim_n: n,
            kind: AmbientKind::Warped { metric },
            pole: DVector::zeros(n),
            comparison,
            r0: f64::INFINITY,
            injectivity_radius,
        };
        amb.with_r0(r0)
    }

    /// Replace the comparison warp (used to study the comparison gap).
    pub fn with_comparison(mut self, comparison: WarpingFunction) -> Result<Self> {
        if !comparison.is_comparison_admissible() {
            return Err(LabError::InvalidArgument(
                "comparison warp needs a nonnegative curvature profile".into(),
            ));
        }
        self.comparison = comparison;
        let r0 = self.r0;
        self.with_r0(r0)
    }

    pub fn with_r0(mut self, r0: f64) -> Result<Self> {
        if !(r0 > 0.0) {
            return Err(LabError::InvalidArgument(format!("r0 must be positive, got {r0}")));
        }
        if r0.is_infinite() && !self.comparison.is_identity() {
            return Err(LabError::InvalidArgument(
                "an infinite r0 needs a Euclidean comparison warp".into(),
            ));
        }
        if r0 > self.comparison.r_bar0() || (r0.is_finite() && r0 > self.comparison.domain_end()) {
            return Err(LabError::InvalidArgument(format!(
                "r0 = {r0} exceeds r̄₀ = {}",
                self.comparison.r_bar0()
            )));
        }
        if r0.is_finite() && !(self.comparison.h_prime(r0) > 0.0) {
            return Err(LabError::InvalidArgument(format!("h'(r0) must be positive at r0 = {r0}")));
        }
        self.r0 = r0;
        Ok(self)
    }

    pub fn with_injectivity_radius(mut self, inj: f64) -> Result<Self> {
        if !(inj > 0.0) {
            return Err(LabError::InvalidArgument(format!(
                "injectivity radius must be positive, got {inj}"
            )));
        }
        self.injectivity_radius = inj;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim_n
    }

    pub fn kind(&self) -> &AmbientKind {
        &self.kind
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, AmbientKind::Euclidean)
    }

    pub fn pole(&self) -> &DVector<f64> {
        &self.pole
    }

    pub fn comparison(&self) -> &WarpingFunction {
        &self.comparison
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    /// `h'(r0)` of the comparison warp.
    pub fn h_prime_r0(&self) -> f64 {
        if self.r0.is_infinite() {
            1.0
        } else {
            self.comparison.h_prime(self.r0)
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        self.injectivity_radius
    }

    pub fn label(&self) -> String {
        match &self.kind {
            AmbientKind::Euclidean => format!("euclidean R^{}", self.dim_n),
            AmbientKind::Warped { metric } => {
                format!("warped n={} {:?}", self.dim_n, metric.representation())
            }
        }
    }

    /// Distance to the pole and the unit radial direction.
    pub fn radial(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let y = x - &self.pole;
        let r = y.norm();
        if !(r > 0.0) {
            return Err(LabError::SingularPoint("point coincides with the pole".into()));
        }
        Ok((r, y / r))
    }

    /// Distance to the pole, zero at the pole itself.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        (x - &self.pole).norm()
    }

    /// `r`, `∇̄r` and the exact radial Hessian coefficient `h'/h` of the
    /// ambient metric (`1/r` in flat space).
    pub fn radial_data(&self, x: &DVector<f64>) -> Result<RadialData> {
        let (r, u) = self.radial(x)?;
        let hessian_bound = match &self.kind {
            AmbientKind::Euclidean => 1.0 / r,
            AmbientKind::Warped { metric } => metric.h_prime(r) / metric.h(r),
        };
        Ok(RadialData { r, grad_r: u.iter().copied().collect(), hessian_bound })
    }

    /// Upper bound `b ≥ 0` with `K̄ ≤ b²` on `r ≤ r_max`: radial curvature
    /// `𝒦` and tangential curvature `(1 - h'²)/h²`, sampled.
    pub fn sectional_curvature_bound(&self, r_max: f64) -> f64 {
        let AmbientKind::Warped { metric } = &self.kind else {
            return 0.0;
        };
        if let crate::warp::WarpRepresentation::AnalyticSphere { b } = metric.representation() {
            return b.abs();
        }
        let r_max = r_max.min(metric.domain_end());
        let mut sup: f64 = 0.0;
        for i in 1..=400 {
            let r = r_max * i as f64 / 400.0;
            let h = metric.h(r);
            let hp = metric.h_prime(r);
            sup = sup.max(metric.profile().value(r)).max((1.0 - hp * hp) / (h * h));
        }
        sup.max(metric.profile().value(0.0)).sqrt()
    }

    /// `(λ, λ', (1 - λ)/r)` of the warped metric at radius `r`.
    fn warp_coefficients(metric: &WarpingFunction, r: f64) -> (f64, f64, f64) {
        if r < 1e-3 {
            let k0 = metric.profile().value(0.0);
            let lam = 1.0 - k0 * r * r / 3.0;
            return (lam, -2.0 * k0 * r / 3.0, k0 * r / 3.0);
        }
        let h = metric.h(r);
        let hp = metric.h_prime(r);
        let q = h / r;
        let lam = q * q;
        (lam, 2.0 * q * (hp * r - h) / (r * r), (1.0 - lam) / r)
    }

    pub fn metric(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim_n;
        match &self.kind {
            AmbientKind::Euclidean => DMatrix::identity(n, n),
            AmbientKind::Warped { metric } => {
                let y = x - &self.pole;
                let r = y.norm();
                if r == 0.0 {
                    return DMatrix::identity(n, n);
                }
                let u = y / r;
                let (lam, _, _) = Self::warp_coefficients(metric, r);
                DMatrix::identity(n, n) * lam + &u * u.transpose() * (1.0 - lam)
            }
        }
    }

    pub fn inner(&self, x: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        match &self.kind {
            AmbientKind::Euclidean => a.dot(b),
            AmbientKind::Warped { .. } => (self.metric(x) * b).dot(a),
        }
    }

    /// Christoffel symbols `Γ[a][(b, c)]`; `None` in flat space.
    pub fn christoffel(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let metric = match &self.kind {
            AmbientKind::Euclidean => return None,
            AmbientKind::Warped { metric } => metric,
        };
        let n = self.dim_n;
        let y = x - &self.pole;
        let r = y.norm();
        if r == 0.0 {
            return Some(vec![DMatrix::zeros(n, n); n]);
        }
        let u = y / r;
        let (lam, dlam, defect) = Self::warp_coefficients(metric, r);
        let q = DMatrix::identity(n, n) - &u * u.transpose();
        // dg[k][(i, j)] = ∂_k g_ij
        let dg: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let qk = q.column(k).into_owned();
                &q * (dlam * u[k]) + (&qk * u.transpose() + &u * qk.transpose()) * defect
            })
            .collect();
        let ginv = &u * u.transpose() + &q / lam;
        Some(
            (0..n)
                .map(|a| {
                    DMatrix::from_fn(n, n, |b, c| {
                        0.5 * (0..n)
                            .map(|d| ginv[(a, d)] * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]))
                            .sum::<f64>()
                    })
                })
                .collect(),
        )
    }

    /// `Γ(u, v)` as an ambient vector.
    pub fn connection_term(
        gamma: &Option<Vec<DMatrix<f64>>>,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64> {
        match gamma {
            None => DVector::zeros(u.len()),
            Some(g) => DVector::from_iterator(u.len(), g.iter().map(|ga| (ga * v).dot(u))),
        }
    }

    /// `Hess r(v, v)` with the radial covector differentiated by central
    /// differences of step `eta`.
    pub fn hessian_r(&self, x: &DVector<f64>, v: &DVector<f64>, eta: f64) -> Result<f64> {
        let (_, u) = self.radial(x)?;
        let n = self.dim_n;
        let mut d2 = DMatrix::zeros(n, n);
        for b in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += eta;
            xm[b] -= eta;
            let (_, up) = self.radial(&xp)?;
            let (_, um) = self.radial(&xm)?;
            let col = (up - um) / (2.0 * eta);
            d2.set_column(b, &col);
        }
        let flat = (&d2 * v).dot(v);
        let corr = Self::connection_term(&self.christoffel(x), v, v).dot(&u);
        Ok(flat - corr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::CurvatureProfile;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn euclidean_radial_data() {
        let amb = AmbientSpace::euclidean(3).unwrap();
        let d = amb.radial_data(&DVector::from_vec(vec![3.0, 4.0, 0.0])).unwrap();
        assert_eq!(d.r, 5.0);
        assert!((d.grad_r[0] - 0.6).abs() < 1e-15 && (d.grad_r[1] - 0.8).abs() < 1e-15);
        assert!((d.hessian_bound - 0.2).abs() < 1e-15);
        assert!(matches!(amb.radial_data(&DVector::zeros(3)), Err(LabError::SingularPoint(_))));
    }

    #[test]
    fn sphere_warp_bound() {
        let amb = AmbientSpace::warped(3, WarpingFunction::analytic(1.0), 1.2).unwrap();
        let x = DVector::from_vec(vec![FRAC_PI_4, 0.0, 0.0]);
        assert!((amb.radial_data(&x).unwrap().hessian_bound - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hyperbolic_profile_bound() {
        let prof = CurvatureProfile::tabulated_signed(vec![(0.0, -1.0), (4.0, -1.0)]).unwrap();
        let w = solve_warping(prof, 4.0, 1e-3).unwrap();
        let amb = AmbientSpace::warped(3, w, f64::INFINITY).unwrap();
        let x = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let b = amb.radial_data(&x).unwrap().hessian_bound;
        assert!((b - 1f64.cosh() / 1f64.sinh()).abs() < 1e-9);
        assert!(amb.comparison().is_identity());
    }

    #[test]
    fn christoffel_matches_finite_differences() {
        let amb = AmbientSpace::warped(3, WarpingFunction::analytic(1.0), 1.2).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.5, 0.4]);
        let gam = amb.christoffel(&x).unwrap();
        let n = 3;
        let eta = 1e-5;
        let dg: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += eta;
                xm[k] -= eta;
                (amb.metric(&xp) - amb.metric(&xm)) / (2.0 * eta)
            })
            .collect();
        let ginv = amb.metric(&x).try_inverse().unwrap();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let fd: f64 = 0.5
                        * (0..n)
                            .map(|d| ginv[(a, d)] * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]))
                            .sum::<f64>();
                    assert!((fd - gam[a][(b, c)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn radial_geodesics_are_unit_speed() {
        let amb = AmbientSpace::warped(3, WarpingFunction::analytic(1.0), 1.2).unwrap();
        let x = DVector::from_vec(vec![0.2, 0.6, -0.1]);
        let (_, u) = amb.radial(&x).unwrap();
        assert!((amb.inner(&x, &u, &u) - 1.0).abs() < 1e-14);
        // ∇_u u = 0 along radial geodesics: Γ(u,u) = 0.
        let acc = AmbientSpace::connection_term(&amb.christoffel(&x), &u, &u);
        assert!(acc.norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_r0() {
        assert!(AmbientSpace::warped(3, WarpingFunction::analytic(1.0), 2.0).is_err());
        assert!(AmbientSpace::warped(3, WarpingFunction::analytic(1.0), f64::INFINITY).is_err());
    }
}

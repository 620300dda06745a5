//! Pointwise and aggregated operators on discretized submanifolds.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::ambient::AmbientSpace;
use super::discretize::{patch_frame, Discretization, Representation, Site, Submanifold};
use super::field::{ScalarField, VectorFieldFn};
use crate::error::{LabError, Result};

/// Ambient vector field with its coordinate Jacobian.
#[derive(Clone)]
pub struct VectorField {
    f: Arc<VectorFieldFn>,
    label: String,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField").field("label", &self.label).finish()
    }
}

impl VectorField {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync + 'static,
    {
        VectorField { f: Arc::new(f), label: label.into() }
    }

    pub fn constant(v: DVector<f64>) -> Self {
        let n = v.len();
        VectorField::new("constant", move |_| (v.clone(), DMatrix::zeros(n, n)))
    }

    /// `Y = x - c`.
    pub fn position(center: DVector<f64>) -> Self {
        let n = center.len();
        VectorField::new("position", move |x| (x - &center, DMatrix::identity(n, n)))
    }

    /// `Y = a + B x + Σ_j (xᵀ C_j x) e_j`.
    pub fn quadratic(a: DVector<f64>, b: DMatrix<f64>, c: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.len();
        if b.shape() != (n, n) || c.len() != n || c.iter().any(|m| m.shape() != (n, n)) {
            return Err(LabError::InvalidArgument("quadratic field coefficients have wrong shapes".into()));
        }
        Ok(VectorField::new("quadratic", move |x| {
            let mut y = &a + &b * x;
            let mut jac = b.clone();
            for (j, cj) in c.iter().enumerate() {
                y[j] += (cj * x).dot(x);
                let row = (cj + cj.transpose()) * x;
                for col in 0..n {
                    jac[(j, col)] += row[col];
                }
            }
            (y, jac)
        }))
    }

    pub fn eval(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.f)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// `div_M Y = Σ_m ⟨∇̄_{E_m} Y, E_m⟩` for a metric-orthonormal frame `E`.
pub fn divergence_at(
    amb: &AmbientSpace,
    x: &DVector<f64>,
    tangent: &DMatrix<f64>,
    y: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> f64 {
    let g = amb.metric(x);
    let gamma = amb.christoffel(x);
    (0..tangent.ncols())
        .map(|m| {
            let e = tangent.column(m).into_owned();
            let d = jac * &e + AmbientSpace::connection_term(&gamma, &e, y);
            (&g * d).dot(&e)
        })
        .sum()
}

pub fn mean_curvature(site: &Site) -> &DVector<f64> {
    &site.mean_curvature
}

pub fn normal_radial_component(site: &Site) -> Result<f64> {
    if site.r == 0.0 {
        return Err(LabError::SingularPoint("site coincides with the pole".into()));
    }
    Ok(site.radial_normal)
}

/// `|(∇̄r)^⊤|² + |(∇̄r)^⊥|² - 1` with the normal part formed by direct
/// projection.
pub fn pythagoras_residual(amb: &AmbientSpace, site: &Site) -> Result<f64> {
    let (_, u) = amb.radial(&site.x)?;
    let g = amb.metric(&site.x);
    let coeff = site.tangent.transpose() * (&g * &u);
    let perp = &u - &site.tangent * &coeff;
    Ok(coeff.norm_squared() + (&g * &perp).dot(&perp) - 1.0)
}

/// `Hess r(v, v) - (h'/h)(r)(|v|² - ⟨∇̄r, v⟩²)` for the comparison warp, `v`
/// normalised to unit length. Nonnegative by Hessian comparison.
pub fn hessian_comparison_gap(amb: &AmbientSpace, x: &DVector<f64>, v: &DVector<f64>, eta: f64) -> Result<f64> {
    let (r, u) = amb.radial(x)?;
    let g = amb.metric(x);
    let len = (&g * v).dot(v).sqrt();
    if !(len > 0.0) {
        return Err(LabError::InvalidArgument("direction must be nonzero".into()));
    }
    let v = v / len;
    let hess = amb.hessian_r(x, &v, eta)?;
    let w = amb.comparison();
    let c = u.dot(&(&g * &v));
    Ok(hess - w.h_prime(r) / w.h(r) * (1.0 - c * c))
}

/// Pointwise `div_M(X/|X|^α) - h'(r)[(k-α) + α|∇̄r^⊥|²]/h(r)^α` with
/// `X = h(r)∇̄r`, at every interior site of the discretization.
pub fn lemma24_margin(sub: &Submanifold, disc: &Discretization, alpha: f64) -> Result<Vec<f64>> {
    let amb = sub.ambient();
    let k = sub.dim() as f64;
    let r0 = amb.r0();
    if disc.max_r > r0 * (1.0 + 1e-12) {
        return Err(LabError::PreconditionViolated(format!(
            "submanifold reaches r = {} outside the ball of radius r0 = {r0}",
            disc.max_r
        )));
    }
    let w = amb.comparison();
    disc.main
        .par_iter()
        .map(|s| {
            let (r, u) = amb.radial(&s.x)?;
            let (h, hp) = (w.h(r), w.h_prime(r));
            let n = amb.dim();
            let uu = &u * u.transpose();
            let y = &u * h.powf(1.0 - alpha);
            let jac = &uu * ((1.0 - alpha) * h.powf(-alpha) * hp)
                + (DMatrix::identity(n, n) - &uu) * (h.powf(1.0 - alpha) / r);
            let div = divergence_at(amb, &s.x, &s.tangent, &y, &jac);
            let rhs = hp * h.powf(-alpha) * ((k - alpha) + alpha * s.radial_normal.powi(2));
            Ok(div - rhs)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma23Residuals {
    /// L² norm of `div_M Y - div_M Y^⊤ + ⟨H, Y⟩`.
    pub res_a: f64,
    /// L² norm of `div_M(ψY) - ψ div_M Y - ⟨∇ψ, Y⟩`.
    pub res_b: f64,
    /// `|∫_M div_M Y^⊤ - ∫_{∂M} ⟨Y, ν⟩|`.
    pub divergence_theorem: f64,
    pub mesh_size: f64,
}

struct SiteResiduals {
    weight: f64,
    a: f64,
    b: f64,
    div_tangential: f64,
}

pub fn divergence_residual_lemma23(sub: &Submanifold, y: &VectorField, psi: &ScalarField) -> Result<Lemma23Residuals> {
    let disc = sub.discretization(0.0)?;
    let per: Vec<SiteResiduals> = match sub.representation() {
        Representation::Patch { shape, resolution } => {
            let amb = sub.ambient();
            let bx = shape.chart_box();
            let div = shape.base_divisions(*resolution);
            let steps: Vec<f64> = bx.iter().zip(&div).map(|((a, b), n)| (b - a) / *n as f64).collect();
            let tangential = |u: &[f64]| -> Result<(DVector<f64>, DVector<f64>)> {
                let f = patch_frame(amb, shape, u)?;
                let (yv, _) = y.eval(&f.cp.x);
                let yt = &f.tangent * (f.tangent.transpose() * (&f.metric * &yv));
                let pv = psi.value(&f.cp.x);
                Ok((yt, yv * pv))
            };
            disc.main
                .par_iter()
                .map(|s| {
                    let u = &s.chart;
                    let f = patch_frame(amb, shape, u)?;
                    let (yv, jac) = y.eval(&s.x);
                    let (pv, dpsi) = psi.eval(&s.x);
                    let k = u.len();
                    let ginv = f
                        .gram
                        .clone()
                        .try_inverse()
                        .ok_or_else(|| LabError::DegenerateGeometry("induced metric".into()))?;
                    let (yt0, py0) = tangential(u)?;
                    let mut dyt = Vec::with_capacity(k);
                    let mut dpy = Vec::with_capacity(k);
                    for i in 0..k {
                        let eta = steps[i].min(0.5 * (u[i] - bx[i].0)).min(0.5 * (bx[i].1 - u[i]));
                        let mut up = u.clone();
                        let mut um = u.clone();
                        up[i] += eta;
                        um[i] -= eta;
                        let (tp, pp) = tangential(&up)?;
                        let (tm, pm) = tangential(&um)?;
                        let ji = f.cp.jac.column(i).into_owned();
                        dyt.push((tp - tm) / (2.0 * eta) + AmbientSpace::connection_term(&f.gamma, &ji, &yt0));
                        dpy.push((pp - pm) / (2.0 * eta) + AmbientSpace::connection_term(&f.gamma, &ji, &py0));
                    }
                    let mut div_t = 0.0;
                    let mut div_py = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let jj = f.metric.clone() * f.cp.jac.column(j);
                            div_t += ginv[(i, j)] * dyt[i].dot(&jj);
                            div_py += ginv[(i, j)] * dpy[i].dot(&jj);
                        }
                    }
                    let div_y = divergence_at(amb, &s.x, &s.tangent, &yv, &jac);
                    let gy = &f.metric * &yv;
                    let h_y = s.mean_curvature.dot(&gy);
                    let grad_dot: f64 = (0..k)
                        .map(|m| {
                            let e = s.tangent.column(m);
                            dpsi.dot(&e) * gy.dot(&e)
                        })
                        .sum();
                    Ok(SiteResiduals {
                        weight: s.weight,
                        a: div_y - (div_t - h_y),
                        b: div_py - pv * div_y - grad_dot,
                        div_tangential: div_t,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Representation::Mesh(m) => {
            let mesh = &m.mesh;
            let k = mesh.dim();
            let amb = sub.ambient();
            (0..mesh.cells().len())
                .into_par_iter()
                .map(|c| {
                    let cell = &mesh.cells()[c];
                    let n = mesh.ambient_dim();
                    let mut xc = DVector::zeros(n);
                    let mut hc = DVector::zeros(n);
                    let mut dt = DMatrix::zeros(n, n);
                    let mut dp = DMatrix::zeros(n, n);
                    for (i, &v) in cell.iter().enumerate() {
                        let xv = &mesh.vertices()[v];
                        xc += xv / (k + 1) as f64;
                        hc += &m.vertex_h[v] / (k + 1) as f64;
                        let (yv, _) = y.eval(xv);
                        let gl = m.bary_grads[c][i].transpose();
                        dt += (&m.vertex_tangent[v] * &yv) * &gl;
                        dp += (&yv * psi.value(xv)) * &gl;
                    }
                    let e = &m.frames[c];
                    let div_t = (e.transpose() * &dt * e).trace();
                    let div_py = (e.transpose() * &dp * e).trace();
                    let (yv, jac) = y.eval(&xc);
                    let (pv, dpsi) = psi.eval(&xc);
                    let div_y = divergence_at(amb, &xc, e, &yv, &jac);
                    let grad_dot = (e.transpose() * &dpsi).dot(&(e.transpose() * &yv));
                    Ok(SiteResiduals {
                        weight: mesh.cell_volume(c),
                        a: div_y - (div_t - hc.dot(&yv)),
                        b: div_py - pv * div_y - grad_dot,
                        div_tangential: div_t * mesh.cell_volume(c),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let res_a = per.iter().map(|s| s.weight * s.a * s.a).sum::<f64>().sqrt();
    let res_b = per.iter().map(|s| s.weight * s.b * s.b).sum::<f64>().sqrt();
    let interior: f64 = if sub.is_mesh() {
        per.iter().map(|s| s.div_tangential).sum()
    } else {
        per.iter().map(|s| s.weight * s.div_tangential).sum()
    };
    let amb = sub.ambient();
    let flux: f64 = disc
        .boundary
        .iter()
        .map(|b| {
            let (yv, _) = y.eval(&b.x);
            b.weight * amb.inner(&b.x, &yv, &b.conormal)
        })
        .sum();
    Ok(Lemma23Residuals {
        res_a,
        res_b,
        divergence_theorem: (interior - flux).abs(),
        mesh_size: disc.stats.mesh_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PatchShape, SimplicialMesh};
    use crate::warp::{CurvatureProfile, WarpingFunction};
    use std::f64::consts::PI;

    fn plane() -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    fn euclid() -> Arc<AmbientSpace> {
        Arc::new(AmbientSpace::euclidean(3).unwrap())
    }

    #[test]
    fn radial_components_on_model_shapes() {
        let disk = PatchShape::flat_ball(DVector::zeros(3), plane(), 1.0).unwrap();
        let sub = Submanifold::from_patch(euclid(), disk, 3, 4).unwrap();
        let d = sub.discretization(0.0).unwrap();
        for s in &d.main {
            assert!(normal_radial_component(s).unwrap() < 1e-12);
            assert!(pythagoras_residual(sub.ambient(), s).unwrap().abs() < 1e-12);
            assert!(mean_curvature(s).norm() < 1e-12);
        }
        // Tilted plane at distance 0.5 from the pole.
        let c = DVector::from_vec(vec![0.0, 0.0, 0.5]);
        let tilted = PatchShape::flat_ball(c, plane(), 1.0).unwrap();
        let sub = Submanifold::from_patch(euclid(), tilted, 3, 4).unwrap();
        for s in &sub.discretization(0.0).unwrap().main {
            assert!((s.radial_normal - 0.5 / s.r).abs() < 1e-12);
        }
    }

    #[test]
    fn lemma23_plane_and_sphere() {
        let disk = PatchShape::flat_ball(DVector::zeros(3), plane(), 1.0).unwrap();
        let sub = Submanifold::from_patch(euclid(), disk, 3, 4).unwrap();
        let y = VectorField::constant(DVector::from_vec(vec![1.0, -2.0, 0.5]));
        let r = divergence_residual_lemma23(&sub, &y, &ScalarField::constant(1.0)).unwrap();
        assert!(r.res_a < 1e-12 && r.res_b < 1e-12, "{r:?}");
        let mut prev = f64::INFINITY;
        for level in [2, 3, 4] {
            let mesh = SimplicialMesh::icosphere(level, 1.0, DVector::zeros(3)).unwrap();
            let sub = Submanifold::from_mesh(euclid(), mesh, 2).unwrap();
            let r = divergence_residual_lemma23(&sub, &VectorField::position(DVector::zeros(3)), &ScalarField::constant(1.0))
                .unwrap();
            assert!(r.res_a < prev);
            prev = r.res_a;
        }
        assert!(prev < 0.1, "{prev}");
    }

    #[test]
    fn lemma24_plane_is_exact() {
        let disk = PatchShape::flat_ball(DVector::zeros(3), plane(), 1.0).unwrap();
        let sub = Submanifold::from_patch(euclid(), disk, 3, 4).unwrap();
        let d = sub.discretization(0.0).unwrap();
        for m in lemma24_margin(&sub, &d, 0.0).unwrap() {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn lemma24_sine_metric_equality() {
        let metric = WarpingFunction::analytic(1.0);
        let amb = AmbientSpace::warped(3, metric, 1.2).unwrap();
        let prof = CurvatureProfile::constant(1.0).unwrap();
        let comp = WarpingFunction::ode(prof, 1.3, 1e-3).unwrap();
        let amb = Arc::new(amb.with_comparison(comp).unwrap());
        let c = DVector::from_vec(vec![0.0, 0.0, 0.4]);
        let cap = PatchShape::flat_ball(c, plane(), 0.6).unwrap();
        let sub = Submanifold::from_patch(amb, cap, 3, 4).unwrap();
        let d = sub.discretization(0.0).unwrap();
        for alpha in [-0.5, 0.0, 1.5] {
            for m in lemma24_margin(&sub, &d, alpha).unwrap() {
                assert!(m > -1e-6, "{m}");
            }
        }
    }

    #[test]
    fn hessian_gap_vanishes_for_equal_warps() {
        let amb = AmbientSpace::warped(3, WarpingFunction::analytic(1.0), 1.2).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.5, -0.2]);
        for v in [[1.0, 0.0, 0.0], [0.2, -1.0, 0.4], [0.0, 0.0, 1.0]] {
            let g = hessian_comparison_gap(&amb, &x, &DVector::from_row_slice(&v), 1e-5).unwrap();
            assert!(g.abs() < 1e-6, "{g}");
        }
        let flat = AmbientSpace::euclidean(3).unwrap();
        let strict = flat.with_r0(1.2).unwrap().with_comparison(WarpingFunction::analytic(1.0)).unwrap();
        let g = hessian_comparison_gap(&strict, &x, &DVector::from_row_slice(&[0.0, 1.0, 0.0]), 1e-5).unwrap();
        assert!(g > 0.0);
        let _ = PI;
    }
}

//! Parametric patches: built-in immersions with second-order jets.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::field::ShapeCoordinate;
use super::jet::Jet;
use crate::error::{LabError, Result};

/// Ambient position with first and second chart derivatives.
#[derive(Debug, Clone)]
pub struct ChartPoint {
    pub x: DVector<f64>,
    pub jac: DMatrix<f64>,
    /// `second[i * k + j] = ∂_i ∂_j x`.
    pub second: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub enum PatchShape {
    /// Flat `k`-ball `c + span(F)` of radius `R`, in polar-type chart.
    FlatBall { center: DVector<f64>, frame: DMatrix<f64>, radius: f64 },
    /// Geodesic cap of angular radius `max_angle` on the round `k`-sphere
    /// in `c + span(F)`, `F` with `k + 1` columns; the cap is centred on
    /// the last column. `max_angle = π` gives the closed sphere.
    Sphere { center: DVector<f64>, frame: DMatrix<f64>, radius: f64, max_angle: f64 },
    /// Graph `x e₁ + y e₂ + P(x, y) e₃` over the disk of radius `R`,
    /// `P = Σ c xⁱ yʲ`.
    Graph { center: DVector<f64>, frame: DMatrix<f64>, radius: f64, coeffs: Vec<(u32, u32, f64)> },
}

fn check_frame(frame: &DMatrix<f64>, center: &DVector<f64>) -> Result<()> {
    if frame.nrows() != center.len() {
        return Err(LabError::InvalidArgument(format!(
            "frame has {} rows but the centre has {} coordinates",
            frame.nrows(),
            center.len()
        )));
    }
    let gram = frame.transpose() * frame;
    let err = (gram - DMatrix::identity(frame.ncols(), frame.ncols())).abs().max();
    if err > 1e-10 {
        return Err(LabError::InvalidArgument("frame columns must be orthonormal".into()));
    }
    Ok(())
}

impl PatchShape {
    pub fn flat_ball(center: DVector<f64>, frame: DMatrix<f64>, radius: f64) -> Result<Self> {
        check_frame(&frame, &center)?;
        let k = frame.ncols();
        if !(1..=3).contains(&k) || k > center.len() {
            return Err(LabError::InvalidArgument(format!("flat ball of dimension {k} unsupported")));
        }
        if !(radius > 0.0) {
            return Err(LabError::InvalidArgument("radius must be positive".into()));
        }
        Ok(PatchShape::FlatBall { center, frame, radius })
    }

    pub fn sphere(center: DVector<f64>, frame: DMatrix<f64>, radius: f64, max_angle: f64) -> Result<Self> {
        check_frame(&frame, &center)?;
        let k = frame.ncols().saturating_sub(1);
        if !(1..=3).contains(&k) {
            return Err(LabError::InvalidArgument(format!("sphere of dimension {k} unsupported")));
        }
        if !(radius > 0.0) || !(max_angle > 0.0 && max_angle <= PI) {
            return Err(LabError::InvalidArgument(
                "sphere needs radius > 0 and angular radius in (0, π]".into(),
            ));
        }
        Ok(PatchShape::Sphere { center, frame, radius, max_angle })
    }

    pub fn graph(
        center: DVector<f64>,
        frame: DMatrix<f64>,
        radius: f64,
        coeffs: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        check_frame(&frame, &center)?;
        if frame.ncols() != 3 {
            return Err(LabError::InvalidArgument("graph frame needs three columns".into()));
        }
        if !(radius > 0.0) {
            return Err(LabError::InvalidArgument("radius must be positive".into()));
        }
        Ok(PatchShape::Graph { center, frame, radius, coeffs })
    }

    pub fn dim(&self) -> usize {
        match self {
            PatchShape::FlatBall { frame, .. } => frame.ncols(),
            PatchShape::Sphere { frame, .. } => frame.ncols() - 1,
            PatchShape::Graph { .. } => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            PatchShape::FlatBall { center, .. }
            | PatchShape::Sphere { center, .. }
            | PatchShape::Graph { center, .. } => center.len(),
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, PatchShape::Sphere { max_angle, .. } if *max_angle >= PI)
    }

    /// Chart domain as per-axis intervals.
    pub fn chart_box(&self) -> Vec<(f64, f64)> {
        let k = self.dim();
        match self {
            PatchShape::FlatBall { radius, .. } => match k {
                1 => vec![(-radius, *radius)],
                2 => vec![(0.0, *radius), (0.0, 2.0 * PI)],
                _ => vec![(0.0, *radius), (0.0, PI), (0.0, 2.0 * PI)],
            },
            PatchShape::Sphere { max_angle, .. } => match k {
                1 => vec![(-max_angle, *max_angle)],
                2 => vec![(0.0, *max_angle), (0.0, 2.0 * PI)],
                _ => vec![(0.0, *max_angle), (0.0, PI), (0.0, 2.0 * PI)],
            },
            PatchShape::Graph { radius, .. } => vec![(0.0, *radius), (0.0, 2.0 * PI)],
        }
    }

    /// Uniform base subdivision of the chart box at resolution `n`.
    pub fn base_divisions(&self, n: usize) -> Vec<usize> {
        let n = n.max(1);
        match self.dim() {
            1 => vec![2 * n],
            2 => vec![n, 4 * n],
            _ => vec![n, 2 * n, 4 * n],
        }
    }

    /// Chart faces `(axis, upper)` that map onto `∂M`.
    pub fn boundary_faces(&self) -> Vec<(usize, bool)> {
        match self {
            PatchShape::Sphere { .. } if self.is_closed() => vec![],
            _ if self.dim() == 1 => vec![(0, false), (0, true)],
            _ => vec![(0, true)],
        }
    }

    pub fn shape_coordinate(&self) -> ShapeCoordinate {
        match self {
            PatchShape::FlatBall { center, frame, radius } => ShapeCoordinate::Planar {
                center: center.clone(),
                frame: frame.clone(),
                radius: *radius,
            },
            PatchShape::Sphere { center, frame, radius, max_angle } => ShapeCoordinate::Spherical {
                center: center.clone(),
                axis: frame.column(frame.ncols() - 1).into_owned(),
                radius: *radius,
                cos_max: max_angle.cos(),
            },
            PatchShape::Graph { center, frame, radius, .. } => ShapeCoordinate::Planar {
                center: center.clone(),
                frame: frame.columns(0, 2).into_owned(),
                radius: *radius,
            },
        }
    }

    fn components(&self, u: &[Jet]) -> Vec<Jet> {
        let k = self.dim();
        match self {
            PatchShape::FlatBall { .. } => match k {
                1 => vec![u[0]],
                2 => vec![u[0] * u[1].cos(), u[0] * u[1].sin()],
                _ => {
                    let s = u[1].sin();
                    vec![u[0] * s * u[2].cos(), u[0] * s * u[2].sin(), u[0] * u[1].cos()]
                }
            },
            PatchShape::Sphere { radius, .. } => {
                let comps = match k {
                    1 => vec![u[0].sin(), u[0].cos()],
                    2 => {
                        let s = u[0].sin();
                        vec![s * u[1].cos(), s * u[1].sin(), u[0].cos()]
                    }
                    _ => {
                        let s = u[0].sin();
                        let t = u[1].sin();
                        vec![s * t * u[2].cos(), s * t * u[2].sin(), s * u[1].cos(), u[0].cos()]
                    }
                };
                comps.into_iter().map(|c| c * *radius).collect()
            }
            PatchShape::Graph { coeffs, .. } => {
                let x = u[0] * u[1].cos();
                let y = u[0] * u[1].sin();
                let mut z = Jet::constant(0.0);
                for &(i, j, c) in coeffs {
                    z = z + x.powi(i as i32) * y.powi(j as i32) * c;
                }
                vec![x, y, z]
            }
        }
    }

    /// Ambient position and chart derivatives at chart point `u`.
    pub fn eval(&self, u: &[f64]) -> ChartPoint {
        let k = self.dim();
        let (center, frame) = match self {
            PatchShape::FlatBall { center, frame, .. }
            | PatchShape::Sphere { center, frame, .. }
            | PatchShape::Graph { center, frame, .. } => (center, frame),
        };
        let vars: Vec<Jet> = (0..k).map(|i| Jet::var(i, u[i])).collect();
        let comps = self.components(&vars);
        let n = center.len();
        let mut x = center.clone();
        let mut jac = DMatrix::zeros(n, k);
        let mut second = vec![DVector::zeros(n); k * k];
        for (m, c) in comps.iter().enumerate() {
            let col = frame.column(m);
            x += col * c.v;
            for i in 0..k {
                for a in 0..n {
                    jac[(a, i)] += col[a] * c.d[i];
                }
                for j in 0..k {
                    second[i * k + j] += col * c.dd[i][j];
                }
            }
        }
        ChartPoint { x, jac, second }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(n, cols.len(), |r, c| if r == cols[c] { 1.0 } else { 0.0 })
    }

    #[test]
    fn disk_chart_jets_match_finite_differences() {
        let shape =
            PatchShape::graph(DVector::zeros(3), e(3, &[0, 1, 2]), 1.0, vec![(2, 0, 0.5), (1, 1, -0.3)]).unwrap();
        let u = [0.4, 1.1];
        let p = shape.eval(&u);
        let eta = 1e-5;
        for i in 0..2 {
            let mut up = u;
            let mut um = u;
            up[i] += eta;
            um[i] -= eta;
            let fd = (shape.eval(&up).x - shape.eval(&um).x) / (2.0 * eta);
            assert!((fd - p.jac.column(i)).norm() < 1e-8);
            let fd2 = (shape.eval(&up).jac - shape.eval(&um).jac) / (2.0 * eta);
            for j in 0..2 {
                assert!((fd2.column(j) - &p.second[i * 2 + j]).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn sphere_points_lie_on_sphere() {
        let shape = PatchShape::sphere(DVector::zeros(4), e(4, &[0, 1, 2, 3]), 2.0, PI).unwrap();
        assert_eq!(shape.dim(), 3);
        assert!(shape.is_closed() && shape.boundary_faces().is_empty());
        let p = shape.eval(&[0.7, 1.2, 4.0]);
        assert!((p.x.norm() - 2.0).abs() < 1e-14);
        let (s, _) = shape.shape_coordinate().eval(&p.x);
        assert!((s - (1.0 - 0.7f64.cos()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(PatchShape::flat_ball(DVector::zeros(3), DMatrix::from_element(3, 2, 1.0), 1.0).is_err());
        assert!(PatchShape::flat_ball(DVector::zeros(3), e(3, &[0, 1]), -1.0).is_err());
        assert!(PatchShape::sphere(DVector::zeros(3), e(3, &[0, 1, 2]), 1.0, 4.0).is_err());
    }
}

//! Test functions on submanifolds, given as functions of ambient
//! coordinates, plus the per-shape boundary coordinate they are built from.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// Smooth `s: M → [0, 1]` with `s = 1` on `∂M`, used to build boundary
/// vanishing test functions. For a disk centred at the pole `√s = r/R`.
#[derive(Debug, Clone)]
pub enum ShapeCoordinate {
    /// `s = |Fᵀ(x - c)|² / R²` for a frame `F` of the base plane.
    Planar { center: DVector<f64>, frame: DMatrix<f64>, radius: f64 },
    /// `s = (1 - ⟨x - c, e⟩/R) / (1 - cos χ_max)` on a sphere or cap.
    Spherical { center: DVector<f64>, axis: DVector<f64>, radius: f64, cos_max: f64 },
    /// `s = |x - c|² / R²`.
    Ball { center: DVector<f64>, radius: f64 },
}

impl ShapeCoordinate {
    pub fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        match self {
            ShapeCoordinate::Planar { center, frame, radius } => {
                let y = frame.transpose() * (x - center);
                let r2 = radius * radius;
                (y.norm_squared() / r2, frame * y * (2.0 / r2))
            }
            ShapeCoordinate::Spherical { center, axis, radius, cos_max } => {
                let den = 1.0 - cos_max;
                let c = (x - center).dot(axis) / radius;
                ((1.0 - c) / den, axis * (-1.0 / (radius * den)))
            }
            ShapeCoordinate::Ball { center, radius } => {
                let y = x - center;
                let r2 = radius * radius;
                (y.norm_squared() / r2, y * (2.0 / r2))
            }
        }
    }
}

type FieldFn = dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync;

/// `ψ` with its coordinate differential. Tangential gradients are formed
/// by the discretization (analytically on patches, piecewise linearly on
/// meshes).
#[derive(Clone)]
pub struct ScalarField {
    f: Arc<FieldFn>,
    vanishes_on_boundary: bool,
    label: String,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("label", &self.label)
            .field("vanishes_on_boundary", &self.vanishes_on_boundary)
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(label: impl Into<String>, vanishes_on_boundary: bool, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync + 'static,
    {
        ScalarField { f: Arc::new(f), vanishes_on_boundary, label: label.into() }
    }

    pub fn constant(c: f64) -> Self {
        ScalarField::new(format!("constant {c}"), c == 0.0, move |x: &DVector<f64>| {
            (c, DVector::zeros(x.len()))
        })
    }

    pub fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.f)(x)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x).0
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        self.vanishes_on_boundary
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `λψ`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let inner = self.f.clone();
        ScalarField {
            f: Arc::new(move |x: &DVector<f64>| {
                let (v, g) = inner(x);
                (lambda * v, g * lambda)
            }),
            vanishes_on_boundary: self.vanishes_on_boundary,
            label: format!("{lambda} * {}", self.label),
        }
    }
}

/// Ambient vector field with its coordinate Jacobian `∂_b Y^a`.
pub type VectorFieldFn = dyn Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync;

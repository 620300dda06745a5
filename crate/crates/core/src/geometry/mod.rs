//! Ambient spaces, submanifolds and the discrete operators on them.

pub mod ambient;
pub mod discretize;
pub mod field;
pub mod jet;
pub mod mesh;
pub mod operators;
pub mod patch;
pub mod quadrature;

pub use ambient::{AmbientKind, AmbientSpace, RadialData};
pub use discretize::{BoundarySite, Discretization, FieldSample, Integral, MeshStats, Samples, Site, Submanifold, WeightKind};
pub use field::{ScalarField, ShapeCoordinate};
pub use mesh::SimplicialMesh;
pub use patch::PatchShape;
pub use operators::{Lemma23Residuals, VectorField};

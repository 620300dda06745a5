//! Submanifolds and their quadrature discretizations.
//!
//! A discretization is a list of quadrature sites (interior and boundary),
//! each carrying everything the inequality integrands need: position,
//! volume weight, a metric-orthonormal tangent frame, the mean curvature
//! vector and the radial data of the comparison warp. Cells touching the
//! pole are graded geometrically toward it.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::ambient::AmbientSpace;
use super::field::{ScalarField, ShapeCoordinate};
use super::mesh::SimplicialMesh;
use super::patch::{ChartPoint, PatchShape};
use super::quadrature::{BoxRule, SimplexRule};
use crate::error::{LabError, Result};

/// Geometric grading stops once the weight varies by less than this
/// factor across a cell.
const WEIGHT_VARIATION: f64 = 1.1;
const POLE_DEPTH: usize = 30;
const SIMPLEX_EXTRA_DEPTH: usize = 6;
const BOX_EXTRA_DEPTH: usize = 4;

#[derive(Debug, Clone)]
pub struct Site {
    pub x: DVector<f64>,
    pub weight: f64,
    /// Metric-orthonormal tangent frame, `n × k`.
    pub tangent: DMatrix<f64>,
    pub mean_curvature: DVector<f64>,
    pub mean_curvature_norm: f64,
    pub r: f64,
    pub h: f64,
    pub h_prime: f64,
    /// `|(∇̄r)^⊤|²`.
    pub radial_tangent_sq: f64,
    /// `|(∇̄r)^⊥|`, clamped to `[0, 1]`.
    pub radial_normal: f64,
    pub cell: usize,
    /// Barycentric coordinates in the parent mesh cell (empty on patches).
    pub bary: Vec<f64>,
    /// Chart coordinates (empty on meshes).
    pub chart: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoundarySite {
    pub x: DVector<f64>,
    pub weight: f64,
    /// Outward unit conormal.
    pub conormal: DVector<f64>,
    pub r: f64,
    pub h: f64,
    pub h_prime: f64,
    /// `⟨∇̄r, ν⟩`.
    pub radial_conormal: f64,
    pub cell: usize,
    pub bary: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStats {
    pub base_cells: usize,
    pub sub_cells: usize,
    pub sites: usize,
    pub boundary_sites: usize,
    pub level: usize,
    pub mesh_size: f64,
}

#[derive(Debug, Clone)]
pub struct Discretization {
    pub main: Vec<Site>,
    pub check: Vec<Site>,
    pub boundary: Vec<BoundarySite>,
    pub boundary_check: Vec<BoundarySite>,
    pub stats: MeshStats,
    pub contains_pole: bool,
    pub max_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub grad_norm: f64,
}

/// Field values at every site of a discretization.
#[derive(Debug, Clone)]
pub struct Samples {
    pub main: Vec<FieldSample>,
    pub check: Vec<FieldSample>,
    pub boundary: Vec<f64>,
    pub boundary_check: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WeightKind {
    HPower,
    HPowerTimesHPrime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    /// Set when a boundary integral was requested on a closed submanifold.
    pub empty_boundary: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct MeshData {
    pub mesh: SimplicialMesh,
    pub vertex_h: Vec<DVector<f64>>,
    /// Tangent projectors of the fitted surface at each vertex.
    pub vertex_tangent: Vec<DMatrix<f64>>,
    pub frames: Vec<DMatrix<f64>>,
    pub bary_grads: Vec<Vec<DVector<f64>>>,
    pub boundary_vertices: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum Representation {
    Mesh(Box<MeshData>),
    Patch { shape: PatchShape, resolution: usize },
}

#[derive(Debug)]
pub struct Submanifold {
    ambient: Arc<AmbientSpace>,
    repr: Representation,
    quadrature_order: usize,
    level: usize,
    label: String,
    cache: Mutex<HashMap<u32, Arc<Discretization>>>,
}

impl Clone for Submanifold {
    fn clone(&self) -> Self {
        Submanifold {
            ambient: self.ambient.clone(),
            repr: self.repr.clone(),
            quadrature_order: self.quadrature_order,
            level: self.level,
            label: self.label.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

/// Metric data of a patch at one chart point.
#[derive(Debug, Clone)]
pub(crate) struct PatchFrame {
    pub cp: ChartPoint,
    pub metric: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub sqrt_det: f64,
    pub tangent: DMatrix<f64>,
    pub mean_curvature: DVector<f64>,
    pub gamma: Option<Vec<DMatrix<f64>>>,
}

pub(crate) fn patch_frame(amb: &AmbientSpace, shape: &PatchShape, u: &[f64]) -> Result<PatchFrame> {
    let cp = shape.eval(u);
    let k = shape.dim();
    let metric = amb.metric(&cp.x);
    let gram = cp.jac.transpose() * &metric * &cp.jac;
    let det = gram.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(LabError::DegenerateGeometry(format!("induced metric degenerate at chart point {u:?}")));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::DegenerateGeometry("induced metric not positive definite".into()))?;
    let linv = chol.l().try_inverse().ok_or_else(|| LabError::DegenerateGeometry("singular frame".into()))?;
    let tangent = &cp.jac * linv.transpose();
    let gamma = amb.christoffel(&cp.x);
    let ginv = chol.inverse();
    let normal = normal_basis(&cp.jac, &metric)?;
    let mut hvec = DVector::zeros(cp.x.len());
    if let Some(nb) = &normal {
        let gn = &metric * nb;
        for i in 0..k {
            for j in 0..k {
                let ji = cp.jac.column(i).into_owned();
                let jj = cp.jac.column(j).into_owned();
                let acc = &cp.second[i * k + j] + AmbientSpace::connection_term(&gamma, &ji, &jj);
                hvec += nb * (gn.transpose() * acc) * ginv[(i, j)];
            }
        }
    }
    Ok(PatchFrame { cp, metric, gram, sqrt_det: det.sqrt(), tangent, mean_curvature: hvec, gamma })
}

/// `g`-orthonormal basis of the normal space of `span J`, from the
/// Euclidean complement; exact zeros survive for flat configurations.
fn normal_basis(jac: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let (n, k) = jac.shape();
    if n == k {
        return Ok(None);
    }
    let mut full = DMatrix::zeros(n, n);
    full.columns_mut(0, k).copy_from(jac);
    let q = full.qr().q();
    let comp = q.columns(k, n - k).into_owned();
    let ginv = g.clone().try_inverse().ok_or_else(|| LabError::DegenerateGeometry("singular ambient metric".into()))?;
    let raw = ginv * comp;
    let gram = raw.transpose() * g * &raw;
    let chol = gram.cholesky().ok_or_else(|| LabError::DegenerateGeometry("degenerate normal space".into()))?;
    let linv = chol.l().try_inverse().ok_or_else(|| LabError::DegenerateGeometry("degenerate normal space".into()))?;
    Ok(Some(raw * linv.transpose()))
}

/// `v^⊥` with respect to the metric `g` and orthonormal tangent frame `E`.
pub(crate) fn normal_part(e: &DMatrix<f64>, g: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let coeff = e.transpose() * (g * v);
    v - e * coeff
}

fn radial_fields(amb: &AmbientSpace, x: &DVector<f64>, tangent: &DMatrix<f64>) -> (f64, f64, f64, f64, f64) {
    let y = x - amb.pole();
    let r = y.norm();
    let w = amb.comparison();
    let (h, hp) = (w.h(r), w.h_prime(r));
    if r == 0.0 {
        return (0.0, h, hp, 1.0, 0.0);
    }
    let u = y / r;
    let g = amb.metric(x);
    let coeff = tangent.transpose() * (&g * &u);
    let perp = &u - tangent * &coeff;
    // Normal part by direct projection: 1 - |t|² loses all digits when M
    // is nearly radial.
    let nr = (&g * &perp).dot(&perp).max(0.0).sqrt().min(1.0);
    (r, h, hp, coeff.norm_squared().clamp(0.0, 1.0), nr)
}

fn grading_key(gamma_ref: f64) -> u32 {
    (gamma_ref.abs() * 4.0).ceil().min(1e6) as u32
}

impl Submanifold {
    pub fn from_mesh(ambient: Arc<AmbientSpace>, mesh: SimplicialMesh, quadrature_order: usize) -> Result<Self> {
        if !ambient.is_euclidean() {
            return Err(LabError::InvalidArgument(
                "simplicial meshes are only supported in Euclidean ambients".into(),
            ));
        }
        if mesh.ambient_dim() != ambient.dim() {
            return Err(LabError::InvalidArgument(format!(
                "mesh lives in R^{} but the ambient has dimension {}",
                mesh.ambient_dim(),
                ambient.dim()
            )));
        }
        check_order(quadrature_order)?;
        let (vertex_h, vertex_tangent): (Vec<_>, Vec<_>) = mesh.vertex_fits()?.into_iter().unzip();
        let frames = (0..mesh.cells().len()).map(|i| mesh.cell_frame(i)).collect();
        let bary_grads = (0..mesh.cells().len()).map(|i| mesh.barycentric_gradients(i)).collect();
        let boundary_vertices = mesh.boundary_vertices();
        let label = format!("mesh k={} cells={}", mesh.dim(), mesh.cells().len());
        Ok(Submanifold {
            ambient,
            repr: Representation::Mesh(Box::new(MeshData { mesh, vertex_h, vertex_tangent, frames, bary_grads, boundary_vertices })),
            quadrature_order,
            level: 0,
            label,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_patch(
        ambient: Arc<AmbientSpace>,
        shape: PatchShape,
        resolution: usize,
        quadrature_order: usize,
    ) -> Result<Self> {
        if shape.ambient_dim() != ambient.dim() {
            return Err(LabError::InvalidArgument(format!(
                "patch lives in dimension {} but the ambient has dimension {}",
                shape.ambient_dim(),
                ambient.dim()
            )));
        }
        if resolution == 0 {
            return Err(LabError::InvalidArgument("patch resolution must be positive".into()));
        }
        check_order(quadrature_order)?;
        let label = format!("patch k={} res={resolution}", shape.dim());
        Ok(Submanifold {
            ambient,
            repr: Representation::Patch { shape, resolution },
            quadrature_order,
            level: 0,
            label,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_level(mut self, level: usize) -> Self {
        self.level = level;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Representation::Mesh(m) => m.mesh.dim(),
            Representation::Patch { shape, .. } => shape.dim(),
        }
    }

    pub fn ambient(&self) -> &AmbientSpace {
        &self.ambient
    }

    pub fn ambient_arc(&self) -> Arc<AmbientSpace> {
        self.ambient.clone()
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature_order
    }

    pub fn is_mesh(&self) -> bool {
        matches!(self.repr, Representation::Mesh(_))
    }

    pub(crate) fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn shape_coordinate(&self) -> ShapeCoordinate {
        match &self.repr {
            Representation::Mesh(m) => m.mesh.shape_coordinate().clone(),
            Representation::Patch { shape, .. } => shape.shape_coordinate(),
        }
    }

    pub fn has_boundary(&self) -> bool {
        match &self.repr {
            Representation::Mesh(m) => !m.mesh.boundary().is_empty(),
            Representation::Patch { shape, .. } => !shape.boundary_faces().is_empty(),
        }
    }

    /// Discretization graded for weights `h^{-γ}` with `|γ| ≤ gamma_ref`.
    pub fn discretization(&self, gamma_ref: f64) -> Result<Arc<Discretization>> {
        let key = grading_key(gamma_ref);
        if let Some(d) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(d.clone());
        }
        let g = key as f64 / 4.0;
        let d = Arc::new(match &self.repr {
            Representation::Mesh(m) => self.mesh_discretization(m, g)?,
            Representation::Patch { shape, resolution } => self.patch_discretization(shape, *resolution, g)?,
        });
        self.cache.lock().expect("cache poisoned").insert(key, d.clone());
        Ok(d)
    }

    // ---- meshes -------------------------------------------------------

    fn mesh_discretization(&self, m: &MeshData, gamma_ref: f64) -> Result<Discretization> {
        let k = m.mesh.dim();
        let rule = SimplexRule::for_order(k, self.quadrature_order);
        let check = SimplexRule::check_for_order(k, self.quadrature_order);
        let mesh = &m.mesh;
        let scale = (0..mesh.cells().len()).map(|i| mesh.cell_diameter(i)).fold(0.0, f64::max);
        let per_cell: Vec<(Vec<Site>, Vec<Site>, usize, bool)> = (0..mesh.cells().len())
            .into_par_iter()
            .map(|c| {
                let verts: Vec<&DVector<f64>> = mesh.cells()[c].iter().map(|&v| &mesh.vertices()[v]).collect();
                let vol = mesh.cell_volume(c);
                let pole_tol = 1e-12 * scale.max(1e-300);
                let mut subs = Vec::new();
                let ident: Vec<Vec<f64>> =
                    (0..=k).map(|i| (0..=k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
                let has_pole = verts.iter().any(|v| self.ambient.distance(v) <= pole_tol);
                refine_simplex(&self.ambient, &verts, ident, 0, 0, gamma_ref, pole_tol, &mut subs);
                let mut main = Vec::new();
                let mut chk = Vec::new();
                for sub in &subs {
                    let ratio = bary_volume_ratio(sub);
                    for (r, out) in [(&rule, &mut main), (&check, &mut chk)] {
                        for (p, w) in r.points.iter().zip(&r.weights) {
                            let bary: Vec<f64> =
                                (0..=k).map(|i| (0..=k).map(|j| p[j] * sub[j][i]).sum()).collect();
                            out.push(self.mesh_site(m, c, &verts, bary, w * vol * ratio));
                        }
                    }
                }
                (main, chk, subs.len(), has_pole)
            })
            .collect();
        let mut main = Vec::new();
        let mut chk = Vec::new();
        let mut sub_cells = 0;
        let mut contains_pole = false;
        for (a, b, n, p) in per_cell {
            main.extend(a);
            chk.extend(b);
            sub_cells += n;
            contains_pole |= p;
        }
        let (boundary, boundary_check) = self.mesh_boundary_sites(m)?;
        let max_r = mesh.vertices().iter().map(|v| self.ambient.distance(v)).fold(0.0, f64::max);
        Ok(Discretization {
            stats: MeshStats {
                base_cells: mesh.cells().len(),
                sub_cells,
                sites: main.len(),
                boundary_sites: boundary.len(),
                level: self.level,
                mesh_size: scale,
            },
            main,
            check: chk,
            boundary,
            boundary_check,
            contains_pole,
            max_r,
        })
    }

    fn mesh_site(&self, m: &MeshData, c: usize, verts: &[&DVector<f64>], bary: Vec<f64>, weight: f64) -> Site {
        let n = verts[0].len();
        let mut x = DVector::zeros(n);
        let mut hvec = DVector::zeros(n);
        for (i, &l) in bary.iter().enumerate() {
            x += verts[i] * l;
            hvec += &m.vertex_h[m.mesh.cells()[c][i]] * l;
        }
        let tangent = m.frames[c].clone();
        let (r, h, hp, t2, nr) = radial_fields(&self.ambient, &x, &tangent);
        let hn = hvec.norm();
        Site {
            x,
            weight,
            tangent,
            mean_curvature: hvec,
            mean_curvature_norm: hn,
            r,
            h,
            h_prime: hp,
            radial_tangent_sq: t2,
            radial_normal: nr,
            cell: c,
            bary,
            chart: Vec::new(),
        }
    }

    fn mesh_boundary_sites(&self, m: &MeshData) -> Result<(Vec<BoundarySite>, Vec<BoundarySite>)> {
        let mesh = &m.mesh;
        let k = mesh.dim();
        let mut owner: HashMap<Vec<usize>, usize> = HashMap::new();
        for (c, cell) in mesh.cells().iter().enumerate() {
            for skip in 0..=k {
                let mut f: Vec<usize> =
                    cell.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
                f.sort_unstable();
                owner.insert(f, c);
            }
        }
        let rule = SimplexRule::for_order(k - 1, self.quadrature_order);
        let check = SimplexRule::check_for_order(k - 1, self.quadrature_order);
        let mut main = Vec::new();
        let mut chk = Vec::new();
        for facet in mesh.boundary() {
            let mut key = facet.clone();
            key.sort_unstable();
            let c = *owner
                .get(&key)
                .ok_or_else(|| LabError::DegenerateGeometry("boundary facet without cell".into()))?;
            let cell = &mesh.cells()[c];
            let fpts: Vec<&DVector<f64>> = facet.iter().map(|&v| &mesh.vertices()[v]).collect();
            let opposite = cell.iter().position(|v| !facet.contains(v)).expect("opposite vertex");
            let vol = SimplicialMesh::simplex_volume(&fpts);
            // Outward conormal: from the opposite vertex, orthogonal to the facet.
            let base = fpts[0];
            let mut nu = base - &mesh.vertices()[cell[opposite]];
            if k > 1 {
                let d = SimplicialMesh::edge_matrix(&fpts);
                let q = d.qr().q().columns(0, k - 1).into_owned();
                nu = &nu - &q * (q.transpose() * &nu);
            }
            let nu = nu.normalize();
            for (r, out) in [(&rule, &mut main), (&check, &mut chk)] {
                for (p, w) in r.points.iter().zip(&r.weights) {
                    let mut bary = vec![0.0; k + 1];
                    let mut x = DVector::zeros(base.len());
                    for (j, &v) in facet.iter().enumerate() {
                        let slot = cell.iter().position(|&cv| cv == v).expect("facet vertex in cell");
                        bary[slot] += p[j];
                        x += fpts[j] * p[j];
                    }
                    out.push(self.boundary_site(x, w * vol, nu.clone(), c, bary));
                }
            }
        }
        Ok((main, chk))
    }

    fn boundary_site(&self, x: DVector<f64>, weight: f64, conormal: DVector<f64>, cell: usize, bary: Vec<f64>) -> BoundarySite {
        let y = &x - self.ambient.pole();
        let r = y.norm();
        let w = self.ambient.comparison();
        let radial_conormal = if r > 0.0 { (y / r).dot(&conormal) } else { 0.0 };
        BoundarySite { h: w.h(r), h_prime: w.h_prime(r), x, weight, conormal, r, radial_conormal, cell, bary }
    }

    // ---- patches ------------------------------------------------------

    fn base_boxes(shape: &PatchShape, resolution: usize) -> Vec<Vec<(f64, f64)>> {
        let bx = shape.chart_box();
        let div = shape.base_divisions(resolution);
        let mut cells: Vec<Vec<(f64, f64)>> = vec![vec![]];
        for (axis, &(lo, hi)) in bx.iter().enumerate() {
            let n = div[axis];
            let mut next = Vec::with_capacity(cells.len() * n);
            for c in &cells {
                for i in 0..n {
                    let a = lo + (hi - lo) * i as f64 / n as f64;
                    let b = lo + (hi - lo) * (i + 1) as f64 / n as f64;
                    let mut d = c.clone();
                    d.push((a, b));
                    next.push(d);
                }
            }
            cells = next;
        }
        cells
    }

    fn patch_discretization(&self, shape: &PatchShape, resolution: usize, gamma_ref: f64) -> Result<Discretization> {
        let k = shape.dim();
        let npts = BoxRule::points_for_order(self.quadrature_order);
        let rule = BoxRule::tensor(k, npts);
        let check = BoxRule::tensor(k, (npts - 1).max(1));
        let cells = Self::base_boxes(shape, resolution);
        let extent = shape.chart_box();
        let scale = match shape {
            PatchShape::FlatBall { radius, .. }
            | PatchShape::Sphere { radius, .. }
            | PatchShape::Graph { radius, .. } => *radius,
        };
        let pole_tol = 1e-12 * scale;
        #[allow(clippy::type_complexity)]
        let per_cell: Vec<Result<(Vec<Site>, Vec<Site>, usize, bool)>> = cells
            .par_iter()
            .enumerate()
            .map(|(c, cell)| {
                let mut subs = Vec::new();
                let has_pole = box_samples(cell)
                    .iter()
                    .any(|u| self.ambient.distance(&shape.eval(u).x) <= pole_tol);
                refine_box(&self.ambient, shape, cell.clone(), 0, 0, gamma_ref, pole_tol, &mut subs);
                let mut main = Vec::new();
                let mut chk = Vec::new();
                for sub in &subs {
                    let vol: f64 = sub.iter().map(|(a, b)| b - a).product();
                    for (r, out) in [(&rule, &mut main), (&check, &mut chk)] {
                        for (p, w) in r.points.iter().zip(&r.weights) {
                            let u: Vec<f64> = p.iter().zip(sub).map(|(t, (a, b))| a + t * (b - a)).collect();
                            out.push(self.patch_site(shape, &u, w * vol, c)?);
                        }
                    }
                }
                Ok((main, chk, subs.len(), has_pole))
            })
            .collect();
        let mut main = Vec::new();
        let mut chk = Vec::new();
        let mut sub_cells = 0;
        let mut contains_pole = false;
        for r in per_cell {
            let (a, b, n, p) = r?;
            main.extend(a);
            chk.extend(b);
            sub_cells += n;
            contains_pole |= p;
        }
        let (boundary, boundary_check) = self.patch_boundary_sites(shape, &cells, &extent, npts)?;
        let max_r = main.iter().map(|s| s.r).fold(0.0, f64::max);
        let base = cells.len();
        let mesh_size = scale / resolution as f64;
        Ok(Discretization {
            stats: MeshStats {
                base_cells: base,
                sub_cells,
                sites: main.len(),
                boundary_sites: boundary.len(),
                level: self.level,
                mesh_size,
            },
            main,
            check: chk,
            boundary,
            boundary_check,
            contains_pole,
            max_r,
        })
    }

    fn patch_site(&self, shape: &PatchShape, u: &[f64], chart_weight: f64, cell: usize) -> Result<Site> {
        let f = patch_frame(&self.ambient, shape, u)?;
        let (r, h, hp, t2, nr) = radial_fields(&self.ambient, &f.cp.x, &f.tangent);
        let hn = (&f.metric * &f.mean_curvature).dot(&f.mean_curvature).max(0.0).sqrt();
        Ok(Site {
            weight: chart_weight * f.sqrt_det,
            mean_curvature_norm: hn,
            mean_curvature: f.mean_curvature,
            tangent: f.tangent,
            x: f.cp.x,
            r,
            h,
            h_prime: hp,
            radial_tangent_sq: t2,
            radial_normal: nr,
            cell,
            bary: Vec::new(),
            chart: u.to_vec(),
        })
    }

    fn patch_boundary_sites(
        &self,
        shape: &PatchShape,
        cells: &[Vec<(f64, f64)>],
        extent: &[(f64, f64)],
        npts: usize,
    ) -> Result<(Vec<BoundarySite>, Vec<BoundarySite>)> {
        let k = shape.dim();
        let rule = BoxRule::tensor(k - 1, npts);
        let check = BoxRule::tensor(k - 1, (npts - 1).max(1));
        let mut main = Vec::new();
        let mut chk = Vec::new();
        for (axis, upper) in shape.boundary_faces() {
            let at = if upper { extent[axis].1 } else { extent[axis].0 };
            for (c, cell) in cells.iter().enumerate() {
                let edge = if upper { cell[axis].1 } else { cell[axis].0 };
                if edge != at {
                    continue;
                }
                let free: Vec<usize> = (0..k).filter(|&i| i != axis).collect();
                let vol: f64 = free.iter().map(|&i| cell[i].1 - cell[i].0).product();
                for (r, out) in [(&rule, &mut main), (&check, &mut chk)] {
                    for (p, w) in r.points.iter().zip(&r.weights) {
                        let mut u = vec![0.0; k];
                        u[axis] = at;
                        for (t, &i) in p.iter().zip(&free) {
                            u[i] = cell[i].0 + t * (cell[i].1 - cell[i].0);
                        }
                        out.push(self.patch_boundary_site(shape, &u, axis, upper, w * vol, c)?);
                    }
                }
            }
        }
        Ok((main, chk))
    }

    fn patch_boundary_site(
        &self,
        shape: &PatchShape,
        u: &[f64],
        axis: usize,
        upper: bool,
        chart_weight: f64,
        cell: usize,
    ) -> Result<BoundarySite> {
        let cp = shape.eval(u);
        let k = shape.dim();
        let g = self.ambient.metric(&cp.x);
        let free: Vec<usize> = (0..k).filter(|&i| i != axis).collect();
        let jf = DMatrix::from_columns(&free.iter().map(|&i| cp.jac.column(i).into_owned()).collect::<Vec<_>>());
        let mut out = cp.jac.column(axis).into_owned() * if upper { 1.0 } else { -1.0 };
        let face_weight = if free.is_empty() {
            1.0
        } else {
            let gf = jf.transpose() * &g * &jf;
            let det = gf.determinant();
            if !(det > 0.0) {
                return Err(LabError::DegenerateGeometry("degenerate boundary face".into()));
            }
            let chol = gf.cholesky().expect("positive face metric");
            let ef = &jf * chol.l().try_inverse().expect("invertible").transpose();
            out = normal_part(&ef, &g, &out);
            det.sqrt()
        };
        let len = (&g * &out).dot(&out).sqrt();
        if !(len > 0.0) {
            return Err(LabError::DegenerateGeometry("vanishing conormal".into()));
        }
        let nu = out / len;
        let y = &cp.x - self.ambient.pole();
        let r = y.norm();
        let radial_conormal = if r > 0.0 { (y / r).dot(&(&g * &nu)) } else { 0.0 };
        let w = self.ambient.comparison();
        Ok(BoundarySite {
            h: w.h(r),
            h_prime: w.h_prime(r),
            x: cp.x,
            weight: chart_weight * face_weight,
            conormal: nu,
            r,
            radial_conormal,
            cell,
            bary: Vec::new(),
        })
    }

    // ---- fields and integrals -----------------------------------------

    /// Evaluate `ψ` and `|∇^M ψ|` at all sites. On meshes `ψ` is replaced by
    /// its piecewise-linear interpolant; boundary vertices are zeroed when
    /// the field is flagged as vanishing.
    pub fn sample(&self, disc: &Discretization, field: &ScalarField) -> Samples {
        match &self.repr {
            Representation::Mesh(m) => {
                let vals: Vec<f64> = m
                    .mesh
                    .vertices()
                    .par_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        if field.vanishes_on_boundary() && m.boundary_vertices.contains(&i) {
                            0.0
                        } else {
                            field.value(v)
                        }
                    })
                    .collect();
                let cell_grad: Vec<f64> = (0..m.mesh.cells().len())
                    .into_par_iter()
                    .map(|c| {
                        let cell = &m.mesh.cells()[c];
                        let mut g = DVector::zeros(m.mesh.ambient_dim());
                        for (i, &v) in cell.iter().enumerate() {
                            g += &m.bary_grads[c][i] * vals[v];
                        }
                        g.norm()
                    })
                    .collect();
                let interp = |cell: usize, bary: &[f64]| -> f64 {
                    m.mesh.cells()[cell].iter().zip(bary).map(|(&v, l)| vals[v] * l).sum()
                };
                let site = |s: &Site| FieldSample { value: interp(s.cell, &s.bary), grad_norm: cell_grad[s.cell] };
                Samples {
                    main: disc.main.par_iter().map(site).collect(),
                    check: disc.check.par_iter().map(site).collect(),
                    boundary: disc.boundary.iter().map(|b| interp(b.cell, &b.bary)).collect(),
                    boundary_check: disc.boundary_check.iter().map(|b| interp(b.cell, &b.bary)).collect(),
                }
            }
            Representation::Patch { .. } => {
                let site = |s: &Site| {
                    let (v, d) = field.eval(&s.x);
                    FieldSample { value: v, grad_norm: (s.tangent.transpose() * d).norm() }
                };
                let bnd = |b: &BoundarySite| if field.vanishes_on_boundary() { 0.0 } else { field.value(&b.x) };
                Samples {
                    main: disc.main.par_iter().map(site).collect(),
                    check: disc.check.par_iter().map(site).collect(),
                    boundary: disc.boundary.par_iter().map(bnd).collect(),
                    boundary_check: disc.boundary_check.par_iter().map(bnd).collect(),
                }
            }
        }
    }
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 {
        return Err(LabError::InvalidArgument("quadrature order must be positive".into()));
    }
    Ok(())
}

fn bary_volume_ratio(sub: &[Vec<f64>]) -> f64 {
    let k1 = sub.len();
    DMatrix::from_fn(k1, k1, |i, j| sub[i][j]).determinant().abs()
}

fn radius_range(amb: &AmbientSpace, pts: &[DVector<f64>], pole_tol: f64) -> (f64, f64, Option<usize>) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut pole = None;
    for (i, p) in pts.iter().enumerate() {
        let r = amb.distance(p);
        if r <= pole_tol {
            pole = Some(i);
        }
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (if pole.is_some() { 0.0 } else { lo }, hi, pole)
}

fn needs_split(lo: f64, hi: f64, gamma_ref: f64) -> bool {
    gamma_ref > 0.0 && (lo == 0.0 || (hi / lo).powf(gamma_ref) > WEIGHT_VARIATION)
}

#[allow(clippy::too_many_arguments)]
fn refine_simplex(
    amb: &AmbientSpace,
    verts: &[&DVector<f64>],
    sub: Vec<Vec<f64>>,
    pole_depth: usize,
    extra_depth: usize,
    gamma_ref: f64,
    pole_tol: f64,
    out: &mut Vec<Vec<Vec<f64>>>,
) {
    let k = sub.len() - 1;
    let pts: Vec<DVector<f64>> = sub
        .iter()
        .map(|b| b.iter().zip(verts).fold(DVector::zeros(verts[0].len()), |a, (l, v)| a + *v * *l))
        .collect();
    let (lo, hi, pole) = radius_range(amb, &pts, pole_tol);
    let split = needs_split(lo, hi, gamma_ref)
        && match pole {
            Some(_) => pole_depth < POLE_DEPTH,
            None => extra_depth < SIMPLEX_EXTRA_DEPTH,
        };
    if !split {
        out.push(sub);
        return;
    }
    let mid = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
    if let Some(p) = pole {
        // Shrink toward the pole vertex; the remainder is cut into simplices.
        let others: Vec<usize> = (0..=k).filter(|&i| i != p).collect();
        let ms: Vec<Vec<f64>> = others.iter().map(|&i| mid(&sub[p], &sub[i])).collect();
        let mut inner = vec![sub[p].clone()];
        inner.extend(ms.iter().cloned());
        refine_simplex(amb, verts, inner, pole_depth + 1, extra_depth, gamma_ref, pole_tol, out);
        let vs: Vec<Vec<f64>> = others.iter().map(|&i| sub[i].clone()).collect();
        let rest: Vec<Vec<Vec<f64>>> = match k {
            1 => vec![vec![ms[0].clone(), vs[0].clone()]],
            2 => vec![
                vec![ms[0].clone(), vs[0].clone(), vs[1].clone()],
                vec![ms[0].clone(), vs[1].clone(), ms[1].clone()],
            ],
            _ => vec![
                vec![ms[0].clone(), ms[1].clone(), ms[2].clone(), vs[0].clone()],
                vec![ms[1].clone(), ms[2].clone(), vs[0].clone(), vs[1].clone()],
                vec![ms[2].clone(), vs[0].clone(), vs[1].clone(), vs[2].clone()],
            ],
        };
        for r in rest {
            refine_simplex(amb, verts, r, pole_depth + 1, 0, gamma_ref, pole_tol, out);
        }
    } else {
        // Longest-edge bisection.
        let mut best = (0, 1, -1.0);
        for a in 0..=k {
            for b in a + 1..=k {
                let d = (&pts[a] - &pts[b]).norm();
                if d > best.2 {
                    best = (a, b, d);
                }
            }
        }
        let m = mid(&sub[best.0], &sub[best.1]);
        let mut c1 = sub.clone();
        c1[best.1] = m.clone();
        let mut c2 = sub;
        c2[best.0] = m;
        refine_simplex(amb, verts, c1, pole_depth, extra_depth + 1, gamma_ref, pole_tol, out);
        refine_simplex(amb, verts, c2, pole_depth, extra_depth + 1, gamma_ref, pole_tol, out);
    }
}

/// Corners and centre of a chart box.
fn box_samples(cell: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let k = cell.len();
    let mut out = Vec::with_capacity((1 << k) + 1);
    for mask in 0..(1usize << k) {
        out.push((0..k).map(|i| if mask >> i & 1 == 1 { cell[i].1 } else { cell[i].0 }).collect());
    }
    out.push(cell.iter().map(|(a, b)| 0.5 * (a + b)).collect());
    out
}

#[allow(clippy::too_many_arguments)]
fn refine_box(
    amb: &AmbientSpace,
    shape: &PatchShape,
    cell: Vec<(f64, f64)>,
    pole_depth: usize,
    extra_depth: usize,
    gamma_ref: f64,
    pole_tol: f64,
    out: &mut Vec<Vec<(f64, f64)>>,
) {
    let pts: Vec<DVector<f64>> = box_samples(&cell).iter().map(|u| shape.eval(u).x).collect();
    let (lo, hi, pole) = radius_range(amb, &pts, pole_tol);
    let split = needs_split(lo, hi, gamma_ref)
        && match pole {
            Some(_) => pole_depth < POLE_DEPTH,
            None => extra_depth < BOX_EXTRA_DEPTH,
        };
    if !split {
        out.push(cell);
        return;
    }
    let k = cell.len();
    // Radial variation across each axis, measured between face centres.
    let centre: Vec<f64> = cell.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let variation: Vec<f64> = (0..k)
        .map(|i| {
            let mut ul = centre.clone();
            let mut uh = centre.clone();
            ul[i] = cell[i].0;
            uh[i] = cell[i].1;
            let rl = amb.distance(&shape.eval(&ul).x);
            let rh = amb.distance(&shape.eval(&uh).x);
            if rl <= pole_tol || rh <= pole_tol {
                f64::INFINITY
            } else {
                (rh / rl).ln().abs()
            }
        })
        .collect();
    let vmax = variation.iter().cloned().fold(0.0, f64::max);
    let mut axes: Vec<usize> = if vmax.is_infinite() {
        (0..k).filter(|&i| variation[i].is_infinite()).collect()
    } else {
        (0..k).filter(|&i| variation[i] >= 0.5 * vmax && variation[i] > 0.0).collect()
    };
    if axes.is_empty() {
        axes = (0..k).collect();
    }
    let mut children = vec![cell];
    for &a in &axes {
        let mut next = Vec::with_capacity(children.len() * 2);
        for c in children {
            let m = 0.5 * (c[a].0 + c[a].1);
            let mut l = c.clone();
            l[a].1 = m;
            let mut h = c;
            h[a].0 = m;
            next.push(l);
            next.push(h);
        }
        children = next;
    }
    for c in children {
        let touches = box_samples(&c).iter().any(|u| amb.distance(&shape.eval(u).x) <= pole_tol);
        if touches {
            refine_box(amb, shape, c, pole_depth + 1, extra_depth, gamma_ref, pole_tol, out);
        } else {
            refine_box(amb, shape, c, pole_depth + 1, extra_depth + 1, gamma_ref, pole_tol, out);
        }
    }
}

impl Discretization {
    fn sum_sites<F>(sites: &[Site], samples: &[FieldSample], gamma: f64, kind: WeightKind, f: &F) -> Result<f64>
    where
        F: Fn(&Site, &FieldSample) -> f64 + Sync,
    {
        let vals: Vec<f64> = sites
            .par_iter()
            .zip(samples.par_iter())
            .map(|(s, v)| {
                let g = f(s, v);
                if g < 0.0 {
                    return f64::NAN;
                }
                if g == 0.0 {
                    return 0.0;
                }
                let wk = match kind {
                    WeightKind::HPower => 1.0,
                    WeightKind::HPowerTimesHPrime => s.h_prime,
                };
                s.weight * g * wk * s.h.powf(-gamma)
            })
            .collect();
        if vals.iter().any(|v| v.is_nan()) {
            return Err(LabError::InvalidArgument("integrand must be nonnegative".into()));
        }
        Ok(vals.iter().sum())
    }

    /// `∫_M f · h'(r)^{0|1} / h(r)^γ`.
    pub fn weighted_integral<F>(&self, samples: &Samples, gamma: f64, kind: WeightKind, f: F) -> Result<Integral>
    where
        F: Fn(&Site, &FieldSample) -> f64 + Sync,
    {
        let k = self.main.first().map(|s| s.tangent.ncols()).unwrap_or(1) as f64;
        if self.contains_pole && gamma >= k {
            return Err(LabError::NonIntegrableWeight(format!(
                "weight h^-{gamma} is not integrable at the pole in dimension {k}"
            )));
        }
        let a = Self::sum_sites(&self.main, &samples.main, gamma, kind, &f)?;
        let b = Self::sum_sites(&self.check, &samples.check, gamma, kind, &f)?;
        Ok(Integral { value: a, error: (a - b).abs(), empty_boundary: false })
    }

    /// `∫_{∂M} f · h(r)^{1-γ}`, optionally times `⟨∇̄r, ν⟩`.
    pub fn boundary_integral<F>(&self, samples: &Samples, gamma: f64, with_radial_conormal: bool, f: F) -> Integral
    where
        F: Fn(&BoundarySite, f64) -> f64,
    {
        if self.boundary.is_empty() {
            return Integral { value: 0.0, error: 0.0, empty_boundary: true };
        }
        let sum = |sites: &[BoundarySite], vals: &[f64]| -> f64 {
            sites
                .iter()
                .zip(vals)
                .map(|(b, &v)| {
                    let g = f(b, v);
                    if g == 0.0 {
                        return 0.0;
                    }
                    let c = if with_radial_conormal { b.radial_conormal } else { 1.0 };
                    b.weight * g * c * b.h.powf(1.0 - gamma)
                })
                .sum()
        };
        let a = sum(&self.boundary, &samples.boundary);
        let b = sum(&self.boundary_check, &samples.boundary_check);
        Integral { value: a, error: (a - b).abs(), empty_boundary: false }
    }

    pub fn volume(&self) -> f64 {
        self.main.iter().map(|s| s.weight).sum()
    }

    /// Volume of `{ψ ≠ 0}` from the quadrature sites.
    pub fn support_volume(&self, samples: &Samples) -> f64 {
        self.main.iter().zip(&samples.main).filter(|(_, v)| v.value != 0.0).map(|(s, _)| s.weight).sum()
    }

    pub fn max_mean_curvature(&self) -> f64 {
        self.main.iter().map(|s| s.mean_curvature_norm).fold(0.0, f64::max)
    }
}

//! Simplicial meshes in Euclidean space: OFF-style IO, generators, and
//! per-vertex mean curvature from local quadratic fits.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::field::ShapeCoordinate;
use crate::error::{LabError, Result};

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    k: usize,
    vertices: Vec<DVector<f64>>,
    cells: Vec<Vec<usize>>,
    boundary: Vec<Vec<usize>>,
    shape: ShapeCoordinate,
}

fn facet_key(f: &[usize]) -> Vec<usize> {
    let mut s = f.to_vec();
    s.sort_unstable();
    s
}

fn topological_boundary(k: usize, cells: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut count: HashMap<Vec<usize>, (usize, Vec<usize>)> = HashMap::new();
    for c in cells {
        for skip in 0..=k {
            let f: Vec<usize> = c.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
            let e = count.entry(facet_key(&f)).or_insert((0, f));
            e.0 += 1;
        }
    }
    let mut out: Vec<Vec<usize>> = count.into_values().filter(|(n, _)| *n == 1).map(|(_, f)| f).collect();
    out.sort_by_key(|f| facet_key(f));
    out
}

impl SimplicialMesh {
    /// Build and validate. `boundary`, when given, must equal the
    /// topological boundary of the cell complex.
    pub fn new(
        k: usize,
        vertices: Vec<DVector<f64>>,
        cells: Vec<Vec<usize>>,
        boundary: Option<Vec<Vec<usize>>>,
        shape: Option<ShapeCoordinate>,
    ) -> Result<Self> {
        if !(1..=3).contains(&k) {
            return Err(LabError::InvalidArgument(format!("mesh dimension {k} unsupported")));
        }
        if vertices.is_empty() || cells.is_empty() {
            return Err(LabError::InvalidArgument("mesh needs vertices and cells".into()));
        }
        let n = vertices[0].len();
        if n < k || vertices.iter().any(|v| v.len() != n) {
            return Err(LabError::InvalidArgument("inconsistent vertex dimensions".into()));
        }
        for c in &cells {
            if c.len() != k + 1 || c.iter().any(|&i| i >= vertices.len()) {
                return Err(LabError::InvalidArgument(format!("malformed cell {c:?}")));
            }
        }
        let computed = topological_boundary(k, &cells);
        let boundary = match boundary {
            Some(b) if !b.is_empty() => {
                let given: BTreeSet<Vec<usize>> = b.iter().map(|f| facet_key(f)).collect();
                let expect: BTreeSet<Vec<usize>> = computed.iter().map(|f| facet_key(f)).collect();
                if given != expect {
                    return Err(LabError::InvalidArgument(
                        "boundary facets do not match the topological boundary".into(),
                    ));
                }
                b
            }
            _ => computed,
        };
        let shape = shape.unwrap_or_else(|| {
            let c = vertices.iter().fold(DVector::zeros(n), |a, v| a + v) / vertices.len() as f64;
            let src: Vec<usize> = if boundary.is_empty() {
                (0..vertices.len()).collect()
            } else {
                boundary.iter().flatten().copied().collect()
            };
            let radius = src.iter().map(|&i| (&vertices[i] - &c).norm()).fold(0.0, f64::max);
            ShapeCoordinate::Ball { center: c, radius: radius.max(f64::MIN_POSITIVE) }
        });
        let mesh = SimplicialMesh { k, vertices, cells, boundary, shape };
        for (i, _) in mesh.cells.iter().enumerate() {
            if !(mesh.cell_volume(i) > 0.0) {
                return Err(LabError::DegenerateGeometry(format!("cell {i} has zero volume")));
            }
        }
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn ambient_dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn boundary(&self) -> &[Vec<usize>] {
        &self.boundary
    }

    pub fn shape_coordinate(&self) -> &ShapeCoordinate {
        &self.shape
    }

    pub fn boundary_vertices(&self) -> BTreeSet<usize> {
        self.boundary.iter().flatten().copied().collect()
    }

    /// Edge matrix `[v₁ - v₀, …, v_k - v₀]` of a simplex.
    pub fn edge_matrix(points: &[&DVector<f64>]) -> DMatrix<f64> {
        let n = points[0].len();
        let k = points.len() - 1;
        DMatrix::from_fn(n, k, |a, j| points[j + 1][a] - points[0][a])
    }

    pub fn simplex_volume(points: &[&DVector<f64>]) -> f64 {
        let k = points.len() - 1;
        if k == 0 {
            return 1.0;
        }
        let d = Self::edge_matrix(points);
        let det = (d.transpose() * &d).determinant().max(0.0);
        det.sqrt() / (1..=k).map(|i| i as f64).product::<f64>()
    }

    fn cell_points(&self, i: usize) -> Vec<&DVector<f64>> {
        self.cells[i].iter().map(|&v| &self.vertices[v]).collect()
    }

    pub fn cell_volume(&self, i: usize) -> f64 {
        Self::simplex_volume(&self.cell_points(i))
    }

    pub fn cell_diameter(&self, i: usize) -> f64 {
        let p = self.cell_points(i);
        let mut d: f64 = 0.0;
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                d = d.max((p[a] - p[b]).norm());
            }
        }
        d
    }

    /// Orthonormal basis of the cell's tangent plane.
    pub fn cell_frame(&self, i: usize) -> DMatrix<f64> {
        let d = Self::edge_matrix(&self.cell_points(i));
        let qr = d.qr();
        qr.q().columns(0, self.k).into_owned()
    }

    /// Ambient gradients of the barycentric coordinates of cell `i`.
    pub fn barycentric_gradients(&self, i: usize) -> Vec<DVector<f64>> {
        let d = Self::edge_matrix(&self.cell_points(i));
        let m = (d.transpose() * &d).try_inverse().expect("nondegenerate cell");
        let g = &d * m;
        let mut out = Vec::with_capacity(self.k + 1);
        let sum = (0..self.k).fold(DVector::zeros(d.nrows()), |a, j| a + g.column(j));
        out.push(-sum);
        for j in 0..self.k {
            out.push(g.column(j).into_owned());
        }
        out
    }

    /// Vertex neighbourhoods (one-ring) as sorted sets.
    pub fn vertex_neighbours(&self) -> Vec<BTreeSet<usize>> {
        let mut nb = vec![BTreeSet::new(); self.vertices.len()];
        for c in &self.cells {
            for &a in c {
                for &b in c {
                    if a != b {
                        nb[a].insert(b);
                    }
                }
            }
        }
        nb
    }

    /// Mean curvature vector at every vertex from a quadratic fit of the
    /// embedding over the two-ring.
    pub fn vertex_mean_curvature(&self) -> Result<Vec<DVector<f64>>> {
        Ok(self.vertex_fits()?.into_iter().map(|(h, _)| h).collect())
    }

    /// Per-vertex mean curvature and tangent projector of the fitted surface.
    pub fn vertex_fits(&self) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let k = self.k;
        let n = self.ambient_dim();
        if k == n {
            return Ok(vec![(DVector::zeros(n), DMatrix::identity(n, n)); self.vertices.len()]);
        }
        let one = self.vertex_neighbours();
        let unknowns = k + k * (k + 1) / 2;
        let mut out = Vec::with_capacity(self.vertices.len());
        for v in 0..self.vertices.len() {
            let mut ring: BTreeSet<usize> = one[v].clone();
            for &w in &one[v] {
                ring.extend(one[w].iter().copied());
            }
            ring.remove(&v);
            if ring.len() < unknowns {
                return Err(LabError::InsufficientStencil(format!(
                    "vertex {v} has {} neighbours, fit needs {unknowns}",
                    ring.len()
                )));
            }
            out.push(self.fit_at(v, &ring)?);
        }
        Ok(out)
    }

    fn fit_at(&self, v: usize, ring: &BTreeSet<usize>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let k = self.k;
        let n = self.ambient_dim();
        let x0 = &self.vertices[v];
        let offs = DMatrix::from_columns(&ring.iter().map(|&w| &self.vertices[w] - x0).collect::<Vec<_>>());
        // Principal directions of the neighbourhood: tangent first.
        let eig = (&offs * offs.transpose()).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let pick = |idx: &[usize]| {
            DMatrix::from_columns(&idx.iter().map(|&j| eig.eigenvectors.column(j).into_owned()).collect::<Vec<_>>())
        };
        let tangent = pick(&order[..k]);
        let normal = pick(&order[k..]);
        let coords = tangent.transpose() * &offs;
        let heights = normal.transpose() * &offs;
        let m = ring.len();
        let quad: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
        let cols = k + quad.len();
        let scale = coords.abs().max().max(f64::MIN_POSITIVE);
        let design = DMatrix::from_fn(m, cols, |row, c| {
            let uc = coords.column(row) / scale;
            if c < k {
                uc[c]
            } else {
                let (i, j) = quad[c - k];
                uc[i] * uc[j]
            }
        });
        let dsvd = design.svd(true, true);
        let mut a = DMatrix::zeros(n - k, k);
        let mut second = vec![DVector::zeros(n); k * k];
        for comp in 0..(n - k) {
            let rhs = heights.row(comp).transpose();
            let sol = dsvd
                .solve(&rhs, 1e-12)
                .map_err(|e| LabError::DegenerateGeometry(format!("quadratic fit: {e}")))?;
            for i in 0..k {
                a[(comp, i)] = sol[i] / scale;
            }
            for (q, &(i, j)) in quad.iter().enumerate() {
                let c = sol[k + q] / (scale * scale);
                let nc = normal.column(comp);
                if i == j {
                    second[i * k + i] += nc * (2.0 * c);
                } else {
                    second[i * k + j] += nc * c;
                    second[j * k + i] += nc * c;
                }
            }
        }
        let jac = &tangent + &normal * &a;
        let g = jac.transpose() * &jac;
        let ginv = g.clone().try_inverse().ok_or_else(|| LabError::DegenerateGeometry("fit metric".into()))?;
        let pt = &jac * &ginv * jac.transpose();
        let mut h = DVector::zeros(n);
        for i in 0..k {
            for j in 0..k {
                let s = &second[i * k + j];
                let perp = s - &pt * s;
                h += perp * ginv[(i, j)];
            }
        }
        Ok((h, pt))
    }

    /// Parse the OFF-style format (`OFF [k n]`, counts, vertices, cells,
    /// optional boundary facets).
    pub fn parse_off(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty());
        let head: Vec<&str> = lines.next().ok_or_else(|| LabError::Parse("empty mesh file".into()))?.split_whitespace().collect();
        if head.first() != Some(&"OFF") {
            return Err(LabError::Parse("expected OFF header".into()));
        }
        let rest: Vec<String> = lines.flat_map(|l| l.split_whitespace()).map(str::to_owned).collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| LabError::Parse(format!("{s}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| LabError::Parse(format!("{s}: {e}")));
        let (k, n) = match head.len() {
            1 => (2, 3),
            3 => (int(head[1])?, int(head[2])?),
            _ => return Err(LabError::Parse("header must be `OFF` or `OFF k n`".into())),
        };
        let mut pos = 0;
        let get = |pos: &mut usize| -> Result<&str> {
            let t = rest.get(*pos).ok_or_else(|| LabError::Parse("unexpected end of mesh file".into()))?;
            *pos += 1;
            Ok(t.as_str())
        };
        let nv = int(get(&mut pos)?)?;
        let nc = int(get(&mut pos)?)?;
        let nb = int(get(&mut pos)?)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut v = DVector::zeros(n);
            for a in 0..n {
                v[a] = num(get(&mut pos)?)?;
            }
            vertices.push(v);
        }
        let read_simplices = |count: usize, size: usize, pos: &mut usize| -> Result<Vec<Vec<usize>>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let m = int(get(pos)?)?;
                if m != size {
                    return Err(LabError::Parse(format!("expected {size} indices, found {m}")));
                }
                let mut s = Vec::with_capacity(m);
                for _ in 0..m {
                    s.push(int(get(pos)?)?);
                }
                out.push(s);
            }
            Ok(out)
        };
        let cells = read_simplices(nc, k + 1, &mut pos)?;
        let boundary = if nb > 0 && pos < rest.len() { Some(read_simplices(nb, k, &mut pos)?) } else { None };
        SimplicialMesh::new(k, vertices, cells, boundary, None)
    }

    pub fn to_off(&self) -> String {
        let mut s = format!(
            "OFF {} {}\n{} {} {}\n",
            self.k,
            self.ambient_dim(),
            self.vertices.len(),
            self.cells.len(),
            self.boundary.len()
        );
        for v in &self.vertices {
            let c: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
            s.push_str(&c.join(" "));
            s.push('\n');
        }
        for c in self.cells.iter().chain(&self.boundary) {
            let idx: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            s.push_str(&format!("{} {}\n", c.len(), idx.join(" ")));
        }
        s
    }

    /// Concentric-ring triangulation of a disk: ring `i` carries `6i`
    /// vertices, `6 n²` triangles in total.
    pub fn disk(rings: usize, radius: f64, center: DVector<f64>, frame: DMatrix<f64>) -> Result<Self> {
        let f = frame.clone();
        let c = center.clone();
        Self::ring_mesh(rings, move |rho, th| &c + (f.column(0) * th.cos() + f.column(1) * th.sin()) * (rho * radius))
            .and_then(|(v, cells)| {
                SimplicialMesh::new(
                    2,
                    v,
                    cells,
                    None,
                    Some(ShapeCoordinate::Planar { center, frame: frame.columns(0, 2).into_owned(), radius }),
                )
            })
    }

    /// Ring triangulation of the spherical cap of angular radius
    /// `max_angle` around the third frame column.
    pub fn cap(rings: usize, radius: f64, max_angle: f64, center: DVector<f64>, frame: DMatrix<f64>) -> Result<Self> {
        if !(max_angle > 0.0 && max_angle < PI) {
            return Err(LabError::InvalidArgument("cap angle must lie in (0, π)".into()));
        }
        let f = frame.clone();
        let c = center.clone();
        let (v, cells) = Self::ring_mesh(rings, move |rho, th| {
            let chi = rho * max_angle;
            &c + (f.column(0) * (chi.sin() * th.cos()) + f.column(1) * (chi.sin() * th.sin()) + f.column(2) * chi.cos())
                * radius
        })?;
        SimplicialMesh::new(
            2,
            v,
            cells,
            None,
            Some(ShapeCoordinate::Spherical {
                center,
                axis: frame.column(2).into_owned(),
                radius,
                cos_max: max_angle.cos(),
            }),
        )
    }

    #[allow(clippy::type_complexity)]
    fn ring_mesh<F>(rings: usize, place: F) -> Result<(Vec<DVector<f64>>, Vec<Vec<usize>>)>
    where
        F: Fn(f64, f64) -> DVector<f64>,
    {
        if rings == 0 {
            return Err(LabError::InvalidArgument("ring mesh needs at least one ring".into()));
        }
        let mut vertices = vec![place(0.0, 0.0)];
        let mut start = vec![0usize];
        for i in 1..=rings {
            start.push(vertices.len());
            let m = 6 * i;
            for j in 0..m {
                vertices.push(place(i as f64 / rings as f64, 2.0 * PI * j as f64 / m as f64));
            }
        }
        let mut cells = Vec::with_capacity(6 * rings * rings);
        for i in 1..=rings {
            let outer = 6 * i;
            let o = |j: usize| start[i] + j % outer;
            if i == 1 {
                for j in 0..outer {
                    cells.push(vec![0, o(j), o(j + 1)]);
                }
                continue;
            }
            let inner = 6 * (i - 1);
            let inn = |j: usize| start[i - 1] + j % inner;
            let (mut a, mut b) = (0usize, 0usize);
            while a < inner || b < outer {
                let ta = (a + 1) as f64 / inner as f64;
                let tb = (b + 1) as f64 / outer as f64;
                if b < outer && (a == inner || tb <= ta) {
                    cells.push(vec![inn(a), o(b), o(b + 1)]);
                    b += 1;
                } else {
                    cells.push(vec![inn(a), o(b), inn(a + 1)]);
                    a += 1;
                }
            }
        }
        Ok((vertices, cells))
    }

    /// Subdivided icosahedron projected onto the sphere of radius `radius`
    /// about `center` in R³. Level `l` has `20·4^l` triangles.
    pub fn icosphere(level: usize, radius: f64, center: DVector<f64>) -> Result<Self> {
        if center.len() != 3 {
            return Err(LabError::InvalidArgument("icosphere lives in R^3".into()));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let raw = [
            [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
            [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
            [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
        ];
        let mut verts: Vec<DVector<f64>> =
            raw.iter().map(|p| DVector::from_row_slice(p).normalize()).collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..level {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<DVector<f64>>| -> usize {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    verts.push(((&verts[a] + &verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            for f in &faces {
                let ab = midpoint(f[0], f[1], &mut verts);
                let bc = midpoint(f[1], f[2], &mut verts);
                let ca = midpoint(f[2], f[0], &mut verts);
                next.extend([[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let vertices = verts.into_iter().map(|v| &center + v * radius).collect();
        SimplicialMesh::new(
            2,
            vertices,
            faces.into_iter().map(|f| f.to_vec()).collect(),
            None,
            Some(ShapeCoordinate::Spherical {
                center,
                axis: DVector::from_vec(vec![0.0, 0.0, 1.0]),
                radius,
                cos_max: -1.0,
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_frame() -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    #[test]
    fn disk_counts_and_area() {
        let m = SimplicialMesh::disk(10, 1.0, DVector::zeros(3), plane_frame()).unwrap();
        assert_eq!(m.cells().len(), 600);
        assert_eq!(m.boundary().len(), 60);
        let area: f64 = (0..m.cells().len()).map(|i| m.cell_volume(i)).sum();
        let exact = 0.5 * 60.0 * (2.0 * PI / 60.0).sin();
        assert!((area - exact).abs() < 1e-12);
    }

    #[test]
    fn icosphere_is_closed() {
        let m = SimplicialMesh::icosphere(2, 1.0, DVector::zeros(3)).unwrap();
        assert_eq!(m.cells().len(), 320);
        assert!(m.boundary().is_empty());
    }

    #[test]
    fn flat_fit_has_no_curvature() {
        let m = SimplicialMesh::disk(4, 1.0, DVector::zeros(3), plane_frame()).unwrap();
        for h in m.vertex_mean_curvature().unwrap() {
            assert!(h.norm() < 1e-10);
        }
    }

    #[test]
    fn sphere_fit_curvature() {
        let worst = |level: usize| {
            let m = SimplicialMesh::icosphere(level, 2.0, DVector::zeros(3)).unwrap();
            let hs = m.vertex_mean_curvature().unwrap();
            let mut w: f64 = 0.0;
            for (v, h) in m.vertices().iter().zip(&hs) {
                assert!(h.dot(v) < 0.0);
                w = w.max((h.norm() - 1.0).abs());
            }
            w
        };
        let (w3, w4) = (worst(3), worst(4));
        eprintln!("{w3} {w4}");
        assert!(w4 < 0.5 * w3);
        assert!(w4 < 0.01);
    }

    #[test]
    fn off_roundtrip() {
        let m = SimplicialMesh::disk(3, 1.0, DVector::zeros(3), plane_frame()).unwrap();
        let back = SimplicialMesh::parse_off(&m.to_off()).unwrap();
        assert_eq!(back.cells(), m.cells());
        assert_eq!(back.boundary().len(), m.boundary().len());
        assert!((&back.vertices()[5] - &m.vertices()[5]).norm() < 1e-15);
    }

    #[test]
    fn plain_off_header() {
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let m = SimplicialMesh::parse_off(text).unwrap();
        assert_eq!(m.boundary().len(), 3);
    }

    #[test]
    fn wrong_boundary_rejected() {
        let text = "OFF 2 3\n3 1 1\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n2 0 1\n";
        assert!(SimplicialMesh::parse_off(text).is_err());
    }

    #[test]
    fn too_small_stencil() {
        let v = vec![
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        ];
        let m = SimplicialMesh::new(2, v, vec![vec![0, 1, 2]], None, None).unwrap();
        assert!(matches!(m.vertex_mean_curvature(), Err(LabError::InsufficientStencil(_))));
    }
}

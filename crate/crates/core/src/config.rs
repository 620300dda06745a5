//! Experiment configuration: TOML tables describing the ambient space, the
//! submanifold, the inequalities, the test functions and the run options.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::constants::BalanceInput;
use crate::error::{LabError, Result};
use crate::geometry::{AmbientSpace, PatchShape, SimplicialMesh, Submanifold};
use crate::inequalities::{self, InequalityId};
use crate::search::FunctionFamily;
use crate::warp::{CurvatureProfile, WarpingFunction};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub description: String,
    pub ambient: AmbientConfig,
    pub submanifold: SubmanifoldConfig,
    pub inequality: OneOrMany<InequalityConfig>,
    pub field: Option<OneOrMany<FieldConfig>>,
    #[serde(default)]
    pub run: RunConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientConfig {
    /// `euclidean` or `warped`.
    pub kind: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Constant radial curvature `b²`; negative values give a hyperbolic warp.
    pub curvature: Option<f64>,
    /// Two-column `r K(r)` profile file.
    pub profile: Option<PathBuf>,
    pub r_max: Option<f64>,
    pub ode_step: Option<f64>,
    pub r0: Option<f64>,
    pub injectivity_radius: Option<f64>,
    /// The volume threshold `𝒟`.
    pub volume_threshold: Option<f64>,
}

fn default_dim() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmanifoldConfig {
    /// `flat_disk`, `flat_ball`, `sphere`, `cap`, `graph`, `mesh_disk`,
    /// `mesh_cap`, `icosphere` or `mesh`.
    pub shape: String,
    #[serde(default = "one")]
    pub radius: f64,
    pub center: Option<Vec<f64>>,
    /// Dimension of a flat ball.
    pub k: Option<usize>,
    /// Rotation of a flat disk out of the `x₁x₂` plane.
    #[serde(default)]
    pub tilt: f64,
    /// Translation of a flat disk along `x₃`.
    #[serde(default)]
    pub offset: f64,
    /// Angular radius of a cap.
    pub angle: Option<f64>,
    /// Graph monomials `[i, j, c]`.
    pub coeffs: Option<Vec<(u32, u32, f64)>>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    pub mesh: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_resolution() -> usize {
    4
}

fn default_order() -> usize {
    4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityConfig {
    pub id: String,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub t: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub a: Option<f64>,
    #[serde(default)]
    pub minimal: bool,
}

impl InequalityConfig {
    pub fn inequality_id(&self) -> Result<InequalityId> {
        self.id.parse()
    }

    pub fn balance_input(&self) -> BalanceInput {
        BalanceInput {
            k: None,
            p: self.p,
            q: self.q,
            t: self.t,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
            a: self.a,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// `radial_power`, `radial_bump`, `polynomial`, `random_smooth` or `constant`.
    pub family: String,
    pub dof: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub boundary_vanishing: bool,
    pub modes: Option<usize>,
    /// Value of a `constant` field.
    pub value: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one_level")]
    pub levels: usize,
    #[serde(default)]
    pub seed: u64,
    pub slack: Option<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

fn one_level() -> usize {
    1
}

fn default_budget() -> usize {
    100
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { levels: 1, seed: 0, slack: None, budget: 100, json: None, csv: None }
    }
}

/// A test function: a family member or a constant.
#[derive(Debug, Clone)]
pub enum FieldSpec {
    Family(FunctionFamily),
    Constant(f64),
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Dimension of the submanifold, known without building any geometry.
    pub fn submanifold_dim(&self) -> Result<usize> {
        let s = &self.submanifold;
        Ok(match s.shape.as_str() {
            "flat_disk" | "sphere" | "cap" | "graph" | "mesh_disk" | "mesh_cap" | "icosphere" => 2,
            "flat_ball" => s.k.unwrap_or(3),
            "mesh" => {
                let path = s.mesh.as_ref().ok_or_else(|| LabError::InvalidArgument("shape 'mesh' needs a mesh path".into()))?;
                let path = self.resolve(path);
                if !path.exists() {
                    return Err(LabError::InvalidArgument(format!("mesh file {} does not exist", path.display())));
                }
                return Ok(self.load_mesh()?.dim());
            }
            other => return Err(LabError::InvalidArgument(format!("unknown submanifold shape '{other}'"))),
        })
    }

    fn load_mesh(&self) -> Result<SimplicialMesh> {
        let path = self.resolve(self.submanifold.mesh.as_ref().expect("checked"));
        SimplicialMesh::parse_off(&std::fs::read_to_string(&path)?)
    }

    /// Validate everything that does not need geometry: ids, exponents,
    /// balance closures, families, file references.
    pub fn validate(&self) -> Result<()> {
        let k = self.submanifold_dim()?;
        if !(self.ambient.kind == "euclidean" || self.ambient.kind == "warped") {
            return Err(LabError::InvalidArgument(format!("unknown ambient kind '{}'", self.ambient.kind)));
        }
        if let Some(p) = &self.ambient.profile {
            if !self.resolve(p).exists() {
                return Err(LabError::InvalidArgument(format!("profile file {} does not exist", p.display())));
            }
        }
        if self.run.levels == 0 {
            return Err(LabError::InvalidArgument("levels must be at least 1".into()));
        }
        for ineq in self.inequality.to_vec() {
            let id = ineq.inequality_id()?;
            precheck(id, &ineq.balance_input(), k)?;
        }
        for f in self.fields(self.run.seed)? {
            if let FieldSpec::Family(fam) = &f {
                fam.with_dof(&fam.dof)?;
            }
        }
        Ok(())
    }

    pub fn ambient_space(&self) -> Result<AmbientSpace> {
        let a = &self.ambient;
        let amb = match a.kind.as_str() {
            "euclidean" => {
                let amb = AmbientSpace::euclidean(a.dim)?;
                match a.r0 {
                    Some(r0) => amb.with_r0(r0)?,
                    None => amb,
                }
            }
            "warped" => {
                let step = a.ode_step.unwrap_or(1e-3);
                let r_max = a.r_max.unwrap_or(4.0);
                let metric = match (&a.profile, a.curvature) {
                    (Some(path), None) => {
                        let text = std::fs::read_to_string(self.resolve(path))?;
                        WarpingFunction::ode(CurvatureProfile::parse(&text)?, r_max, step)?
                    }
                    (None, Some(c)) if c >= 0.0 => WarpingFunction::analytic(c),
                    (None, Some(c)) => {
                        WarpingFunction::ode(CurvatureProfile::tabulated_signed(vec![(0.0, c), (r_max, c)])?, r_max, step)?
                    }
                    _ => {
                        return Err(LabError::InvalidArgument(
                            "warped ambient needs exactly one of 'curvature' and 'profile'".into(),
                        ))
                    }
                };
                let r0 = match a.r0 {
                    Some(r0) => r0,
                    None if metric.profile().max_value() <= 0.0 => f64::INFINITY,
                    None => return Err(LabError::InvalidArgument("warped ambient with positive curvature needs r0".into())),
                };
                AmbientSpace::warped(a.dim, metric, r0)?
            }
            other => return Err(LabError::InvalidArgument(format!("unknown ambient kind '{other}'"))),
        };
        match a.injectivity_radius {
            Some(inj) => amb.with_injectivity_radius(inj),
            None => Ok(amb),
        }
    }

    fn center(&self, n: usize) -> Result<DVector<f64>> {
        match &self.submanifold.center {
            Some(c) if c.len() == n => Ok(DVector::from_vec(c.clone())),
            Some(c) => Err(LabError::InvalidArgument(format!("center has {} coordinates, ambient has {n}", c.len()))),
            None => Ok(DVector::zeros(n)),
        }
    }

    fn axes(n: usize, k: usize) -> Result<DMatrix<f64>> {
        if k > n {
            return Err(LabError::InvalidArgument(format!("cannot place a {k}-dimensional shape in R^{n}")));
        }
        Ok(DMatrix::from_fn(n, k, |r, c| if r == c { 1.0 } else { 0.0 }))
    }

    /// The submanifold at refinement level `level` (resolution doubled per level).
    pub fn submanifold(&self, ambient: Arc<AmbientSpace>, level: usize) -> Result<Submanifold> {
        let s = &self.submanifold;
        let n = ambient.dim();
        let scale = 1usize << level;
        let order = s.quadrature_order;
        let res = s.resolution * scale;
        let label = format!("{} R={}", s.shape, s.radius);
        let sub = match s.shape.as_str() {
            "flat_disk" => {
                let mut frame = Self::axes(n, 2)?;
                let mut center = self.center(n)?;
                if s.tilt != 0.0 || s.offset != 0.0 {
                    if n < 3 {
                        return Err(LabError::InvalidArgument("tilted or offset disks need n >= 3".into()));
                    }
                    frame[(1, 1)] = s.tilt.cos();
                    frame[(2, 1)] = s.tilt.sin();
                    center[2] += s.offset;
                }
                Submanifold::from_patch(ambient, PatchShape::flat_ball(center, frame, s.radius)?, res, order)?
            }
            "flat_ball" => {
                let k = s.k.unwrap_or(3);
                Submanifold::from_patch(ambient, PatchShape::flat_ball(self.center(n)?, Self::axes(n, k)?, s.radius)?, res, order)?
            }
            "sphere" | "cap" => {
                let angle = if s.shape == "sphere" { std::f64::consts::PI } else { s.angle.unwrap_or(1.0) };
                let shape = PatchShape::sphere(self.center(n)?, Self::axes(n, 3)?, s.radius, angle)?;
                Submanifold::from_patch(ambient, shape, res, order)?
            }
            "graph" => {
                let shape = PatchShape::graph(self.center(n)?, Self::axes(n, 3)?, s.radius, s.coeffs.clone().unwrap_or_default())?;
                Submanifold::from_patch(ambient, shape, res, order)?
            }
            "mesh_disk" => {
                let mesh = SimplicialMesh::disk(res, s.radius, self.center(n)?, Self::axes(n, 2)?)?;
                Submanifold::from_mesh(ambient, mesh, order)?
            }
            "mesh_cap" => {
                let mesh = SimplicialMesh::cap(res, s.radius, s.angle.unwrap_or(1.0), self.center(n)?, Self::axes(n, 3)?)?;
                Submanifold::from_mesh(ambient, mesh, order)?
            }
            "icosphere" => {
                let mesh = SimplicialMesh::icosphere(s.resolution + level, s.radius, self.center(n)?)?;
                Submanifold::from_mesh(ambient, mesh, order)?
            }
            "mesh" => {
                if level > 0 {
                    return Err(LabError::InvalidArgument("mesh files cannot be refined; use levels = 1".into()));
                }
                Submanifold::from_mesh(ambient, self.load_mesh()?, order)?
            }
            other => return Err(LabError::InvalidArgument(format!("unknown submanifold shape '{other}'"))),
        };
        Ok(sub.with_level(level).with_label(label))
    }

    pub fn fields(&self, seed: u64) -> Result<Vec<FieldSpec>> {
        let n = self.ambient.dim;
        let list = match &self.field {
            Some(f) => f.to_vec(),
            None => vec![FieldConfig { family: "radial_power".into(), boundary_vanishing: true, ..Default::default() }],
        };
        list.iter()
            .map(|f| {
                let fam = match f.family.as_str() {
                    "constant" => return Ok(FieldSpec::Constant(f.value.unwrap_or(1.0))),
                    "radial_power" => FunctionFamily::radial_power(2.0),
                    "radial_bump" => FunctionFamily::radial_bump(1.0, 0.0),
                    "polynomial" => FunctionFamily::polynomial(n, f.boundary_vanishing)?,
                    "random_smooth" => FunctionFamily::random_smooth(seed, n, f.modes.unwrap_or(4), f.boundary_vanishing)?,
                    other => return Err(LabError::InvalidArgument(format!("unknown field family '{other}'"))),
                };
                let fam = match &f.dof {
                    Some(d) => fam.with_dof(d)?,
                    None => fam,
                };
                Ok(FieldSpec::Family(fam))
            })
            .collect()
    }
}

/// Exponent and closure checks for `id` on a `k`-dimensional submanifold.
pub fn precheck(id: InequalityId, input: &BalanceInput, k: usize) -> Result<()> {
    let need = |v: Option<f64>, n: &str| v.ok_or_else(|| LabError::InvalidArgument(format!("{id} needs {n}")));
    let kf = k as f64;
    match id {
        InequalityId::HardyProp31 | InequalityId::HardyThm32 | InequalityId::HardyCor33 => {
            let (p, gamma) = (need(input.p, "p")?, need(input.gamma, "gamma")?);
            if !(p >= 1.0) {
                return Err(LabError::InvalidExponent(format!("p = {p} must be at least 1")));
            }
            if !(gamma < kf) {
                return Err(LabError::InvalidExponent(format!("gamma = {gamma} must be below k = {k}")));
            }
            if id == InequalityId::HardyCor33 && !(p < kf) {
                return Err(LabError::InvalidExponent(format!("hardy_cor33 needs p < k, got p = {p}")));
            }
        }
        InequalityId::SobolevHs => {
            crate::constants::sobolev_exponent(k, need(input.p, "p")?)?;
        }
        InequalityId::WeightedHsThm44 => {
            let p = need(input.p, "p")?;
            crate::constants::sobolev_exponent(k, p)?;
            let gamma = p * (input.alpha.unwrap_or(0.0) + 1.0);
            if !(gamma < kf) {
                return Err(LabError::InvalidExponent(format!("p(alpha + 1) = {gamma} must be below k = {k}")));
            }
        }
        InequalityId::CknThm51 => {
            crate::constants::solve_balance(&BalanceInput {
                k: Some(k),
                p: input.p,
                alpha: Some(input.alpha.unwrap_or(0.0)),
                sigma: Some(need(input.sigma, "sigma")?),
                ..Default::default()
            })?;
        }
        InequalityId::CknThm52 => {
            crate::constants::solve_balance(&BalanceInput { k: Some(k), ..*input })?;
        }
        _ => {
            inequalities::specialize(id, input, k)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISK: &str = r#"
        [ambient]
        kind = "euclidean"

        [submanifold]
        shape = "flat_disk"
        resolution = 2

        [inequality]
        id = "hardy_thm32"
        p = 1.0
        gamma = 1.0
    "#;

    #[test]
    fn parse_and_build() {
        let cfg = ExperimentConfig::parse(DISK, Path::new(".")).unwrap();
        cfg.validate().unwrap();
        let amb = Arc::new(cfg.ambient_space().unwrap());
        let sub = cfg.submanifold(amb, 1).unwrap();
        assert_eq!(sub.dim(), 2);
        assert_eq!(sub.level(), 1);
    }

    #[test]
    fn invalid_configs_name_the_problem() {
        let bad = DISK.replace("gamma = 1.0", "gamma = 2.0");
        let cfg = ExperimentConfig::parse(&bad, Path::new(".")).unwrap();
        assert!(matches!(cfg.validate(), Err(LabError::InvalidExponent(m)) if m.contains("gamma")));
        let bad = DISK.replace("kind = \"euclidean\"", "kind = \"euclidean\"\nfoo = 1");
        assert!(matches!(ExperimentConfig::parse(&bad, Path::new(".")), Err(LabError::Parse(_))));
        let bad = DISK.replace("hardy_thm32", "hardy_thm99");
        let cfg = ExperimentConfig::parse(&bad, Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
    }
}

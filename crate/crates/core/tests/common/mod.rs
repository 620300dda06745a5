#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use ckn_lab::config::{precheck, ExperimentConfig};
use ckn_lab::constants::BalanceInput;
use ckn_lab::geometry::{ScalarField, Submanifold};
use ckn_lab::inequalities::{self, EvalOptions, InequalityId, InequalityReport};
use ckn_lab::search::FunctionFamily;
use ckn_lab::LabError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct CorpusEntry {
    pub name: &'static str,
    pub sub: Submanifold,
    pub minimal: bool,
}

/// Ambient table, submanifold table, minimality.
const CORPUS: &[(&str, &str, &str, bool)] = &[
    ("flat_disk", EUCLID3, r#"shape = "flat_disk"
resolution = 4"#, true),
    ("mesh_disk", EUCLID3, r#"shape = "mesh_disk"
resolution = 6"#, true),
    ("tilted_plane", EUCLID3, r#"shape = "flat_disk"
tilt = 0.5
offset = 0.3
resolution = 4"#, true),
    ("off_centre_disk", EUCLID3, r#"shape = "flat_disk"
center = [0.4, -0.2, 0.0]
radius = 0.8
resolution = 4"#, true),
    ("sphere", EUCLID3, r#"shape = "sphere"
radius = 0.5
center = [0.4, 0.0, 0.0]
resolution = 5"#, false),
    ("icosphere", EUCLID3, r#"shape = "icosphere"
radius = 0.8
center = [0.0, 0.3, 0.0]
resolution = 2"#, false),
    ("cap", EUCLID3, r#"shape = "cap"
radius = 1.0
angle = 1.0
center = [0.0, 0.0, -0.5]
resolution = 4"#, false),
    ("mesh_cap", EUCLID3, r#"shape = "mesh_cap"
radius = 1.0
angle = 1.2
center = [0.0, 0.0, -0.8]
resolution = 8"#, false),
    ("graph", EUCLID3, r#"shape = "graph"
radius = 0.9
coeffs = [[2, 0, 0.3], [1, 1, -0.2], [0, 2, 0.1]]
resolution = 4"#, false),
    ("flat_ball", EUCLID4, r#"shape = "flat_ball"
k = 3
resolution = 2
quadrature_order = 3"#, true),
    ("geodesic_disk", SPHERE3, r#"shape = "flat_disk"
radius = 0.8
resolution = 4"#, true),
    ("warped_tilted_disk", SPHERE3, r#"shape = "flat_disk"
radius = 0.6
offset = 0.2
tilt = 0.3
resolution = 4"#, false),
    ("warped_sphere", SPHERE3, r#"shape = "sphere"
radius = 0.3
center = [0.3, 0.2, 0.0]
resolution = 4"#, false),
    ("warped_cap", SPHERE3, r#"shape = "cap"
radius = 0.6
angle = 0.9
center = [0.0, 0.0, -0.3]
resolution = 4"#, false),
    ("geodesic_ball", SPHERE4, r#"shape = "flat_ball"
k = 3
radius = 0.7
resolution = 2
quadrature_order = 3"#, true),
];

const EUCLID3: &str = "kind = \"euclidean\"\ndim = 3";
const EUCLID4: &str = "kind = \"euclidean\"\ndim = 4";
const SPHERE3: &str = "kind = \"warped\"\ndim = 3\ncurvature = 1.0\nr0 = 1.2";
const SPHERE4: &str = "kind = \"warped\"\ndim = 4\ncurvature = 1.0\nr0 = 1.2";

pub fn config(ambient: &str, sub: &str) -> ExperimentConfig {
    let text = format!("[ambient]\n{ambient}\n\n[submanifold]\n{sub}\n\n[[inequality]]\nid = \"sobolev_hs\"\np = 1.0\n");
    ExperimentConfig::parse(&text, Path::new(".")).unwrap()
}

pub fn build(ambient: &str, sub: &str, level: usize) -> Submanifold {
    let cfg = config(ambient, sub);
    let amb = Arc::new(cfg.ambient_space().unwrap());
    cfg.submanifold(amb, level).unwrap()
}

pub fn corpus() -> Vec<CorpusEntry> {
    use rayon::prelude::*;
    CORPUS
        .par_iter()
        .map(|(name, amb, sub, minimal)| CorpusEntry { name, sub: build(amb, sub, 0), minimal: *minimal })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// A random admissible parameter draw for `id` on a `k`-dimensional
/// submanifold, or `None` when the id has no admissible parameters there.
pub fn draw_parameters(id: InequalityId, k: usize, rng: &mut ChaCha8Rng) -> Option<BalanceInput> {
    let kf = k as f64;
    for _ in 0..200 {
        let p_sob = uniform(rng, 1.0, (kf - 0.2).max(1.0 + 1e-9));
        let mut b = BalanceInput::default();
        match id {
            InequalityId::HardyProp31 | InequalityId::HardyThm32 => {
                b.p = Some(uniform(rng, 1.0, 4.0));
                b.gamma = Some(uniform(rng, -1.0, kf - 0.1));
            }
            InequalityId::HardyCor33 => {
                b.p = Some(p_sob);
                b.gamma = Some(uniform(rng, -1.0, kf - 0.1));
            }
            InequalityId::SobolevHs | InequalityId::MssWeighted => b.p = Some(p_sob),
            InequalityId::WeightedHsThm44 | InequalityId::HardyDerived => {
                b.p = Some(p_sob);
                b.alpha = Some(uniform(rng, -0.6, kf / p_sob - 1.0 - 0.05));
            }
            InequalityId::CknThm51 => {
                let alpha = uniform(rng, -0.6, kf / p_sob - 1.0 - 0.05);
                b.p = Some(p_sob);
                b.alpha = Some(alpha);
                b.sigma = Some(alpha + uniform(rng, 0.0, 1.0));
            }
            InequalityId::CknThm52 => {
                let alpha = uniform(rng, -0.6, kf / p_sob - 1.0 - 0.05);
                b.p = Some(p_sob);
                b.q = Some(uniform(rng, 1.0, 4.0));
                b.alpha = Some(alpha);
                b.beta = Some(uniform(rng, -0.5, 0.5));
                b.sigma = Some(alpha + uniform(rng, 0.0, 1.0));
                b.a = Some(uniform(rng, 0.0, 1.0));
            }
            InequalityId::GagliardoNirenberg => {
                b.p = Some(p_sob);
                b.q = Some(uniform(rng, 1.0, 4.0));
                b.a = Some(uniform(rng, 0.0, 1.0));
            }
            InequalityId::Nash | InequalityId::HeisenbergPauliWeyl => {}
        }
        if precheck(id, &b, k).is_ok() {
            return Some(b);
        }
        if matches!(id, InequalityId::Nash | InequalityId::HeisenbergPauliWeyl) {
            return None;
        }
    }
    None
}

/// Family number `i mod 4` with random dof inside its box.
pub fn draw_family(i: usize, ambient_dim: usize, rng: &mut ChaCha8Rng) -> FunctionFamily {
    let fam = match i % 4 {
        0 => FunctionFamily::radial_power(1.0),
        1 => FunctionFamily::radial_bump(1.0, 0.0),
        2 => FunctionFamily::polynomial(ambient_dim, true).unwrap(),
        _ => FunctionFamily::random_smooth(rng.gen(), ambient_dim, 4, true).unwrap(),
    };
    let dof: Vec<f64> = fam.lower.iter().zip(&fam.upper).map(|(l, u)| uniform(rng, *l, *u)).collect();
    let mut fam = fam.with_dof(&dof).unwrap();
    if matches!(i % 4, 2 | 3) {
        // Keep the constant mode dominant so the field is not nearly zero.
        let mut d = fam.dof.clone();
        d[0] = 1.0 + d[0].abs();
        fam = fam.with_dof(&d).unwrap();
    }
    fam
}

pub enum Outcome {
    Report(Box<InequalityReport>),
    /// The id has no admissible parameters or field on this entry.
    Skipped(String),
    Failed(LabError),
}

/// One corpus evaluation: draw `draw` of `id` on `entry`.
pub fn run_draw(entry: &CorpusEntry, id: InequalityId, draw: usize, seed: u64, opts: &EvalOptions) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((draw as u64) << 20) ^ ((id as u64) << 40));
    let k = entry.sub.dim();
    let Some(input) = draw_parameters(id, k, &mut rng) else {
        return Outcome::Skipped(format!("{id} has no admissible parameters for k = {k}"));
    };
    if id == InequalityId::HardyCor33 && !entry.sub.ambient().comparison().is_identity() {
        return Outcome::Skipped("hardy_cor33 needs a Euclidean comparison".into());
    }
    let mut fidx = draw;
    // The non-variational Hardy form needs psi >= 0.
    if id == InequalityId::HardyProp31 {
        fidx = draw % 2;
    }
    let fam = draw_family(fidx, entry.sub.ambient().dim(), &mut rng);
    let psi: ScalarField = fam.field(&entry.sub.shape_coordinate());
    match inequalities::evaluate(id, &entry.sub, &psi, &input, entry.minimal, opts) {
        Ok(r) => Outcome::Report(Box::new(r)),
        Err(e) => Outcome::Failed(e),
    }
}

//! Test-function families, derivative-free tightness maximization and
//! refinement studies.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::BalanceInput;
use crate::error::{LabError, Result};
use crate::geometry::{ScalarField, ShapeCoordinate, Submanifold};
use crate::inequalities::{evaluate, EvalOptions, InequalityId, InequalityReport};

/// Nelder–Mead coefficients: reflection, expansion, contraction, shrink.
const NM_COEFFS: (f64, f64, f64, f64) = (1.0, 2.0, 0.5, 0.5);
pub const MAX_DOF: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// `(1 - ρ)^m` with `ρ = √s`.
    RadialPower,
    /// `exp(c - c/(1 - s) - w s)`.
    RadialBump,
    /// `(1 - s)·(c₀ + c·x + c_q |x|²)`, the factor only when boundary vanishing.
    Polynomial,
    /// `(1 - s)·Σ a_j cos(ω_j·x + φ_j)` with seeded `ω_j, φ_j`.
    RandomSmooth,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionFamily {
    pub kind: FamilyKind,
    pub dof: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub boundary_vanishing: bool,
    pub seed: u64,
    #[serde(skip)]
    modes: Vec<(DVector<f64>, f64)>,
}

impl FunctionFamily {
    pub fn radial_power(m: f64) -> Self {
        FunctionFamily {
            kind: FamilyKind::RadialPower,
            dof: vec![m],
            lower: vec![0.5],
            upper: vec![12.0],
            boundary_vanishing: true,
            seed: 0,
            modes: vec![],
        }
    }

    pub fn radial_bump(c: f64, w: f64) -> Self {
        FunctionFamily {
            kind: FamilyKind::RadialBump,
            dof: vec![c, w],
            lower: vec![0.05, -2.0],
            upper: vec![10.0, 10.0],
            boundary_vanishing: true,
            seed: 0,
            modes: vec![],
        }
    }

    pub fn polynomial(ambient_dim: usize, boundary_vanishing: bool) -> Result<Self> {
        let n = ambient_dim + 2;
        if n > MAX_DOF {
            return Err(LabError::InvalidArgument(format!("polynomial family needs at most {MAX_DOF} dof, got {n}")));
        }
        let mut dof = vec![0.0; n];
        dof[0] = 1.0;
        Ok(FunctionFamily {
            kind: FamilyKind::Polynomial,
            dof,
            lower: vec![-2.0; n],
            upper: vec![2.0; n],
            boundary_vanishing,
            seed: 0,
            modes: vec![],
        })
    }

    /// `modes` amplitudes; the first mode is the constant.
    pub fn random_smooth(seed: u64, ambient_dim: usize, modes: usize, boundary_vanishing: bool) -> Result<Self> {
        if modes == 0 || modes > MAX_DOF {
            return Err(LabError::InvalidArgument(format!("random_smooth needs 1..={MAX_DOF} modes")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = vec![(DVector::zeros(ambient_dim), 0.0)];
        let mut dof = vec![1.0];
        for _ in 1..modes {
            let w = DVector::from_fn(ambient_dim, |_, _| rng.gen_range(-3.0..3.0));
            table.push((w, rng.gen_range(0.0..std::f64::consts::TAU)));
            dof.push(rng.gen_range(-0.5..0.5));
        }
        Ok(FunctionFamily {
            kind: FamilyKind::RandomSmooth,
            dof,
            lower: vec![-2.0; modes],
            upper: vec![2.0; modes],
            boundary_vanishing,
            seed,
            modes: table,
        })
    }

    pub fn is_nonnegative(&self) -> bool {
        matches!(self.kind, FamilyKind::RadialPower | FamilyKind::RadialBump)
    }

    pub fn with_dof(&self, dof: &[f64]) -> Result<Self> {
        if dof.len() != self.dof.len() {
            return Err(LabError::InvalidArgument(format!("expected {} dof, got {}", self.dof.len(), dof.len())));
        }
        let mut out = self.clone();
        out.dof = dof.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect();
        Ok(out)
    }

    pub fn label(&self) -> String {
        let dof: Vec<String> = self.dof.iter().map(|v| format!("{v:.6}")).collect();
        let tag = match self.kind {
            FamilyKind::RadialPower => "radial_power",
            FamilyKind::RadialBump => "radial_bump",
            FamilyKind::Polynomial => "polynomial",
            FamilyKind::RandomSmooth => "random_smooth",
        };
        format!("{tag}[{}]", dof.join(","))
    }

    /// The member at the current dof, built on the shape's boundary coordinate.
    pub fn field(&self, shape: &ShapeCoordinate) -> ScalarField {
        let shape = shape.clone();
        let dof = self.dof.clone();
        let vanish = self.boundary_vanishing;
        let modes = self.modes.clone();
        let kind = self.kind;
        ScalarField::new(self.label(), vanish, move |x: &DVector<f64>| {
            let (s, ds) = shape.eval(x);
            let s = s.clamp(0.0, 1.0);
            match kind {
                FamilyKind::RadialPower => {
                    let m = dof[0];
                    let rho = s.sqrt();
                    if rho >= 1.0 {
                        return (0.0, DVector::zeros(x.len()));
                    }
                    let v = (1.0 - rho).powf(m);
                    let g = if rho > 0.0 { &ds * (-m * (1.0 - rho).powf(m - 1.0) / (2.0 * rho)) } else { ds * 0.0 };
                    (v, g)
                }
                FamilyKind::RadialBump => {
                    let (c, w) = (dof[0], dof[1]);
                    if s >= 1.0 {
                        return (0.0, DVector::zeros(x.len()));
                    }
                    let e = c - c / (1.0 - s) - w * s;
                    let v = e.exp();
                    let de = -c / ((1.0 - s) * (1.0 - s)) - w;
                    (v, ds * (v * de))
                }
                FamilyKind::Polynomial | FamilyKind::RandomSmooth => {
                    let (p, dp) = if kind == FamilyKind::Polynomial {
                        let n = x.len();
                        let lin: f64 = (0..n).map(|i| dof[1 + i] * x[i]).sum();
                        let cq = dof[n + 1];
                        let grad = DVector::from_fn(n, |i, _| dof[1 + i] + 2.0 * cq * x[i]);
                        (dof[0] + lin + cq * x.norm_squared(), grad)
                    } else {
                        let mut v = 0.0;
                        let mut g = DVector::zeros(x.len());
                        for (a, (w, phi)) in dof.iter().zip(&modes) {
                            let arg = w.dot(x) + phi;
                            v += a * arg.cos();
                            g -= w * (a * arg.sin());
                        }
                        (v, g)
                    };
                    if vanish {
                        (p * (1.0 - s), dp * (1.0 - s) - ds * p)
                    } else {
                        (p, dp)
                    }
                }
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TightnessResult {
    pub record_type: String,
    pub inequality: InequalityId,
    pub submanifold: String,
    pub family: FamilyKind,
    pub seed_ratio: f64,
    pub best_ratio: f64,
    pub argmax_dof: Vec<f64>,
    pub evaluations: usize,
    pub best_slack: f64,
    pub satisfied: bool,
    pub refinement_trace: Vec<(usize, f64)>,
}

fn ratio_of(rep: &InequalityReport) -> f64 {
    if rep.is_vacuous() {
        return f64::NEG_INFINITY;
    }
    rep.ratio.unwrap_or(if rep.lhs > rep.rhs { f64::INFINITY } else { f64::NEG_INFINITY })
}

/// Simplex search over the family dof maximizing the report ratio.
pub fn maximize_ratio(
    id: InequalityId,
    sub: &Submanifold,
    family: &FunctionFamily,
    input: &BalanceInput,
    minimal: bool,
    budget: usize,
    opts: &EvalOptions,
) -> Result<TightnessResult> {
    if budget == 0 {
        return Err(LabError::InvalidArgument("search budget must be at least 1".into()));
    }
    if id.requires_boundary_vanishing() && !family.boundary_vanishing {
        return Err(LabError::PreconditionViolated(format!("{id} needs a boundary-vanishing family")));
    }
    if family.dof.len() > MAX_DOF {
        return Err(LabError::InvalidArgument(format!("at most {MAX_DOF} dof")));
    }
    let shape = sub.shape_coordinate();
    let run = |dof: &[f64]| -> Result<(f64, InequalityReport)> {
        let member = family.with_dof(dof)?;
        let rep = evaluate(id, sub, &member.field(&shape), input, minimal, opts)?;
        Ok((ratio_of(&rep), rep))
    };
    let (seed_ratio, seed_rep) = run(&family.dof)?;
    let mut evaluations = 1;
    let mut best = (seed_ratio, family.dof.clone(), seed_rep);
    let eval = |x: &[f64], evaluations: &mut usize, best: &mut (f64, Vec<f64>, InequalityReport)| -> f64 {
        *evaluations += 1;
        match run(x) {
            Ok((r, rep)) => {
                if r > best.0 {
                    *best = (r, family.with_dof(x).map(|f| f.dof).unwrap_or_else(|_| x.to_vec()), rep);
                }
                -r
            }
            Err(_) => f64::INFINITY,
        }
    };
    let n = family.dof.len();
    let clamp = |x: Vec<f64>| -> Vec<f64> {
        x.iter().zip(family.lower.iter().zip(&family.upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect()
    };
    if budget > 1 {
        let (alpha, gamma, rho, sigma) = NM_COEFFS;
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(family.dof.clone(), -seed_ratio)];
        for i in 0..n {
            if evaluations >= budget {
                break;
            }
            let mut x = family.dof.clone();
            let step = 0.1 * (family.upper[i] - family.lower[i]);
            x[i] = if x[i] + step <= family.upper[i] { x[i] + step } else { x[i] - step };
            let f = eval(&x, &mut evaluations, &mut best);
            simplex.push((x, f));
        }
        while simplex.len() == n + 1 && evaluations < budget {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if (simplex[n].1 - simplex[0].1).abs() < 1e-13 && simplex[n].1.is_finite() {
                break;
            }
            let centroid: Vec<f64> =
                (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> {
                clamp((0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect())
            };
            let xr = along(-alpha);
            let fr = eval(&xr, &mut evaluations, &mut best);
            if fr < simplex[0].1 {
                if evaluations >= budget {
                    simplex[n] = (xr, fr);
                    break;
                }
                let xe = along(-alpha * gamma);
                let fe = eval(&xe, &mut evaluations, &mut best);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                if evaluations >= budget {
                    break;
                }
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(-alpha * rho);
                    let fc = eval(&xc, &mut evaluations, &mut best);
                    (xc, fc)
                } else {
                    let xc = along(rho);
                    let fc = eval(&xc, &mut evaluations, &mut best);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for item in simplex.iter_mut().skip(1) {
                        if evaluations >= budget {
                            break;
                        }
                        let xs: Vec<f64> = (0..n).map(|j| x0[j] + sigma * (item.0[j] - x0[j])).collect();
                        let fs = eval(&xs, &mut evaluations, &mut best);
                        *item = (xs, fs);
                    }
                }
            }
        }
    }
    let (best_ratio, argmax_dof, rep) = best;
    Ok(TightnessResult {
        record_type: "search".into(),
        inequality: id,
        submanifold: sub.label().to_string(),
        family: family.kind,
        seed_ratio,
        best_ratio,
        argmax_dof,
        evaluations,
        best_slack: rep.slack,
        satisfied: rep.satisfied,
        refinement_trace: vec![(sub.level(), best_ratio)],
    })
}

/// Re-evaluate the maximizer at other refinement levels of the same geometry.
pub fn trace_refinement(
    result: &mut TightnessResult,
    family: &FunctionFamily,
    levels: &[Submanifold],
    input: &BalanceInput,
    minimal: bool,
    opts: &EvalOptions,
) -> Result<()> {
    let member = family.with_dof(&result.argmax_dof)?;
    result.refinement_trace.clear();
    for sub in levels {
        let rep = evaluate(result.inequality, sub, &member.field(&sub.shape_coordinate()), input, minimal, opts)?;
        result.refinement_trace.push((sub.level(), ratio_of(&rep)));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementEntry {
    pub level: usize,
    pub mesh_size: f64,
    pub cells: usize,
    pub ratio: Option<f64>,
    pub quadrature_error: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementStudy {
    pub inequality: InequalityId,
    pub entries: Vec<RefinementEntry>,
    /// Set when successive ratio differences fail to decrease.
    pub non_monotone: bool,
}

impl RefinementStudy {
    /// Observed orders `log(e_i/e_{i+1}) / log(h_i/h_{i+1})` of `|ratio - target|`.
    pub fn observed_orders(&self, target: f64) -> Vec<f64> {
        self.entries
            .windows(2)
            .filter_map(|w| {
                let e0 = (w[0].ratio? - target).abs();
                let e1 = (w[1].ratio? - target).abs();
                Some((e0 / e1).ln() / (w[0].mesh_size / w[1].mesh_size).ln())
            })
            .collect()
    }
}

pub fn refinement_study(
    id: InequalityId,
    levels: &[Submanifold],
    psi: &ScalarField,
    input: &BalanceInput,
    minimal: bool,
    opts: &EvalOptions,
) -> Result<RefinementStudy> {
    if levels.is_empty() {
        return Err(LabError::InvalidArgument("refinement study needs at least one level".into()));
    }
    for w in levels.windows(2) {
        if w[1].level() <= w[0].level() || w[1].label() != w[0].label() || w[1].dim() != w[0].dim() {
            return Err(LabError::InvalidArgument(
                "refinement levels must be nested refinements of one geometry with increasing level".into(),
            ));
        }
    }
    let mut entries = Vec::new();
    for sub in levels {
        let rep = evaluate(id, sub, psi, input, minimal, opts)?;
        entries.push(RefinementEntry {
            level: sub.level(),
            mesh_size: rep.mesh_stats.mesh_size,
            cells: rep.mesh_stats.sub_cells,
            ratio: rep.ratio,
            quadrature_error: rep.quadrature_error,
            degenerate: rep.is_vacuous(),
        });
    }
    let diffs: Vec<f64> = entries
        .windows(2)
        .filter_map(|w| Some((w[1].ratio? - w[0].ratio?).abs()))
        .collect();
    let non_monotone = diffs.windows(2).any(|d| d[1] > d[0] * (1.0 + 1e-9) + 1e-14);
    Ok(RefinementStudy { inequality: id, entries, non_monotone })
}

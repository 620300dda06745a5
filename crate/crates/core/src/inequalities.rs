//! Evaluator catalog: left and right hand sides of each inequality,
//! assembled from weighted integrals over a discretized submanifold.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constants::{self, BalanceInput, ConstantBundle, ParameterSet};
use crate::error::{LabError, Result};
use crate::geometry::{Discretization, Integral, MeshStats, Samples, ScalarField, Submanifold, WeightKind};

/// Discretization allowance in the slack policy.
pub const DEFAULT_SLACK: f64 = 5e-2;
pub const DEFAULT_MINIMALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityId {
    HardyProp31,
    HardyThm32,
    HardyCor33,
    SobolevHs,
    WeightedHsThm44,
    CknThm51,
    CknThm52,
    MssWeighted,
    HardyDerived,
    GagliardoNirenberg,
    Nash,
    HeisenbergPauliWeyl,
}

impl InequalityId {
    pub const ALL: [InequalityId; 12] = [
        InequalityId::HardyProp31,
        InequalityId::HardyThm32,
        InequalityId::HardyCor33,
        InequalityId::SobolevHs,
        InequalityId::WeightedHsThm44,
        InequalityId::CknThm51,
        InequalityId::CknThm52,
        InequalityId::MssWeighted,
        InequalityId::HardyDerived,
        InequalityId::GagliardoNirenberg,
        InequalityId::Nash,
        InequalityId::HeisenbergPauliWeyl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InequalityId::HardyProp31 => "hardy_prop31",
            InequalityId::HardyThm32 => "hardy_thm32",
            InequalityId::HardyCor33 => "hardy_cor33",
            InequalityId::SobolevHs => "sobolev_hs",
            InequalityId::WeightedHsThm44 => "weighted_hs_thm44",
            InequalityId::CknThm51 => "ckn_thm51",
            InequalityId::CknThm52 => "ckn_thm52",
            InequalityId::MssWeighted => "mss_weighted",
            InequalityId::HardyDerived => "hardy_derived",
            InequalityId::GagliardoNirenberg => "gagliardo_nirenberg",
            InequalityId::Nash => "nash",
            InequalityId::HeisenbergPauliWeyl => "heisenberg_pauli_weyl",
        }
    }

    /// Hardy-type inequalities hold for any `ψ ∈ C¹(M)`; the rest need `ψ = 0` on `∂M`.
    pub fn requires_boundary_vanishing(self) -> bool {
        !matches!(self, InequalityId::HardyProp31 | InequalityId::HardyThm32 | InequalityId::HardyCor33)
    }

    pub fn is_derived(self) -> bool {
        matches!(
            self,
            InequalityId::MssWeighted
                | InequalityId::HardyDerived
                | InequalityId::GagliardoNirenberg
                | InequalityId::Nash
                | InequalityId::HeisenbergPauliWeyl
        )
    }
}

impl fmt::Display for InequalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InequalityId {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        InequalityId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| LabError::InvalidArgument(format!("unknown inequality id '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Pass,
    Violation,
    /// `LHS = RHS = 0`; never evidence of tightness.
    VacuousPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisStatus {
    Verified,
    Unverified,
    NotApplicable,
}

impl ReportStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportStatus::Pass => "pass",
            ReportStatus::Violation => "violation",
            ReportStatus::VacuousPass => "vacuous_pass",
        }
    }
}

impl HypothesisStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HypothesisStatus::Verified => "verified",
            HypothesisStatus::Unverified => "unverified",
            HypothesisStatus::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    Sum,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub name: String,
    pub value: f64,
}

fn term(name: &str, value: f64) -> Term {
    Term { name: name.to_string(), value }
}

/// Hoffman–Spruck side conditions at `z = k/(k+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideConditions {
    pub b: f64,
    pub j_bar: f64,
    pub support_volume: f64,
    pub injectivity_radius: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub record_type: String,
    pub id: InequalityId,
    pub submanifold: String,
    pub field: String,
    pub params: BTreeMap<String, f64>,
    pub parameter_set: Option<ParameterSet>,
    pub constants: ConstantBundle,
    pub lhs_terms: Vec<Term>,
    /// How `rhs_terms` combine into `rhs`.
    pub rhs_combination: Combination,
    pub rhs_terms: Vec<Term>,
    pub diagnostics: Vec<Term>,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub quadrature_error: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub status: ReportStatus,
    pub hypothesis_status: HypothesisStatus,
    pub side_conditions: Option<SideConditions>,
    pub notes: Vec<String>,
    pub mesh_stats: MeshStats,
}

/// One CSV line per report.
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub id: String,
    pub submanifold: String,
    pub field: String,
    pub level: usize,
    pub cells: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub quadrature_error: f64,
    pub slack: f64,
    pub status: String,
    pub hypothesis_status: String,
}

impl InequalityReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.lhs_terms
            .iter()
            .chain(&self.rhs_terms)
            .chain(&self.diagnostics)
            .find(|t| t.name == name)
            .map(|t| t.value)
    }

    pub fn is_vacuous(&self) -> bool {
        self.status == ReportStatus::VacuousPass
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            id: self.id.to_string(),
            submanifold: self.submanifold.clone(),
            field: self.field.clone(),
            level: self.mesh_stats.level,
            cells: self.mesh_stats.sub_cells,
            lhs: self.lhs,
            rhs: self.rhs,
            ratio: self.ratio,
            quadrature_error: self.quadrature_error,
            slack: self.slack,
            status: self.status.as_str().into(),
            hypothesis_status: self.hypothesis_status.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub slack_allowance: f64,
    pub minimality_tolerance: f64,
    /// The volume threshold `𝒟`, when known.
    pub volume_threshold: Option<f64>,
    /// Override of the weight exponent the discretization is graded for.
    pub gamma_ref: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            slack_allowance: DEFAULT_SLACK,
            minimality_tolerance: DEFAULT_MINIMALITY_TOL,
            volume_threshold: None,
            gamma_ref: None,
        }
    }
}

struct Prep {
    disc: std::sync::Arc<Discretization>,
    samples: Samples,
    k: usize,
    hp0: f64,
}

fn prepare(sub: &Submanifold, psi: &ScalarField, gamma_ref: f64, vanish: bool, opts: &EvalOptions) -> Result<Prep> {
    let disc = sub.discretization(opts.gamma_ref.unwrap_or(gamma_ref))?;
    let amb = sub.ambient();
    if amb.r0().is_finite() && disc.max_r >= amb.r0() {
        return Err(LabError::PreconditionViolated(format!(
            "submanifold reaches r = {} outside the ball of radius r0 = {}",
            disc.max_r,
            amb.r0()
        )));
    }
    let samples = sub.sample(&disc, psi);
    if vanish && !disc.boundary.is_empty() && !psi.vanishes_on_boundary() {
        let scale = samples.main.iter().map(|s| s.value.abs()).fold(1.0, f64::max);
        let worst = samples.boundary.iter().chain(&samples.boundary_check).map(|v| v.abs()).fold(0.0, f64::max);
        if worst > 1e-10 * scale {
            return Err(LabError::PreconditionViolated(format!(
                "psi must vanish on the boundary, found |psi| = {worst:e}"
            )));
        }
    }
    Ok(Prep { disc, samples, k: sub.dim(), hp0: amb.h_prime_r0() })
}

type Assembly = (Vec<Term>, Vec<Term>, f64, f64);

struct Draft {
    id: InequalityId,
    params: BTreeMap<String, f64>,
    parameter_set: Option<ParameterSet>,
    constants: ConstantBundle,
    combination: Combination,
    diagnostics: Vec<Term>,
    hypothesis_status: HypothesisStatus,
    side_conditions: Option<SideConditions>,
    notes: Vec<String>,
}

impl Draft {
    fn new(id: InequalityId, constants: ConstantBundle) -> Self {
        Draft {
            id,
            params: BTreeMap::new(),
            parameter_set: None,
            constants,
            combination: Combination::Sum,
            diagnostics: Vec::new(),
            hypothesis_status: HypothesisStatus::NotApplicable,
            side_conditions: None,
            notes: Vec::new(),
        }
    }

    fn param(mut self, name: &str, v: f64) -> Self {
        self.params.insert(name.to_string(), v);
        self
    }
}

/// Ratio and its first-order sensitivity to each integral's error.
fn finish<F>(
    draft: Draft,
    sub: &Submanifold,
    psi: &ScalarField,
    prep: &Prep,
    integrals: &[(&str, Integral)],
    assemble: F,
    opts: &EvalOptions,
) -> InequalityReport
where
    F: Fn(&[f64]) -> Assembly,
{
    let values: Vec<f64> = integrals.iter().map(|(_, i)| i.value).collect();
    let (lhs_terms, rhs_terms, lhs, rhs) = assemble(&values);
    let tiny = 1e-300;
    let vacuous = lhs.abs() <= tiny && rhs.abs() <= tiny;
    let ratio = (rhs > tiny).then(|| lhs / rhs);
    let mut qerr = 0.0;
    if let Some(r) = ratio {
        for (i, (_, integral)) in integrals.iter().enumerate() {
            if integral.error > 0.0 {
                let mut v = values.clone();
                v[i] += integral.error;
                let (_, _, l, rr) = assemble(&v);
                if rr > tiny {
                    qerr += (l / rr - r).abs();
                }
            }
        }
    }
    let slack = opts.slack_allowance.max(3.0 * qerr);
    let (status, satisfied) = if vacuous {
        (ReportStatus::VacuousPass, true)
    } else {
        let ok = match ratio {
            Some(r) => r <= 1.0 + slack,
            None => lhs <= rhs,
        };
        (if ok { ReportStatus::Pass } else { ReportStatus::Violation }, ok)
    };
    let mut diagnostics = draft.diagnostics;
    diagnostics.extend(integrals.iter().map(|(n, i)| term(n, i.value)));
    let mut notes = draft.notes;
    if vacuous {
        notes.push("degenerate: both sides vanish".into());
    }
    InequalityReport {
        record_type: "report".into(),
        id: draft.id,
        submanifold: sub.label().to_string(),
        field: psi.label().to_string(),
        params: draft.params,
        parameter_set: draft.parameter_set,
        constants: draft.constants,
        lhs_terms,
        rhs_combination: draft.combination,
        rhs_terms,
        diagnostics,
        lhs,
        rhs,
        ratio,
        quadrature_error: qerr,
        slack,
        satisfied,
        status,
        hypothesis_status: draft.hypothesis_status,
        side_conditions: draft.side_conditions,
        notes,
        mesh_stats: prep.disc.stats,
    }
}

fn check_hardy_exponents(k: usize, p: f64, gamma: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(LabError::InvalidExponent(format!("p = {p} must satisfy 1 <= p < infinity")));
    }
    if !(gamma < k as f64) {
        return Err(LabError::InvalidExponent(format!("gamma = {gamma} must be below k = {k}")));
    }
    Ok(())
}

fn hypothesis(k: usize, volume: f64, opts: &EvalOptions) -> HypothesisStatus {
    if k < 7 || opts.volume_threshold.is_some_and(|d| volume < d) {
        HypothesisStatus::Verified
    } else {
        HypothesisStatus::Unverified
    }
}

const THRESHOLD_NOTE: &str = "volume threshold D depends only on Inj(M) and r0";

/// Hardy inequality with the combined gradient and curvature term; `p = 1`
/// is routed to the split form.
pub fn eval_hardy_prop31(
    sub: &Submanifold,
    psi: &ScalarField,
    p: f64,
    gamma: f64,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    check_hardy_exponents(sub.dim(), p, gamma)?;
    if p == 1.0 {
        let mut rep = eval_hardy_thm32(sub, psi, p, gamma, false, opts)?;
        rep.notes.push("p = 1 routed to hardy_thm32".into());
        return Ok(rep);
    }
    let prep = prepare(sub, psi, gamma.abs().max((gamma - p).abs()), false, opts)?;
    let s = &prep.samples;
    let scale = s.main.iter().map(|v| v.value.abs()).fold(0.0, f64::max);
    let negative = s.main.iter().chain(&s.check).map(|v| v.value).chain(s.boundary.iter().copied()).any(|v| v < -1e-14 * scale);
    if negative {
        return Err(LabError::PreconditionViolated("psi must be nonnegative".into()));
    }
    let (k, hp0, d) = (prep.k as f64, prep.hp0, &prep.disc);
    let pos = |v: f64| v.max(0.0);
    let i1 = d.weighted_integral(s, gamma, WeightKind::HPowerTimesHPrime, |_, v| pos(v.value).powf(p))?;
    let i2 = d.weighted_integral(s, gamma, WeightKind::HPowerTimesHPrime, |st, v| {
        pos(v.value).powf(p) * st.radial_normal * st.radial_normal
    })?;
    let r1 = d.weighted_integral(s, gamma - p, WeightKind::HPower, |st, v| {
        let hh = st.mean_curvature_norm / p;
        (v.grad_norm * v.grad_norm + v.value * v.value * hh * hh).powf(p / 2.0)
    })?;
    let bs = d.boundary_integral(s, gamma, true, |_, v| pos(v).powf(p));
    let bu = d.boundary_integral(s, gamma, false, |_, v| pos(v).powf(p));
    let c1 = (k - gamma).powf(p) * hp0.powf(p - 1.0) / p.powf(p);
    let cb = ((k - gamma) * hp0).powf(p - 1.0) / p.powf(p - 1.0);
    let c2 = gamma * cb;
    let mut draft = Draft::new(InequalityId::HardyProp31, ConstantBundle::basic(p, hp0))
        .param("k", k)
        .param("p", p)
        .param("gamma", gamma);
    draft.diagnostics.push(term("boundary_unsigned", cb * bu.value));
    if bs.empty_boundary {
        draft.notes.push("closed submanifold: boundary term empty".into());
    }
    let integrals = [("hardy_integral", i1), ("normal_integral", i2), ("gradient_integral", r1), ("boundary_integral", bs)];
    Ok(finish(
        draft,
        sub,
        psi,
        &prep,
        &integrals,
        |v| {
            let lhs = vec![term("hardy", c1 * v[0]), term("normal", c2 * v[1])];
            let rhs = vec![term("gradient_curvature", v[2]), term("boundary", cb * v[3])];
            let (l, r) = (lhs.iter().map(|t| t.value).sum(), rhs.iter().map(|t| t.value).sum());
            (lhs, rhs, l, r)
        },
        opts,
    ))
}

fn hardy_split(
    id: InequalityId,
    sub: &Submanifold,
    psi: &ScalarField,
    p: f64,
    gamma: f64,
    minimal: bool,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    check_hardy_exponents(sub.dim(), p, gamma)?;
    let prep = prepare(sub, psi, gamma.abs().max((gamma - p).abs()), false, opts)?;
    let (s, d) = (&prep.samples, &prep.disc);
    let (k, hp0) = (prep.k as f64, prep.hp0);
    let coef = if minimal {
        let hmax = d.max_mean_curvature();
        if hmax > opts.minimality_tolerance {
            return Err(LabError::NotMinimal(format!(
                "max |H| = {hmax:e} exceeds the minimality tolerance {:e}",
                opts.minimality_tolerance
            )));
        }
        1.0
    } else {
        constants::a_p(p)
    };
    let ap = |v: f64| v.abs().powf(p);
    let i1 = d.weighted_integral(s, gamma, WeightKind::HPowerTimesHPrime, |_, v| ap(v.value))?;
    let i2 = d.weighted_integral(s, gamma, WeightKind::HPowerTimesHPrime, |st, v| {
        ap(v.value) * st.radial_normal * st.radial_normal
    })?;
    let ga = d.weighted_integral(s, gamma - p, WeightKind::HPower, |_, v| v.grad_norm.powf(p))?;
    let gb = d.weighted_integral(s, gamma - p, WeightKind::HPower, |st, v| ap(v.value * st.mean_curvature_norm / p))?;
    let bu = d.boundary_integral(s, gamma, false, |_, v| ap(v));
    let bs = d.boundary_integral(s, gamma, true, |_, v| ap(v));
    let c1 = (k - gamma).powf(p) * hp0.powf(p - 1.0) / p.powf(p);
    let cb = ((k - gamma) * hp0).powf(p - 1.0) / p.powf(p - 1.0);
    let c2 = gamma * cb;
    let mut bundle = ConstantBundle::basic(p, hp0);
    if minimal {
        bundle.a_p = 1.0;
    }
    let mut draft = Draft::new(id, bundle).param("k", k).param("p", p).param("gamma", gamma);
    draft.diagnostics.push(term("boundary_signed", cb * bs.value));
    if minimal {
        draft.notes.push("minimal: A_p replaced by 1".into());
    }
    if bu.empty_boundary {
        draft.notes.push("closed submanifold: boundary term empty".into());
    }
    let integrals =
        [("hardy_integral", i1), ("normal_integral", i2), ("gradient_integral", ga), ("curvature_integral", gb), ("boundary_integral", bu)];
    Ok(finish(
        draft,
        sub,
        psi,
        &prep,
        &integrals,
        |v| {
            let lhs = vec![term("hardy", c1 * v[0]), term("normal", c2 * v[1])];
            let rhs = vec![term("gradient", coef * v[2]), term("curvature", coef * v[3]), term("boundary", cb * v[4])];
            let (l, r) = (lhs.iter().map(|t| t.value).sum(), rhs.iter().map(|t| t.value).sum());
            (lhs, rhs, l, r)
        },
        opts,
    ))
}

/// Hardy inequality with the split form `𝒜_p(|∇ψ|^p + |ψ|^p|H|^p/p^p)` and the
/// unsigned boundary integral.
pub fn eval_hardy_thm32(
    sub: &Submanifold,
    psi: &ScalarField,
    p: f64,
    gamma: f64,
    minimal: bool,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    hardy_split(InequalityId::HardyThm32, sub, psi, p, gamma, minimal, opts)
}

/// Hardy inequality under nonpositive radial curvature, so `h(r) = r`.
pub fn eval_hardy_cor33(
    sub: &Submanifold,
    psi: &ScalarField,
    p: f64,
    gamma: f64,
    minimal: bool,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    if !sub.ambient().comparison().is_identity() {
        return Err(LabError::PreconditionViolated(
            "hardy_cor33 needs nonpositive radial curvature (Euclidean comparison)".into(),
        ));
    }
    if !(p < sub.dim() as f64) {
        return Err(LabError::InvalidExponent(format!("hardy_cor33 needs p < k, got p = {p}")));
    }
    hardy_split(InequalityId::HardyCor33, sub, psi, p, gamma, minimal, opts)
}

fn side_conditions(sub: &Submanifold, disc: &Discretization, samples: &Samples) -> SideConditions {
    let k = sub.dim();
    let kf = k as f64;
    let vol = disc.support_volume(samples);
    let b = sub.ambient().sectional_curvature_bound(disc.max_r);
    let j_bar = ((kf + 1.0) / constants::unit_ball_volume(k) * vol).powf(1.0 / kf);
    let inj = sub.ambient().injectivity_radius();
    let c14 = b == 0.0 || b * j_bar < 1.0;
    let c15 = c14 && {
        let hinv = if b == 0.0 { j_bar } else { (b * j_bar).asin() / b };
        2.0 * hinv <= inj
    };
    SideConditions { b, j_bar, support_volume: vol, injectivity_radius: inj, satisfied: c14 && c15 }
}

fn sobolev_s(sub: &Submanifold, disc: &Discretization, p: f64) -> Result<(f64, bool)> {
    let b = sub.ambient().sectional_curvature_bound(disc.max_r);
    Ok((constants::sobolev_constant(sub.dim(), p, b == 0.0)?, b == 0.0))
}

/// Hoffman-Spruck Sobolev inequality with `S = S_{k,p}`.
pub fn eval_sobolev_hs(sub: &Submanifold, psi: &ScalarField, p: f64, opts: &EvalOptions) -> Result<InequalityReport> {
    let k = sub.dim();
    let p_star = constants::sobolev_exponent(k, p)?;
    let prep = prepare(sub, psi, 0.0, true, opts)?;
    let (s, d) = (&prep.samples, &prep.disc);
    let (big_s, flat) = sobolev_s(sub, d, p)?;
    let i = d.weighted_integral(s, 0.0, WeightKind::HPower, |_, v| v.value.abs().powf(p_star))?;
    let ga = d.weighted_integral(s, 0.0, WeightKind::HPower, |_, v| v.grad_norm.powf(p))?;
    let gb = d.weighted_integral(s, 0.0, WeightKind::HPower, |st, v| (v.value * st.mean_curvature_norm / p).abs().powf(p))?;
    let sc = side_conditions(sub, d, s);
    let mut bundle = ConstantBundle::basic(p, prep.hp0);
    bundle.s_kp = Some(big_s);
    let mut draft = Draft::new(InequalityId::SobolevHs, bundle).param("k", k as f64).param("p", p).param("p_star", p_star);
    if !sc.satisfied {
        draft.notes.push("conditions-unverified: volume and injectivity side conditions fail at z = k/(k+1)".into());
    }
    if flat {
        draft.notes.push("b = 0: leading factor 1 instead of pi/2".into());
    }
    draft.side_conditions = Some(sc);
    let integrals = [("sobolev_integral", i), ("gradient_integral", ga), ("curvature_integral", gb)];
    Ok(finish(
        draft,
        sub,
        psi,
        &prep,
        &integrals,
        |v| {
            let l = v[0].powf(p / p_star);
            let rhs = vec![term("gradient", big_s * v[1]), term("curvature", big_s * v[2])];
            let r = rhs.iter().map(|t| t.value).sum();
            (vec![term("sobolev", l)], rhs, l, r)
        },
        opts,
    ))
}

/// Weighted Hoffman-Spruck inequality.
pub fn eval_weighted_hs_thm44(
    sub: &Submanifold,
    psi: &ScalarField,
    p: f64,
    alpha: f64,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    let k = sub.dim();
    let p_star = constants::sobolev_exponent(k, p)?;
    let gamma = p * (alpha + 1.0);
    if !(gamma < k as f64) {
        return Err(LabError::InvalidExponent(format!("p(alpha + 1) = {gamma} must be below k = {k}")));
    }
    let gref = (p_star * alpha).abs().max(gamma.abs()).max((p * alpha).abs());
    let prep = prepare(sub, psi, gref, true, opts)?;
    let (s, d) = (&prep.samples, &prep.disc);
    let w = constants::weighted_constants(k, p, alpha, prep.hp0)?;
    let (big_s, _) = sobolev_s(sub, d, p)?;
    let ap = |v: f64| v.abs().powf(p);
    let i = d.weighted_integral(s, p_star * alpha, WeightKind::HPower, |_, v| v.value.abs().powf(p_star))?;
    let j1 = d.weighted_integral(s, gamma, WeightKind::HPowerTimesHPrime, |st, v| {
        ap(v.value) * st.radial_normal * st.radial_normal
    })?;
    let j2 = d.weighted_integral(s, gamma, WeightKind::HPowerTimesHPrime, |st, v| ap(v.value) * st.radial_normal.powf(p))?;
    let ga = d.weighted_integral(s, p * alpha, WeightKind::HPower, |_, v| v.grad_norm.powf(p))?;
    let gb = d.weighted_integral(s, p * alpha, WeightKind::HPower, |st, v| ap(v.value * st.mean_curvature_norm / p))?;
    let mut bundle = ConstantBundle::basic(p, prep.hp0).with_weighted(&w);
    bundle.s_kp = Some(big_s);
    let mut draft = Draft::new(InequalityId::WeightedHsThm44, bundle)
        .param("k", k as f64)
        .param("p", p)
        .param("alpha", alpha)
        .param("gamma", gamma)
        .param("p_star", p_star);
    draft.hypothesis_status = hypothesis(k, d.volume(), opts);
    draft.notes.push(THRESHOLD_NOTE.into());
    let (gc, phi, delta) = (w.gamma, w.phi, w.delta);
    let integrals = [
        ("sobolev_integral", i),
        ("phi_integral", j1),
        ("delta_integral", j2),
        ("gradient_integral", ga),
        ("curvature_integral", gb),
    ];
    Ok(finish(
        draft,
        sub,
        psi,
        &prep,
        &integrals,
        |v| {
            let lhs = vec![term("sobolev", v[0].powf(p / p_star) / big_s), term("phi", phi * v[1]), term("delta", delta * v[2])];
            let rhs = vec![term("gradient", gc * v[3]), term("curvature", gc * v[4])];
            let (l, r) = (lhs.iter().map(|t| t.value).sum(), rhs.iter().map(|t| t.value).sum());
            (lhs, rhs, l, r)
        },
        opts,
    ))
}

fn check_dimension(sub: &Submanifold, params: &ParameterSet) -> Result<()> {
    params.validate()?;
    if params.k != sub.dim() {
        return Err(LabError::InconsistentParameters(format!(
            "parameter set has k = {} but the submanifold has dimension {}",
            params.k,
            sub.dim()
        )));
    }
    Ok(())
}

fn param_map(set: &ParameterSet) -> BTreeMap<String, f64> {
    let v = serde_json::to_value(set).expect("parameter set serializes");
    v.as_object()
        .map(|o| o.iter().filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x))).collect())
        .unwrap_or_default()
}

fn interpolation_bundle(sub: &Submanifold, d: &Discretization, params: &ParameterSet, hp0: f64) -> Result<ConstantBundle> {
    let (big_s, _) = sobolev_s(sub, d, params.p)?;
    let w = constants::weighted_constants(params.k, params.p, params.alpha, hp0)?;
    let (lambda, c) = constants::interpolation_constants(params, hp0, big_s)?;
    let mut bundle = ConstantBundle::basic(params.p, hp0).with_weighted(&w);
    bundle.s_kp = Some(big_s);
    bundle.lambda = Some(lambda);
    bundle.c = Some(c);
    Ok(bundle)
}

/// Weighted Sobolev inequality with the `s`-norm on the left.
pub fn eval_ckn_thm51(
    sub: &Submanifold,
    psi: &ScalarField,
    params: &ParameterSet,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    check_dimension(sub, params)?;
    let ParameterSet { p, s, sigma, alpha, .. } = *params;
    let prep = prepare(sub, psi, (s * sigma).abs().max((p * alpha).abs()), true, opts)?;
    let (smp, d) = (&prep.samples, &prep.disc);
    let bundle = interpolation_bundle(sub, d, params, prep.hp0)?;
    let c = bundle.c.unwrap_or(f64::NAN);
    let i = d.weighted_integral(smp, s * sigma, WeightKind::HPower, |_, v| v.value.abs().powf(s))?;
    let ga = d.weighted_integral(smp, p * alpha, WeightKind::HPower, |_, v| v.grad_norm.powf(p))?;
    let gb = d.weighted_integral(smp, p * alpha, WeightKind::HPower, |st, v| {
        (v.value * st.mean_curvature_norm / p).abs().powf(p)
    })?;
    let mut draft = Draft::new(InequalityId::CknThm51, bundle);
    draft.params = param_map(params);
    draft.parameter_set = Some(*params);
    draft.hypothesis_status = hypothesis(params.k, d.volume(), opts);
    draft.notes.push(THRESHOLD_NOTE.into());
    let integrals = [("s_integral", i), ("gradient_integral", ga), ("curvature_integral", gb)];
    Ok(finish(
        draft,
        sub,
        psi,
        &prep,
        &integrals,
        |v| {
            let l = v[0].powf(p / s);
            let rhs = vec![term("gradient", c * v[1]), term("curvature", c * v[2])];
            let r = rhs.iter().map(|t| t.value).sum();
            (vec![term("s_norm_power", l)], rhs, l, r)
        },
        opts,
    ))
}

/// Caffarelli-Kohn-Nirenberg interpolation inequality with constant `C^{a/p}`.
pub fn eval_ckn_thm52(
    sub: &Submanifold,
    psi: &ScalarField,
    params: &ParameterSet,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    check_dimension(sub, params)?;
    let ParameterSet { p, q, t, a, alpha, beta, gamma, .. } = *params;
    let gref = (gamma * t).abs().max((p * alpha).abs()).max((beta * q).abs());
    let prep = prepare(sub, psi, gref, true, opts)?;
    let (smp, d) = (&prep.samples, &prep.disc);
    let bundle = interpolation_bundle(sub, d, params, prep.hp0)?;
    let c = bundle.c.unwrap_or(f64::NAN).powf(a / p);
    let it = d.weighted_integral(smp, gamma * t, WeightKind::HPower, |_, v| v.value.abs().powf(t))?;
    let ga = d.weighted_integral(smp, p * alpha, WeightKind::HPower, |_, v| v.grad_norm.powf(p))?;
    let gb = d.weighted_integral(smp, p * alpha, WeightKind::HPower, |st, v| {
        (v.value * st.mean_curvature_norm / p).abs().powf(p)
    })?;
    let iq = d.weighted_integral(smp, beta * q, WeightKind::HPower, |_, v| v.value.abs().powf(q))?;
    let mut draft = Draft::new(InequalityId::CknThm52, bundle);
    draft.params = param_map(params);
    draft.parameter_set = Some(*params);
    draft.combination = Combination::Product;
    draft.hypothesis_status = hypothesis(params.k, d.volume(), opts);
    draft.notes.push(THRESHOLD_NOTE.into());
    let integrals = [("t_integral", it), ("gradient_integral", ga), ("curvature_integral", gb), ("q_integral", iq)];
    Ok(finish(
        draft,
        sub,
        psi,
        &prep,
        &integrals,
        |v| {
            let l = v[0].powf(1.0 / t);
            let gf = if a == 0.0 { 1.0 } else { (v[1] + v[2]).powf(a / p) };
            let qf = if a == 1.0 { 1.0 } else { v[3].powf((1.0 - a) / q) };
            let rhs = vec![term("constant", c), term("gradient_factor", gf), term("q_factor", qf)];
            (vec![term("t_norm", l)], rhs, l, c * gf * qf)
        },
        opts,
    ))
}

fn field_of(input: &BalanceInput, name: &str) -> Option<f64> {
    match name {
        "p" => input.p,
        "q" => input.q,
        "t" => input.t,
        "alpha" => input.alpha,
        "beta" => input.beta,
        "gamma" => input.gamma,
        "sigma" => input.sigma,
        "a" => input.a,
        _ => None,
    }
}

fn set_field(input: &mut BalanceInput, name: &str, v: f64) {
    let slot = match name {
        "p" => &mut input.p,
        "q" => &mut input.q,
        "t" => &mut input.t,
        "alpha" => &mut input.alpha,
        "beta" => &mut input.beta,
        "gamma" => &mut input.gamma,
        "sigma" => &mut input.sigma,
        "a" => &mut input.a,
        _ => return,
    };
    *slot = Some(v);
}

fn solved_field(set: &ParameterSet, name: &str) -> f64 {
    match name {
        "p" => set.p,
        "q" => set.q,
        "t" => set.t,
        "alpha" => set.alpha,
        "beta" => set.beta,
        "gamma" => set.gamma,
        "sigma" => set.sigma,
        _ => set.a,
    }
}

const FIELDS: [&str; 8] = ["p", "q", "t", "alpha", "beta", "gamma", "sigma", "a"];

/// Install the parameter specialization of a derived inequality and solve
/// the balance conditions.
pub fn specialize(id: InequalityId, input: &BalanceInput, k: usize) -> Result<ParameterSet> {
    if let Some(kk) = input.k {
        if kk != k {
            return Err(LabError::InconsistentParameters(format!("k = {kk} but the submanifold has dimension {k}")));
        }
    }
    let kf = k as f64;
    let get = |n: &str| field_of(input, n);
    let (fixed, used): (Vec<(&str, f64)>, Vec<&str>) = match id {
        InequalityId::MssWeighted => {
            let p = get("p").ok_or_else(|| LabError::InvalidArgument("mss_weighted needs p".into()))?;
            let sigma = match (get("sigma"), get("gamma"), get("t")) {
                (Some(s), _, _) | (None, Some(s), _) => s,
                (None, None, Some(t)) => 1.0 - kf * (1.0 / p - 1.0 / t),
                _ => 0.0,
            };
            (vec![("a", 1.0), ("alpha", 0.0), ("sigma", sigma)], vec!["p"])
        }
        InequalityId::HardyDerived => {
            let alpha = get("alpha").unwrap_or(0.0);
            (vec![("a", 1.0), ("sigma", alpha + 1.0)], vec!["p", "alpha"])
        }
        InequalityId::GagliardoNirenberg => {
            (vec![("alpha", 0.0), ("beta", 0.0), ("sigma", 0.0)], vec!["p", "q", "a"])
        }
        InequalityId::Nash => (
            vec![("alpha", 0.0), ("beta", 0.0), ("sigma", 0.0), ("p", 2.0), ("q", 1.0), ("a", kf / (kf + 2.0))],
            vec![],
        ),
        InequalityId::HeisenbergPauliWeyl => (
            vec![("t", 2.0), ("p", 2.0), ("q", 2.0), ("gamma", 0.0), ("alpha", 0.0), ("beta", -1.0)],
            vec![],
        ),
        other => return Err(LabError::InvalidArgument(format!("{other} is not a derived inequality"))),
    };
    for (n, v) in &fixed {
        if let Some(u) = get(n) {
            if (u - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(LabError::ParameterConflict(format!("{id} fixes {n} = {v}, got {u}")));
            }
        }
    }
    let mut closure = BalanceInput { k: Some(k), p: None, ..Default::default() };
    for (n, v) in &fixed {
        set_field(&mut closure, n, *v);
    }
    for n in used {
        match get(n) {
            Some(v) => set_field(&mut closure, n, v),
            None if n == "alpha" => set_field(&mut closure, n, 0.0),
            None => return Err(LabError::InvalidArgument(format!("{id} needs {n}"))),
        }
    }
    // a = 1 reduces to the (alpha, sigma) closure.
    if closure.a == Some(1.0) {
        closure.a = None;
    }
    let set = constants::solve_balance(&closure)?;
    for n in FIELDS {
        if let Some(u) = get(n) {
            let v = solved_field(&set, n);
            if (u - v).abs() > 1e-9 * (1.0 + v.abs()) {
                return Err(LabError::ParameterConflict(format!("{id} forces {n} = {v}, got {u}")));
            }
        }
    }
    Ok(set)
}

/// Named specializations of the interpolation inequality.
pub fn eval_derived(
    id: InequalityId,
    sub: &Submanifold,
    psi: &ScalarField,
    input: &BalanceInput,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    let set = specialize(id, input, sub.dim())?;
    let mut rep = eval_ckn_thm52(sub, psi, &set, opts)?;
    rep.id = id;
    rep.notes.push(format!("specialization of ckn_thm52: a = {}, alpha = {}, gamma = {}, t = {}", set.a, set.alpha, set.gamma, set.t));
    Ok(rep)
}

/// Both sides of the Hölder interpolation step behind `ckn_thm51`.
pub fn holder_step(sub: &Submanifold, psi: &ScalarField, params: &ParameterSet, opts: &EvalOptions) -> Result<(f64, f64)> {
    check_dimension(sub, params)?;
    let ParameterSet { p, s, sigma, alpha, c, p_star, .. } = *params;
    let gref = (s * sigma).abs().max((p * (alpha + 1.0)).abs()).max((p_star * alpha).abs());
    let prep = prepare(sub, psi, gref, false, opts)?;
    let (smp, d) = (&prep.samples, &prep.disc);
    let lhs = d.weighted_integral(smp, s * sigma, WeightKind::HPower, |_, v| v.value.abs().powf(s))?.value;
    let hardy =
        d.weighted_integral(smp, p * (alpha + 1.0), WeightKind::HPowerTimesHPrime, |_, v| v.value.abs().powf(p))?.value;
    let sob = d.weighted_integral(smp, p_star * alpha, WeightKind::HPower, |_, v| v.value.abs().powf(p_star))?.value;
    Ok((lhs, (hardy / prep.hp0).powf(1.0 - c) * sob.powf(c)))
}

/// Dispatch on `id`. Hardy ids read `p` and `gamma`, `sobolev_hs` reads
/// `p`, `weighted_hs_thm44` reads `p` and `alpha`, `ckn_thm51` the
/// `(alpha, sigma)` closure and the rest the full balance input.
pub fn evaluate(
    id: InequalityId,
    sub: &Submanifold,
    psi: &ScalarField,
    input: &BalanceInput,
    minimal: bool,
    opts: &EvalOptions,
) -> Result<InequalityReport> {
    let need = |v: Option<f64>, n: &str| v.ok_or_else(|| LabError::InvalidArgument(format!("{id} needs {n}")));
    match id {
        InequalityId::HardyProp31 => eval_hardy_prop31(sub, psi, need(input.p, "p")?, need(input.gamma, "gamma")?, opts),
        InequalityId::HardyThm32 => {
            eval_hardy_thm32(sub, psi, need(input.p, "p")?, need(input.gamma, "gamma")?, minimal, opts)
        }
        InequalityId::HardyCor33 => {
            eval_hardy_cor33(sub, psi, need(input.p, "p")?, need(input.gamma, "gamma")?, minimal, opts)
        }
        InequalityId::SobolevHs => eval_sobolev_hs(sub, psi, need(input.p, "p")?, opts),
        InequalityId::WeightedHsThm44 => {
            eval_weighted_hs_thm44(sub, psi, need(input.p, "p")?, input.alpha.unwrap_or(0.0), opts)
        }
        InequalityId::CknThm51 => {
            let set = constants::solve_balance(&BalanceInput {
                k: Some(sub.dim()),
                p: input.p,
                alpha: Some(input.alpha.unwrap_or(0.0)),
                sigma: Some(need(input.sigma, "sigma")?),
                ..Default::default()
            })?;
            eval_ckn_thm51(sub, psi, &set, opts)
        }
        InequalityId::CknThm52 => {
            let set = constants::solve_balance(&BalanceInput { k: Some(sub.dim()), ..*input })?;
            eval_ckn_thm52(sub, psi, &set, opts)
        }
        _ => eval_derived(id, sub, psi, input, opts),
    }
}

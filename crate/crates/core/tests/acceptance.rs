//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use ckn_lab::constants::{self, BalanceInput};
use ckn_lab::geometry::operators::{divergence_residual_lemma23, lemma24_margin, pythagoras_residual};
use ckn_lab::geometry::{AmbientSpace, PatchShape, ScalarField, SimplicialMesh, Submanifold, VectorField};
use ckn_lab::inequalities::{self, EvalOptions, InequalityId, InequalityReport, ReportStatus};
use ckn_lab::search::{self, FunctionFamily};
use ckn_lab::warp::{CurvatureProfile, WarpingFunction};
use common::{build, corpus, Outcome};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ode_fidelity() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for b in [0.5f64, 1.0, 2.0] {
        let end = 0.9 * PI / (2.0 * b);
        let w = WarpingFunction::ode(CurvatureProfile::constant(b * b).map_err(|e| e.to_string())?, end * 1.01, 1e-4 / b)
            .map_err(|e| e.to_string())?;
        for i in 0..=2000 {
            let t = end * i as f64 / 2000.0;
            worst = worst.max((w.h(t) - (b * t).sin() / b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-8 && secs < 1.0, format!("max |h - sin(bt)/b| = {worst:.2e}, {secs:.3} s"))
}

fn power_inequality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..100_000 {
        let p = rng.gen_range(1.0..6.0);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let (mut a, mut b): (f64, f64) = (rng.gen_range(0.0..1.0) * scale, rng.gen_range(0.0..1.0) * scale);
        if i % 50 == 0 {
            a = 0.0;
        }
        if i % 70 == 0 {
            b = a;
        }
        let (lo, hi) = constants::power_split_bounds(p, a, b).map_err(|e| e.to_string())?;
        let mid = (a * a + b * b).powf(p / 2.0);
        let s = mid.max(f64::MIN_POSITIVE);
        worst = worst.max((lo - mid) / s).max((mid - hi) / s);
    }
    ensure(worst <= 1e-12, format!("1e5 draws, worst relative excess {worst:.2e}"))
}

fn constant_optimality() -> Check {
    let mut msgs = Vec::new();
    let mut ok = true;
    for (k, p) in [(3usize, 1.0), (3, 2.0), (4, 2.0), (5, 3.0)] {
        let z = constants::argmin_hoffman_spruck(k, p).map_err(|e| e.to_string())?;
        let d = (z - k as f64 / (k as f64 + 1.0)).abs();
        ok &= d <= 1e-3;
        msgs.push(format!("z*({k},{p}) off by {d:.1e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 20 {
        let k = rng.gen_range(2..7usize);
        let p = rng.gen_range(1.0..4.0);
        let alpha: f64 = rng.gen_range(-0.9..1.5);
        let hp0 = rng.gen_range(0.2..1.0);
        if alpha.abs() < 0.05 || p * (alpha + 1.0) >= k as f64 {
            continue;
        }
        let eps0 = constants::weighted_constants(k, p, alpha, hp0).map_err(|e| e.to_string())?.eps0;
        let f = |e: f64| constants::k_of_eps(k, p, alpha, hp0, e).map(f64::ln).unwrap_or(f64::INFINITY);
        let found = constants::golden_section(f, 1e-6, 1e3, 1e-12);
        worst = worst.max((found - eps0).abs() / eps0.max(1.0));
        n += 1;
    }
    ok &= worst <= 1e-4;
    msgs.push(format!("20 eps tuples, worst gap {worst:.1e}"));
    ensure(ok, msgs.join("; "))
}

fn balance_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut n, mut tries) = (0, 0);
    let mut worst: f64 = 0.0;
    while n < 1000 && tries < 200_000 {
        tries += 1;
        let k = rng.gen_range(2..8usize);
        let p = rng.gen_range(1.0..k as f64);
        let alpha = rng.gen_range(-0.9..((k as f64 - p) / p));
        let input = BalanceInput {
            k: Some(k),
            p: Some(p),
            q: Some(rng.gen_range(0.5..6.0)),
            alpha: Some(alpha),
            beta: Some(rng.gen_range(-1.0..1.0)),
            sigma: Some(alpha + rng.gen_range(0.0..1.0)),
            a: Some(rng.gen_range(0.0..1.0)),
            ..Default::default()
        };
        let Ok(set) = constants::solve_balance(&input) else { continue };
        set.validate().map_err(|e| e.to_string())?;
        for r in set.identity_residuals() {
            worst = worst.max(r);
        }
        n += 1;
    }
    let nash = constants::solve_balance(&BalanceInput {
        k: Some(3),
        p: Some(2.0),
        q: Some(1.0),
        a: Some(3.0 / 5.0),
        alpha: Some(0.0),
        beta: Some(0.0),
        sigma: Some(0.0),
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let hpw = constants::solve_balance(&BalanceInput {
        k: Some(3),
        p: Some(2.0),
        q: Some(2.0),
        t: Some(2.0),
        alpha: Some(0.0),
        beta: Some(-1.0),
        gamma: Some(0.0),
        ..Default::default()
    });
    let hpw_ok = hpw.as_ref().map(|s| s.validate().is_ok()).unwrap_or(false);
    ensure(
        n == 1000 && worst <= 1e-12 && nash.t == 2.0 && hpw_ok,
        format!("{n} sets, worst residual {worst:.1e}, Nash t = {}, HPW valid = {hpw_ok}", nash.t),
    )
}

fn mesh_levels(shape: &str) -> Vec<Submanifold> {
    (0..3).map(|l| build("kind = \"euclidean\"\ndim = 3", &format!("shape = \"{shape}\"\nresolution = 10"), l)).collect()
}

fn equality_cases() -> Check {
    let levels = mesh_levels("mesh_disk");
    let opts = EvalOptions::default();
    let cone = FunctionFamily::radial_power(1.0).field(&levels[0].shape_coordinate());
    let cases: [(&str, ScalarField, f64); 2] = [("divergence", ScalarField::constant(1.0), 0.0), ("cone", cone, 1.0)];
    let mut ok = true;
    let mut msgs = Vec::new();
    for (name, psi, gamma) in cases {
        let start = Instant::now();
        let input = BalanceInput { p: Some(1.0), gamma: Some(gamma), ..Default::default() };
        let study = search::refinement_study(InequalityId::HardyThm32, &levels, &psi, &input, true, &opts)
            .map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let last = study.entries.last().unwrap();
        let err = (last.ratio.unwrap_or(f64::NAN) - 1.0).abs();
        let orders = study.observed_orders(1.0);
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= err <= 1e-3 && min_order >= 1.0 && secs < 30.0;
        msgs.push(format!(
            "{name}: |ratio - 1| = {err:.1e} at {} cells, orders {:?}, {secs:.1} s",
            last.cells,
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ));
    }
    ensure(ok, msgs.join("; "))
}

fn geometry_fidelity(entries: &[common::CorpusEntry]) -> Check {
    let mut ok = true;
    let mut msgs = Vec::new();
    let euclid = Arc::new(AmbientSpace::euclidean(3).unwrap());
    let radius = 0.7;
    let ico = Submanifold::from_mesh(euclid.clone(), SimplicialMesh::icosphere(4, radius, DVector::zeros(3)).unwrap(), 2)
        .map_err(|e| e.to_string())?;
    let frame = DMatrix::identity(3, 3);
    let patch = Submanifold::from_patch(
        euclid.clone(),
        PatchShape::sphere(DVector::from_vec(vec![0.2, 0.0, 0.1]), frame, radius, PI).unwrap(),
        6,
        4,
    )
    .map_err(|e| e.to_string())?;
    for (name, sub) in [("icosphere", &ico), ("patch sphere", &patch)] {
        let d = sub.discretization(0.0).map_err(|e| e.to_string())?;
        let rel = d.main.iter().map(|s| (s.mean_curvature_norm * radius / 2.0 - 1.0).abs()).fold(0.0, f64::max);
        ok &= rel < 0.01;
        msgs.push(format!("{name} |H| rel. error {rel:.1e}"));
    }
    let mut worst: f64 = 0.0;
    for e in entries {
        let d = e.sub.discretization(e.sub.dim() as f64).map_err(|e| e.to_string())?;
        for s in d.main.iter().chain(&d.check) {
            if s.r > 0.0 {
                worst = worst.max(pythagoras_residual(e.sub.ambient(), s).map_err(|e| e.to_string())?.abs());
            }
        }
    }
    ok &= worst <= 1e-12;
    msgs.push(format!("Pythagoras residual {worst:.1e}"));
    let y = VectorField::position(DVector::from_vec(vec![0.1, -0.2, 0.3]));
    let psi = ScalarField::new("x + 2", false, |x: &DVector<f64>| {
        (x[0] + 2.0, DVector::from_vec(vec![1.0, 0.0, 0.0]))
    });
    let mut res = Vec::new();
    for level in [2, 3, 4] {
        let sub = Submanifold::from_mesh(euclid.clone(), SimplicialMesh::icosphere(level, 1.0, DVector::zeros(3)).unwrap(), 2)
            .map_err(|e| e.to_string())?;
        res.push(divergence_residual_lemma23(&sub, &y, &psi).map_err(|e| e.to_string())?);
    }
    let order = |f: fn(&ckn_lab::geometry::Lemma23Residuals) -> f64| -> Vec<f64> {
        res.windows(2).map(|w| (f(&w[0]) / f(&w[1])).ln() / (w[0].mesh_size / w[1].mesh_size).ln()).collect()
    };
    let oa = order(|r| r.res_a);
    let ob = order(|r| r.res_b);
    let ok_a = oa.iter().all(|&o| o >= 1.0);
    // The product rule residual sits at roundoff when the discrete
    // derivative is exact; only a genuine residual has an order.
    let ok_b = res.iter().all(|r| r.res_b < 1e-10) || ob.iter().all(|&o| o >= 1.0);
    ok &= ok_a && ok_b;
    msgs.push(format!(
        "divergence residual orders a {:?}, b residuals {:?}",
        oa.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>(),
        res.iter().map(|r| format!("{:.1e}", r.res_b)).collect::<Vec<_>>()
    ));
    ensure(ok, msgs.join("; "))
}

const DRAWS: usize = 50;

fn soundness_sweep(entries: &[common::CorpusEntry]) -> Check {
    let start = Instant::now();
    // One grading per entry keeps the discretization cache small.
    let opts: Vec<EvalOptions> = entries
        .iter()
        .map(|e| EvalOptions { gamma_ref: Some(e.sub.dim() as f64), ..Default::default() })
        .collect();
    let mut jobs = Vec::new();
    for (e, _) in entries.iter().enumerate() {
        for id in InequalityId::ALL {
            for draw in 0..DRAWS {
                jobs.push((e, id, draw));
            }
        }
    }
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(e, id, draw)| (e, id, draw, common::run_draw(&entries[e], id, draw, 7, &opts[e])))
        .collect();
    let (mut reports, mut vacuous, mut skipped) = (0, 0, 0);
    let mut bad = Vec::new();
    let mut covered = std::collections::BTreeSet::new();
    for (e, id, draw, o) in &outcomes {
        match o {
            Outcome::Report(r) => {
                reports += 1;
                covered.insert(id.as_str());
                match r.status {
                    ReportStatus::VacuousPass => vacuous += 1,
                    ReportStatus::Violation => bad.push(format!(
                        "{} {id} draw {draw}: ratio {:?} slack {:.1e} field {}",
                        entries[*e].name, r.ratio, r.slack, r.field
                    )),
                    ReportStatus::Pass => {}
                }
            }
            Outcome::Skipped(_) => skipped += 1,
            Outcome::Failed(err) => bad.push(format!("{} {id} draw {draw}: {err}", entries[*e].name)),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    for b in bad.iter().take(10) {
        eprintln!("  sweep: {b}");
    }
    ensure(
        bad.is_empty() && covered.len() == InequalityId::ALL.len() && entries.len() >= 12 && secs < 600.0,
        format!(
            "{} configs, {reports} reports ({vacuous} vacuous, {skipped} skipped), {} ids covered, {} offenders, {secs:.0} s",
            entries.len(),
            covered.len(),
            bad.len()
        ),
    )
}

fn lemma24(entries: &[common::CorpusEntry]) -> Check {
    let mut worst = f64::INFINITY;
    let mut worst_rel = f64::INFINITY;
    for e in entries {
        let base = e.sub.discretization(0.0).map_err(|e| e.to_string())?;
        // Graded nodes sit within 1e-10 of the pole, where both sides are
        // ~h^-α and only a relative margin is resolvable in f64.
        let graded = e.sub.discretization(e.sub.dim() as f64).map_err(|e| e.to_string())?;
        let w = e.sub.ambient().comparison();
        let k = e.sub.dim() as f64;
        for alpha in [-0.5f64, 0.0, 0.7, 1.5] {
            let m = lemma24_margin(&e.sub, &base, alpha).map_err(|err| format!("{}: {err}", e.name))?;
            worst = worst.min(m.into_iter().fold(f64::INFINITY, f64::min));
            let m = lemma24_margin(&e.sub, &graded, alpha).map_err(|err| format!("{}: {err}", e.name))?;
            for (v, site) in m.iter().zip(&graded.main) {
                let r = e.sub.ambient().radial(&site.x).map_err(|e| e.to_string())?.0;
                let scale = w.h_prime(r) * w.h(r).powf(-alpha) * (k + alpha.abs());
                worst_rel = worst_rel.min(v / scale);
            }
        }
    }
    // Sphere about the pole: the position field is normal and the bound
    // is attained.
    let euclid = Arc::new(AmbientSpace::euclidean(3).unwrap());
    let mut eq = Vec::new();
    for level in [1, 2, 3, 4] {
        let sub = Submanifold::from_mesh(euclid.clone(), SimplicialMesh::icosphere(level, 0.8, DVector::zeros(3)).unwrap(), 2)
            .map_err(|e| e.to_string())?;
        let d = sub.discretization(0.0).map_err(|e| e.to_string())?;
        let m = lemma24_margin(&sub, &d, 0.5).map_err(|e| e.to_string())?;
        eq.push(m.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    // In a model space the bound is attained by every k-plane through the
    // site, so the discrete margin may already sit at rounding level.
    let at_rounding = eq.iter().all(|v| *v < 1e-12);
    let decreasing = at_rounding || (eq.windows(2).all(|w| w[1] < w[0]) && *eq.last().unwrap() < 0.02 * eq[0]);
    ensure(
        worst >= -1e-6 && worst_rel >= -1e-12 && decreasing,
        format!(
            "min corpus margin {worst:.2e}; min relative margin at graded nodes {worst_rel:.2e}; equality margins {:?}",
            eq.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>()
        ),
    )
}

fn term(r: &InequalityReport, name: &str) -> f64 {
    r.term(name).unwrap_or_else(|| panic!("report {} lacks term {name}", r.id))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

fn reductions() -> Check {
    let disk = build("kind = \"euclidean\"\ndim = 3", "shape = \"flat_disk\"\nresolution = 4", 0);
    let ball = build("kind = \"euclidean\"\ndim = 4", "shape = \"flat_ball\"\nk = 3\nresolution = 3", 0);
    let cap = build("kind = \"euclidean\"\ndim = 3", "shape = \"cap\"\nangle = 1.0\ncenter = [0.0, 0.0, -0.5]\nresolution = 4", 0);
    let mut fails = Vec::new();
    let mut checks = 0;
    let mut check = |what: &str, a: f64, b: f64| {
        checks += 1;
        if !close(a, b) {
            fails.push(format!("{what}: {a} vs {b}"));
        }
    };
    for sub in [&disk, &cap, &ball] {
        // Term-by-term comparisons need one shared quadrature.
        let opts = EvalOptions { gamma_ref: Some(sub.dim() as f64), ..Default::default() };
        let psi = FunctionFamily::polynomial(sub.ambient().dim(), true)
            .unwrap()
            .with_dof(&vec![1.0, 0.3, -0.2, 0.1, 0.4, 0.2][..sub.ambient().dim() + 2])
            .unwrap()
            .field(&sub.shape_coordinate());
        for p in [1.0, 1.5] {
            let w = inequalities::eval_weighted_hs_thm44(sub, &psi, p, 0.0, &opts).map_err(|e| e.to_string())?;
            let h = inequalities::eval_sobolev_hs(sub, &psi, p, &opts).map_err(|e| e.to_string())?;
            let s = h.constants.s_kp.unwrap();
            let ap = constants::a_p(p);
            check("thm44 sobolev", term(&w, "sobolev") * s, term(&h, "sobolev"));
            check("thm44 phi", term(&w, "phi"), 0.0);
            check("thm44 delta", term(&w, "delta"), 0.0);
            check("thm44 gradient", term(&w, "gradient"), ap * term(&h, "gradient") / s);
            check("thm44 curvature", term(&w, "curvature"), ap * term(&h, "curvature") / s);
            check("thm44 ratio", w.ratio.unwrap(), h.ratio.unwrap() / ap);
        }
        let k = sub.dim();
        // a = 1 reduces the interpolation inequality to ckn_thm51.
        for (alpha, sigma) in [(0.0, 0.5), (-0.2, 0.3), (0.1, 1.1)] {
            let p = 1.5;
            let s51 = BalanceInput { k: Some(k), p: Some(p), alpha: Some(alpha), sigma: Some(sigma), ..Default::default() };
            let set = constants::solve_balance(&s51).map_err(|e| e.to_string())?;
            let full = BalanceInput { q: Some(set.q), beta: Some(set.beta), a: Some(1.0), ..s51 };
            let r51 = inequalities::evaluate(InequalityId::CknThm51, sub, &psi, &s51, false, &opts).map_err(|e| e.to_string())?;
            let r52 = inequalities::evaluate(InequalityId::CknThm52, sub, &psi, &full, false, &opts).map_err(|e| e.to_string())?;
            check("a=1 lhs", term(&r52, "t_norm").powf(p), term(&r51, "s_norm_power"));
            check("a=1 rhs", r52.rhs.powf(p), r51.rhs);
            check("a=1 q factor", term(&r52, "q_factor"), 1.0);
        }
        // a = 0 forces t = q and gamma = beta: both sides are the same norm.
        for (q, beta) in [(2.0, 0.0), (1.5, -0.3)] {
            let input = BalanceInput {
                k: Some(k),
                p: Some(1.5),
                q: Some(q),
                t: Some(q),
                alpha: Some(0.0),
                beta: Some(beta),
                gamma: Some(beta),
                ..Default::default()
            };
            let r = inequalities::evaluate(InequalityId::CknThm52, sub, &psi, &input, false, &opts).map_err(|e| e.to_string())?;
            check("a=0 norms", term(&r, "t_norm"), term(&r, "q_factor"));
            check("a=0 gradient factor", term(&r, "gradient_factor"), 1.0);
            check("a=0 constant", term(&r, "constant"), 1.0);
        }
        let derived: Vec<(InequalityId, BalanceInput)> = vec![
            (InequalityId::MssWeighted, BalanceInput { p: Some(1.2), ..Default::default() }),
            (InequalityId::HardyDerived, BalanceInput { p: Some(1.5), alpha: Some(-0.2), ..Default::default() }),
            (InequalityId::GagliardoNirenberg, BalanceInput { p: Some(1.5), q: Some(2.0), a: Some(0.4), ..Default::default() }),
            (InequalityId::Nash, BalanceInput::default()),
            (InequalityId::HeisenbergPauliWeyl, BalanceInput::default()),
        ];
        for (id, input) in derived {
            let Ok(set) = inequalities::specialize(id, &input, k) else {
                continue;
            };
            let d = inequalities::evaluate(id, sub, &psi, &input, false, &opts).map_err(|e| e.to_string())?;
            let base = inequalities::eval_ckn_thm52(sub, &psi, &set, &opts).map_err(|e| e.to_string())?;
            for (a, b) in d.lhs_terms.iter().chain(&d.rhs_terms).zip(base.lhs_terms.iter().chain(&base.rhs_terms)) {
                check(&format!("{id} {}", a.name), a.value, b.value);
            }
            if set.a == 1.0 {
                let s51 = BalanceInput { k: Some(k), p: Some(set.p), alpha: Some(set.alpha), sigma: Some(set.sigma), ..Default::default() };
                let r51 = inequalities::evaluate(InequalityId::CknThm51, sub, &psi, &s51, false, &opts).map_err(|e| e.to_string())?;
                check(&format!("{id} vs thm51 lhs"), d.lhs.powf(set.p), r51.lhs);
                check(&format!("{id} vs thm51 rhs"), d.rhs.powf(set.p), r51.rhs);
            }
        }
    }
    ensure(fails.is_empty(), format!("{checks} term comparisons, {} mismatches {:?}", fails.len(), fails.iter().take(5).collect::<Vec<_>>()))
}

fn main() {
    let start = Instant::now();
    let entries = corpus();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 ODE fidelity", Box::new(ode_fidelity)),
        ("2 power inequality", Box::new(power_inequality)),
        ("3 constant optimality", Box::new(constant_optimality)),
        ("4 balance algebra", Box::new(balance_algebra)),
        ("5 equality cases", Box::new(equality_cases)),
        ("6 discrete geometry", Box::new(|| geometry_fidelity(&entries))),
        ("7 soundness sweep", Box::new(|| soundness_sweep(&entries))),
        ("8 divergence margin", Box::new(|| lemma24(&entries))),
        ("9 reductions", Box::new(reductions)),
    ];
    // Optional criterion numbers on the command line select a subset.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut failed, mut ran) = (0, 0);
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|n| name.split(' ').next() == Some(n.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let (tag, msg) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(&f)) {
            Ok(Ok(m)) => ("PASS", m),
            Ok(Err(m)) => ("FAIL", m),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {name}: {tag} ({msg}) [{:.1} s]", t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed in {:.0} s", ran - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

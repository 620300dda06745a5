//! Command-line front end.
//!
//! Exit codes: 0 all reports satisfied, 1 configuration error, 2 inequality
//! violation, 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, FieldSpec};
use crate::constants::{self, BalanceInput, ParameterSet, WeightedConstants};
use crate::error::{LabError, Result};
use crate::geometry::{ScalarField, Submanifold};
use crate::inequalities::{self, EvalOptions, InequalityReport, ReportStatus};
use crate::search::{self, TightnessResult};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Built-in scenarios, addressable by name wherever a config path is expected.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("disk_equality", include_str!("../../../scenarios/disk_equality.cfg")),
    ("cone_equality", include_str!("../../../scenarios/cone_equality.cfg")),
    ("hardy_cone", include_str!("../../../scenarios/hardy_cone.cfg")),
    ("hpw_disk", include_str!("../../../scenarios/hpw_disk.cfg")),
    ("nash_ball", include_str!("../../../scenarios/nash_ball.cfg")),
    ("sphere_sobolev", include_str!("../../../scenarios/sphere_sobolev.cfg")),
    ("tilted_plane", include_str!("../../../scenarios/tilted_plane.cfg")),
    ("geodesic_disk", include_str!("../../../scenarios/geodesic_disk.cfg")),
    ("weighted_cap", include_str!("../../../scenarios/weighted_cap.cfg")),
];

#[derive(Debug, Parser)]
#[command(name = "ckn-lab", version, about = "Check Hardy, Sobolev and CKN inequalities on discretized submanifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Print JSON records instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
    /// Write a CSV table to this path.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the number of refinement levels.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Override the slack allowance.
    #[arg(long, global = true)]
    pub slack: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the constants for the given exponents.
    Constants(ConstantsArgs),
    /// Evaluate the configured inequalities.
    Verify { config: String },
    /// Maximize the ratio over the configured function families.
    Search { config: String },
    /// List the built-in scenarios.
    ListScenarios,
}

#[derive(Debug, Args, Default)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub z: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// `h'(r₀)` of the comparison warp.
    #[arg(long = "h-prime", default_value_t = 1.0)]
    pub h_prime: f64,
    /// Curvature bound `b`; zero selects the flat Sobolev constant.
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
}

#[derive(Debug, Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    command: String,
    records: Vec<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsRecord {
    pub record_type: String,
    pub k: usize,
    pub p: f64,
    pub z: Option<f64>,
    pub h_prime_r0: f64,
    pub flat: bool,
    pub a_p: f64,
    pub b_p: f64,
    pub p_star: Option<f64>,
    pub s_kpz: Option<f64>,
    pub s_kp: Option<f64>,
    pub weighted: Option<WeightedConstants>,
    pub lambda: Option<f64>,
    pub parameter_set: Option<ParameterSet>,
    pub c: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ScenarioRecord {
    record_type: String,
    name: String,
    description: String,
}

#[derive(Debug, Serialize)]
struct SearchCsvRow {
    inequality: String,
    submanifold: String,
    family: String,
    seed_ratio: f64,
    best_ratio: f64,
    evaluations: usize,
    best_slack: f64,
    satisfied: bool,
    refinement: String,
}

/// Entry point used by the binary.
pub fn main_entry() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parse `args` and run, writing normal output to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Constants(a) => cmd_constants(&cli, a, out),
        Command::Verify { config } => cmd_verify(&cli, config, out, err),
        Command::Search { config } => cmd_search(&cli, config, out, err),
        Command::ListScenarios => cmd_list(&cli, out),
    };
    match result {
        Ok(code) => code,
        Err(LabError::OutputClosed) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("CKN_LAB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // Fails only when the pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn write_json<T: Serialize>(out: &mut dyn Write, command: &str, records: Vec<T>) -> Result<()> {
    writeln!(out, "{}", json_text(command, records)?)?;
    Ok(())
}

fn json_text<T: Serialize>(command: &str, records: Vec<T>) -> Result<String> {
    let env = Envelope { schema_version: SCHEMA_VERSION, command: command.into(), records };
    serde_json::to_string_pretty(&env).map_err(|e| LabError::Io(e.to_string()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| LabError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_else(|| "-".into())
}

pub fn constants_record(a: &ConstantsArgs) -> Result<ConstantsRecord> {
    let (k, p, hp0) = (a.k, a.p, a.h_prime);
    if k == 0 {
        return Err(LabError::InvalidArgument("k must be positive".into()));
    }
    if !(p >= 1.0) {
        return Err(LabError::InvalidExponent(format!("p = {p} must be at least 1")));
    }
    if !(hp0 > 0.0 && hp0 <= 1.0) {
        return Err(LabError::InvalidArgument(format!("h'(r0) = {hp0} must lie in (0, 1]")));
    }
    if !(a.b >= 0.0) {
        return Err(LabError::InvalidArgument(format!("b = {} must be nonnegative", a.b)));
    }
    let flat = a.b == 0.0;
    let mut notes = Vec::new();
    let sobolev_ok = p < k as f64;
    let p_star = if sobolev_ok { Some(constants::sobolev_exponent(k, p)?) } else { None };
    if !sobolev_ok {
        notes.push(format!("p = {p} is not below k = {k}: no Sobolev constant"));
    }
    let s_kpz = match a.z {
        Some(z) => Some(constants::hoffman_spruck_constant(k, p, z, flat)?),
        None => None,
    };
    let s_kp = if sobolev_ok { Some(constants::sobolev_constant(k, p, flat)?) } else { None };
    let mut weighted = None;
    let mut lambda = None;
    if let Some(alpha) = a.alpha {
        weighted = Some(constants::weighted_constants(k, p, alpha, hp0)?);
        lambda = Some(constants::hardy_lambda(k, p, alpha, hp0)?);
    }
    let closure_given = [a.sigma, a.q, a.a, a.beta, a.t, a.gamma].iter().any(Option::is_some);
    let mut parameter_set = None;
    let mut c = None;
    if closure_given {
        let set = constants::solve_balance(&BalanceInput {
            k: Some(k),
            p: Some(p),
            q: a.q,
            t: a.t,
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
            sigma: a.sigma,
            a: a.a,
        })?;
        match s_kp.map(|s| constants::interpolation_constants(&set, hp0, s)) {
            Some(Ok((l, cc))) => {
                lambda = Some(l);
                c = Some(cc);
            }
            Some(Err(e)) => notes.push(format!("interpolation constant undefined: {e}")),
            None => {}
        }
        parameter_set = Some(set);
    }
    Ok(ConstantsRecord {
        record_type: "constants".into(),
        k,
        p,
        z: a.z,
        h_prime_r0: hp0,
        flat,
        a_p: constants::a_p(p),
        b_p: constants::b_p(p),
        p_star,
        s_kpz,
        s_kp,
        weighted,
        lambda,
        parameter_set,
        c,
        notes,
    })
}

fn cmd_constants(cli: &Cli, a: &ConstantsArgs, out: &mut dyn Write) -> Result<i32> {
    let rec = constants_record(a)?;
    if cli.json {
        write_json(out, "constants", vec![rec.clone()])?;
    } else {
        let mut rows: Vec<(String, String)> = vec![
            ("k".into(), rec.k.to_string()),
            ("p".into(), rec.p.to_string()),
            ("A_p".into(), fmt_opt(Some(rec.a_p))),
            ("B_p".into(), fmt_opt(Some(rec.b_p))),
            ("p*".into(), fmt_opt(rec.p_star)),
        ];
        if let Some(z) = rec.z {
            rows.push((format!("S_{{k,p,z}} (z = {z})"), fmt_opt(rec.s_kpz)));
        }
        rows.push(("S_{k,p}".into(), fmt_opt(rec.s_kp)));
        if let Some(w) = &rec.weighted {
            rows.push(("A_{k,p,alpha}".into(), fmt_opt(Some(w.a_kpa))));
            rows.push(("B_{k,p,alpha}".into(), fmt_opt(Some(w.b_kpa))));
            rows.push(("eps0".into(), fmt_opt(Some(w.eps0))));
            rows.push(("Gamma".into(), fmt_opt(Some(w.gamma))));
            rows.push(("Phi".into(), fmt_opt(Some(w.phi))));
            rows.push(("Delta".into(), fmt_opt(Some(w.delta))));
        }
        rows.push(("Lambda".into(), fmt_opt(rec.lambda)));
        if let Some(s) = &rec.parameter_set {
            for (n, v) in [
                ("q", s.q),
                ("t", s.t),
                ("alpha", s.alpha),
                ("beta", s.beta),
                ("gamma", s.gamma),
                ("sigma", s.sigma),
                ("a", s.a),
                ("b", s.b_interp),
                ("c", s.c),
                ("theta", s.theta),
                ("s", s.s),
            ] {
                rows.push((n.into(), format!("{v}")));
            }
            rows.push(("C".into(), fmt_opt(rec.c)));
        }
        for (n, v) in rows {
            writeln!(out, "{n:<24} {v}")?;
        }
        for n in &rec.notes {
            writeln!(out, "note: {n}")?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_list(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let mut recs = Vec::new();
    for (name, text) in SCENARIOS {
        let cfg = ExperimentConfig::parse(text, Path::new("."))?;
        recs.push(ScenarioRecord { record_type: "scenario".into(), name: (*name).into(), description: cfg.description });
    }
    if cli.json {
        write_json(out, "list-scenarios", recs)?;
    } else {
        for r in recs {
            writeln!(out, "{:<16} {}", r.name, r.description)?;
        }
    }
    Ok(EXIT_OK)
}

/// Load a config file, or a built-in scenario when no such file exists.
pub fn load_config(name: &str) -> Result<ExperimentConfig> {
    let path = Path::new(name);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    let stem = name.strip_suffix(".cfg").unwrap_or(name);
    let stem = Path::new(stem).file_name().and_then(|s| s.to_str()).unwrap_or(stem);
    match SCENARIOS.iter().find(|(n, _)| *n == stem) {
        Some((_, text)) => ExperimentConfig::parse(text, Path::new(".")),
        None => Err(LabError::InvalidArgument(format!("no config file or scenario named '{name}'"))),
    }
}

struct Prepared {
    cfg: ExperimentConfig,
    levels: Vec<Submanifold>,
    fields: Vec<FieldSpec>,
    opts: EvalOptions,
}

fn prepare(cli: &Cli, name: &str) -> Result<Prepared> {
    let mut cfg = load_config(name)?;
    if let Some(l) = cli.levels {
        cfg.run.levels = l;
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(s) = cli.slack {
        if !(s >= 0.0) {
            return Err(LabError::InvalidArgument(format!("slack {s} must be nonnegative")));
        }
        cfg.run.slack = Some(s);
    }
    cfg.validate()?;
    let fields = cfg.fields(cfg.run.seed)?;
    let ambient = Arc::new(cfg.ambient_space()?);
    let levels = (0..cfg.run.levels)
        .into_par_iter()
        .map(|l| cfg.submanifold(ambient.clone(), l))
        .collect::<Result<Vec<_>>>()?;
    let mut opts = EvalOptions { volume_threshold: cfg.ambient.volume_threshold, ..Default::default() };
    if let Some(s) = cfg.run.slack {
        opts.slack_allowance = s;
    }
    Ok(Prepared { cfg, levels, fields, opts })
}

fn field_on(spec: &FieldSpec, sub: &Submanifold) -> ScalarField {
    match spec {
        FieldSpec::Family(f) => f.field(&sub.shape_coordinate()),
        FieldSpec::Constant(c) => ScalarField::constant(*c),
    }
}

/// Every report of a verify run, in config order: inequality, field, level.
pub fn verify_reports(cfg_name: &str, cli: &Cli) -> Result<(ExperimentConfig, Vec<InequalityReport>)> {
    let prep = prepare(cli, cfg_name)?;
    let ineqs = prep.cfg.inequality.to_vec();
    let mut jobs = Vec::new();
    for (i, _) in ineqs.iter().enumerate() {
        for f in 0..prep.fields.len() {
            for l in 0..prep.levels.len() {
                jobs.push((i, f, l));
            }
        }
    }
    let reports = jobs
        .par_iter()
        .map(|&(i, f, l)| {
            let ineq = &ineqs[i];
            let sub = &prep.levels[l];
            let psi = field_on(&prep.fields[f], sub);
            inequalities::evaluate(ineq.inequality_id()?, sub, &psi, &ineq.balance_input(), ineq.minimal, &prep.opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((prep.cfg, reports))
}

fn cmd_verify(cli: &Cli, name: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let (cfg, reports) = verify_reports(name, cli)?;
    let rows: Vec<_> = reports.iter().map(InequalityReport::csv_row).collect();
    if let Some(p) = cli.csv.as_ref().or(cfg.run.csv.as_ref()) {
        write_csv(p, &rows)?;
    }
    if let Some(p) = &cfg.run.json {
        std::fs::write(p, json_text("verify", reports.clone())? + "\n")?;
    }
    if cli.json {
        write_json(out, "verify", reports.clone())?;
    } else {
        writeln!(
            out,
            "{:<22} {:<28} {:<24} {:>5} {:>8} {:>14} {:>14} {:>10} status",
            "inequality", "submanifold", "field", "level", "cells", "lhs", "rhs", "ratio"
        )?;
        for r in &rows {
            writeln!(
                out,
                "{:<22} {:<28} {:<24} {:>5} {:>8} {:>14.6e} {:>14.6e} {:>10} {}",
                r.id,
                r.submanifold,
                r.field,
                r.level,
                r.cells,
                r.lhs,
                r.rhs,
                r.ratio.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into()),
                r.status
            )?;
        }
    }
    report_exit_code(&reports, err)
}

/// Exit code of a verify run; offending reports are listed on `err`.
pub fn report_exit_code(reports: &[InequalityReport], err: &mut dyn Write) -> Result<i32> {
    let offenders: Vec<_> = reports.iter().filter(|r| r.status == ReportStatus::Violation).collect();
    for r in &offenders {
        writeln!(
            err,
            "violation: {} on {} with {} at level {}: ratio {} exceeds 1 + {:.3e}",
            r.id,
            r.submanifold,
            r.field,
            r.mesh_stats.level,
            r.ratio.map(|x| format!("{x:.6}")).unwrap_or_else(|| "inf".into()),
            r.slack
        )?;
    }
    Ok(if offenders.is_empty() { EXIT_OK } else { EXIT_VIOLATION })
}

/// Every search record: one per inequality and function family.
pub fn search_results(cfg_name: &str, cli: &Cli) -> Result<(ExperimentConfig, Vec<TightnessResult>)> {
    let prep = prepare(cli, cfg_name)?;
    let ineqs = prep.cfg.inequality.to_vec();
    let mut jobs = Vec::new();
    for (i, _) in ineqs.iter().enumerate() {
        for (f, spec) in prep.fields.iter().enumerate() {
            if let FieldSpec::Constant(_) = spec {
                return Err(LabError::InvalidArgument("search needs function families, not constant fields".into()));
            }
            jobs.push((i, f));
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(i, f)| {
            let ineq = &ineqs[i];
            let FieldSpec::Family(fam) = &prep.fields[f] else { unreachable!() };
            let id = ineq.inequality_id()?;
            let input = ineq.balance_input();
            let mut res =
                search::maximize_ratio(id, &prep.levels[0], fam, &input, ineq.minimal, prep.cfg.run.budget, &prep.opts)?;
            search::trace_refinement(&mut res, fam, &prep.levels, &input, ineq.minimal, &prep.opts)?;
            Ok(res)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((prep.cfg, results))
}

fn cmd_search(cli: &Cli, name: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let (cfg, results) = search_results(name, cli)?;
    let rows: Vec<_> = results
        .iter()
        .map(|r| SearchCsvRow {
            inequality: r.inequality.to_string(),
            submanifold: r.submanifold.clone(),
            family: serde_json::to_value(r.family).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            seed_ratio: r.seed_ratio,
            best_ratio: r.best_ratio,
            evaluations: r.evaluations,
            best_slack: r.best_slack,
            satisfied: r.satisfied,
            refinement: r.refinement_trace.iter().map(|(l, x)| format!("{l}:{x}")).collect::<Vec<_>>().join(";"),
        })
        .collect();
    if let Some(p) = cli.csv.as_ref().or(cfg.run.csv.as_ref()) {
        write_csv(p, &rows)?;
    }
    if let Some(p) = &cfg.run.json {
        std::fs::write(p, json_text("search", results.clone())? + "\n")?;
    }
    if cli.json {
        write_json(out, "search", results.clone())?;
    } else {
        writeln!(out, "{:<22} {:<16} {:>12} {:>12} {:>6} refinement", "inequality", "family", "seed_ratio", "best_ratio", "evals")?;
        for r in &rows {
            writeln!(
                out,
                "{:<22} {:<16} {:>12.6} {:>12.6} {:>6} {}",
                r.inequality, r.family, r.seed_ratio, r.best_ratio, r.evaluations, r.refinement
            )?;
        }
    }
    let offenders: Vec<_> = results.iter().filter(|r| !r.satisfied).collect();
    for r in &offenders {
        writeln!(
            err,
            "violation: {} on {}: best ratio {:.6} exceeds 1 + {:.3e} at dof {:?}",
            r.inequality, r.submanifold, r.best_ratio, r.best_slack, r.argmax_dof
        )?;
    }
    Ok(if offenders.is_empty() { EXIT_OK } else { EXIT_VIOLATION })
}

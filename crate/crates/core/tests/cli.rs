use std::time::Instant;

use ckn_lab::cli::{self, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, SCENARIOS};
use ckn_lab::inequalities::ReportStatus;
use clap::Parser;
use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["ckn-lab"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(args: &[&str]) -> (i32, Value) {
    let (code, out, err) = run(args);
    assert!(out.trim_start().starts_with('{'), "no JSON on stdout (exit {code}): {err}");
    (code, serde_json::from_str(&out).unwrap())
}

#[test]
fn constants_sobolev_exponent() {
    let (code, v) = json(&["constants", "--k", "3", "--p", "2", "--json"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(v["schema_version"], 1);
    let rec = &v["records"][0];
    assert_eq!(rec["p_star"].as_f64().unwrap(), 6.0);
    assert!(rec["s_kp"].as_f64().unwrap() > 0.0);
}

#[test]
fn constants_alpha_zero_collapse() {
    let (code, v) = json(&["constants", "--k", "3", "--p", "2", "--alpha", "0", "--json"]);
    assert_eq!(code, EXIT_OK);
    let w = &v["records"][0]["weighted"];
    assert_eq!(w["gamma"].as_f64().unwrap(), 1.0);
    assert_eq!(w["phi"].as_f64().unwrap(), 0.0);
    assert_eq!(w["delta"].as_f64().unwrap(), 0.0);
}

#[test]
fn constants_nash_closure() {
    let (code, v) = json(&[
        "constants", "--k", "3", "--p", "2", "--q", "1", "--a", "0.6", "--alpha", "0", "--beta", "0", "--sigma", "0", "--json",
    ]);
    assert_eq!(code, EXIT_OK);
    let t = v["records"][0]["parameter_set"]["t"].as_f64().unwrap();
    assert!((t - 2.0).abs() < 1e-12, "t = {t}");
    assert!(v["records"][0]["c"].as_f64().unwrap() > 0.0);
}

#[test]
fn constants_rejects_bad_exponents() {
    let (code, _, err) = run(&["constants", "--k", "3", "--p", "0.5"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("p = 0.5"), "{err}");
    let (code, _, err) = run(&["constants", "--k", "3", "--p", "2", "--alpha", "0", "--sigma", "2"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(!err.is_empty());
    let (code, _, _) = run(&["constants", "--k", "3"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn disk_equality_scenario() {
    let (code, v) = json(&["verify", "disk_equality", "--json", "--levels", "1"]);
    assert_eq!(code, EXIT_OK);
    let ratio = v["records"][0]["ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio}");
}

#[test]
fn hpw_disk_scenario() {
    let (code, _, err) = run(&["verify", "hpw_disk"]);
    assert_eq!(code, EXIT_OK, "{err}");
}

#[test]
fn every_scenario_parses_and_validates() {
    for (name, _) in SCENARIOS {
        let cfg = cli::load_config(name).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!cfg.description.is_empty());
    }
    let (code, v) = json(&["list-scenarios", "--json"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(v["records"].as_array().unwrap().len(), SCENARIOS.len());
}

const HUGE_DISK: &str = r#"
[ambient]
kind = "euclidean"

[submanifold]
shape = "mesh_disk"
resolution = 4000

[[inequality]]
id = "hardy_thm32"
p = 1.0
gamma = 3.0
"#;

#[test]
fn gamma_at_least_k_fails_before_mesh_work() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, HUGE_DISK).unwrap();
    let start = Instant::now();
    let (code, _, err) = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("gamma"), "{err}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn malformed_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        HUGE_DISK.replace("gamma = 3.0", "gamma = 0.0\ncolour = 1"),
        HUGE_DISK.replace("hardy_thm32", "hardy_thm99"),
        HUGE_DISK.replace("mesh_disk", "klein_bottle"),
        HUGE_DISK.replace("shape = \"mesh_disk\"", "shape = \"mesh\"\nmesh = \"missing.off\""),
        HUGE_DISK.replace("kind = \"euclidean\"", "kind = \"warped\"\nprofile = \"nowhere.txt\""),
        "not toml at all [".to_string(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("c{i}.cfg"));
        std::fs::write(&path, text).unwrap();
        let (code, _, err) = run(&["verify", path.to_str().unwrap()]);
        assert_eq!(code, EXIT_CONFIG, "case {i}: {err}");
        assert!(err.starts_with("error: "), "case {i}: {err}");
    }
    let (code, _, _) = run(&["verify", "no_such_scenario"]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn violations_exit_two_and_are_listed() {
    let cli = cli::Cli::try_parse_from(["ckn-lab", "verify", "cone_equality", "--levels", "1"]).unwrap();
    let (_, mut reports) = cli::verify_reports("cone_equality", &cli).unwrap();
    let mut err = Vec::new();
    assert_eq!(cli::report_exit_code(&reports, &mut err).unwrap(), EXIT_OK);
    assert!(err.is_empty());
    reports[0].status = ReportStatus::Violation;
    assert_eq!(cli::report_exit_code(&reports, &mut err).unwrap(), EXIT_VIOLATION);
    let err = String::from_utf8(err).unwrap();
    assert!(err.starts_with("violation: hardy_thm32 on mesh_disk"), "{err}");
}

#[test]
fn csv_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let (code, _, _) = run(&["verify", "tilted_plane", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("id,submanifold,field,level,cells,lhs,rhs,ratio"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn hardy_cone_search_finds_equality() {
    let (code, v) = json(&["search", "hardy_cone", "--json"]);
    assert_eq!(code, EXIT_OK);
    let best = v["records"][0]["best_ratio"].as_f64().unwrap();
    assert!(best >= 0.99, "best ratio {best}");
    assert_eq!(v["records"][0]["record_type"], "search");
}

#[test]
fn budget_one_echoes_seed_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.cfg");
    let text = cli::SCENARIOS.iter().find(|(n, _)| *n == "hardy_cone").unwrap().1.replace("budget = 100", "budget = 1");
    std::fs::write(&path, text).unwrap();
    let (code, v) = json(&["search", path.to_str().unwrap(), "--json", "--levels", "1"]);
    assert_eq!(code, EXIT_OK);
    let r = &v["records"][0];
    assert_eq!(r["best_ratio"], r["seed_ratio"]);
    assert_eq!(r["evaluations"], 1);
}

#[test]
fn seeded_reruns_are_byte_identical() {
    let args = ["verify", "nash_ball", "--json", "--seed", "7"];
    let (c1, a, _) = run(&args);
    let (c2, b, _) = run(&args);
    assert_eq!((c1, c2), (EXIT_OK, EXIT_OK));
    assert_eq!(a, b);
    let (_, c, _) = run(&["verify", "nash_ball", "--json", "--seed", "8"]);
    assert_ne!(a, c);
    let (_, s1, _) = run(&["search", "hardy_cone", "--json", "--levels", "1"]);
    let (_, s2, _) = run(&["search", "hardy_cone", "--json", "--levels", "1"]);
    assert_eq!(s1, s2);
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{dmatrix, DMatrix, DVector};
use ridge_equiv::{gen_instance, GenKind, GenSpec};
use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("bad json ({e}): {}", self.stdout))
    }
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ridge-equiv"));
    cmd.args(args).env_remove("RIDGE_EQUIV_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn run(args: &[&str]) -> Run {
    run_env(args, &[])
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn condition<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no condition {name}"))
}

fn matrix(v: &Value) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).unwrap();
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn vector(v: &Value) -> Vec<f64> {
    serde_json::from_value(v.clone()).unwrap()
}

/// A copy of a data file with one key replaced (or removed when `None`).
fn edited(dir: &TempDir, name: &str, key: &str, value: Option<Value>) -> PathBuf {
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(data(name)).unwrap()).unwrap();
    let obj = doc.as_object_mut().unwrap();
    match value {
        Some(v) => {
            obj.insert(key.into(), v);
        }
        None => {
            obj.remove(key);
        }
    }
    let path = dir.path().join(format!("{key}-{name}"));
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

#[test]
fn diagonal_covariance_instance_has_equal_estimators() {
    let r = run(&["check", "--input", path_str(&data("diag_omega.json")), "--what", "gre"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json();
    assert_eq!(rep["verdict"], true);
    assert_eq!(rep["agreement"], true);
    assert_eq!(rep["oracle"]["holds"], true);
    let g = matrix(&rep["witness_G"]);
    assert!((g - dmatrix![1.0, 0.0; 0.0, 2.0]).amax() < 1e-12);
}

#[test]
fn diagonal_covariance_instance_has_unequal_rss() {
    let r = run(&["check", "--input", path_str(&data("diag_omega.json")), "--what", "rss"]);
    assert_eq!(r.code, 1);
    let rep = r.json();
    assert_eq!(rep["verdict"], false);
    assert_eq!(condition(&rep, "Mcond23")["holds"], false);
    assert_eq!(rep["oracle"]["holds"], false);
}

#[test]
fn shared_penalty_instance_passes_rss_check() {
    let r = run(&["check", "--input", path_str(&data("equal_rss.json")), "--what", "rss-same-k"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json();
    assert_eq!(rep["verdict"], true);
    for name in ["Cr431", "Cr432"] {
        let c = condition(&rep, name);
        assert_eq!(c["holds"], true);
        assert!(c["residual"].as_f64().unwrap() <= 1e-12);
    }
}

#[test]
fn estimate_on_omega_fixing_instance() {
    let r = run(&[
        "estimate",
        "--input",
        path_str(&data("omega_fixes_x.json")),
        "--phi",
        "identity",
        "--penalty",
        "k1",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let b = vector(&r.json()["estimate"]);
    assert!((b[0] - 1.0 / 7.0).abs() < 1e-15);
    assert!((b[1] - 2.0 / 7.0).abs() < 1e-15);
}

#[test]
fn zero_observations_give_zero_estimate_and_rss() {
    for phi in ["identity", "omega"] {
        let r = run(&["estimate", "--input", path_str(&data("identity_omega.json")), "--phi", phi]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let rep = r.json();
        assert!(vector(&rep["estimate"]).iter().all(|&v| v == 0.0));
        assert_eq!(rep["rss"].as_f64(), Some(0.0));
    }
}

#[test]
fn shared_penalty_rss_matches_quadratic_form() {
    // Residual quadratic form, entries written out by hand.
    let s3 = 3f64.sqrt();
    let off = (4.0 * s3 - 6.0) / 6.0;
    let form = dmatrix![
        2.0 * (3.0 - s3) / 6.0, -s3 / 6.0, -s3 / 6.0;
        -s3 / 6.0, (12.0 - 5.0 * s3) / 6.0, off;
        -s3 / 6.0, off, (12.0 - 5.0 * s3) / 6.0
    ];
    let y = DVector::from_element(3, 1.0);
    let expected = (y.transpose() * &form * &y)[(0, 0)];

    // Independent route: ‖(I − X(XᵀX + √3I)⁻¹Xᵀ)y‖².
    let x = dmatrix![1.0, 1.0; 1.0, 0.0; 0.0, 1.0];
    let p = (x.transpose() * &x + DMatrix::identity(2, 2) * s3).try_inverse().unwrap() * x.transpose();
    let resid = (DMatrix::identity(3, 3) - &x * p) * &y;
    assert!((resid.norm_squared() - expected).abs() < 1e-12);

    for phi in ["identity", "omega"] {
        let r = run(&["estimate", "--input", path_str(&data("equal_rss.json")), "--phi", phi]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let rss = r.json()["rss"].as_f64().unwrap();
        assert!((rss - expected).abs() < 1e-12, "{phi}: {rss} vs {expected}");
    }
}

#[test]
fn decompose_shared_penalty_instance_with_supplied_basis() {
    let r = run(&["decompose", "--input", path_str(&data("equal_rss.json"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.json();
    let bl = &rep["blocks"];
    assert!((matrix(&bl["Gamma"]) - DMatrix::identity(2, 2) / 3.0).amax() <= 1e-12);
    assert!(matrix(&bl["Xi"]).amax() <= 1e-12);
    assert!((matrix(&bl["Delta"])[(0, 0)] - 1.0 / 3.0).abs() <= 1e-12);
}

#[test]
fn decompose_identity_covariance() {
    let r = run(&["decompose", "--input", path_str(&data("identity_omega.json"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let bl = &r.json()["blocks"];
    let x = dmatrix![1.0, 0.5; 2.0, -1.0; 0.0, 1.0; -1.0, 3.0];
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    assert!((matrix(&bl["Gamma"]) - xtx_inv).amax() <= 1e-12);
    // The canonical basis is orthonormal, so (ZᵀZ)⁻¹ = I.
    assert!((matrix(&bl["Delta"]) - DMatrix::identity(2, 2)).amax() <= 1e-12);
}

#[test]
fn generated_files_pass_their_target_checks() {
    let dir = TempDir::new().unwrap();
    for (kind, n, k, seed, what) in [
        ("gre-eq", "5", "2", "7", "gre"),
        ("kruskal", "4", "2", "3", "rss0"),
        ("rss-eq", "6", "3", "11", "rss"),
        ("bias", "5", "3", "2", "bias"),
    ] {
        let out = dir.path().join(format!("{kind}.json"));
        let g = run(&["generate", "--kind", kind, "--n", n, "--k", k, "--seed", seed, "--out", path_str(&out)]);
        assert_eq!(g.code, 0, "{}", g.stderr);
        let r = run(&["check", "--input", path_str(&out), "--what", what]);
        assert_eq!(r.code, 0, "{kind}: {}", r.stderr);
        let all = run(&["check", "--input", path_str(&out), "--what", "all"]);
        assert!(all.code <= 1, "{kind}: {}", all.stderr);
        assert_eq!(all.json()["agreement"], true);
    }
}

#[test]
fn random_file_is_valid_and_reconstructs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("random.json");
    let g = run(&["generate", "--kind", "random", "--n", "3", "--k", "2", "--seed", "1", "--out", path_str(&out)]);
    assert_eq!(g.code, 0, "{}", g.stderr);
    let r = run(&["decompose", "--input", path_str(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.json()["blocks"]["reconstruction_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn generated_file_round_trips_bit_exactly() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("rcond.json");
    let g = run(&["generate", "--kind", "rcond", "--n", "6", "--k", "2", "--seed", "42", "--out", path_str(&out)]);
    assert_eq!(g.code, 0, "{}", g.stderr);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let inst = gen_instance(&GenSpec::new(6, 2, GenKind::RcondOnly, 42)).unwrap();
    for (key, m) in [("X", &inst.x), ("Omega", &inst.omega), ("K1", &inst.k1), ("K2", &inst.k2)] {
        let read = matrix(&doc[key]);
        assert!(read.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), "{key}");
    }
    let y = vector(&doc["y"]);
    assert!(y.iter().zip(inst.y.unwrap().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(doc["sigma2"].as_f64().unwrap().to_bits(), inst.sigma2.unwrap().to_bits());
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let base = ["generate", "--kind", "random", "--n", "4", "--k", "1"];
    let ra = run(&[&base[..], &["--seed", "7", "--out", path_str(&a)]].concat());
    let rb = run_env(&[&base[..], &["--seed", "8", "--out", path_str(&b)]].concat(), &[("RIDGE_EQUIV_SEED", "7")]);
    assert_eq!((ra.code, rb.code), (0, 0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bad = run_env(&base, &[("RIDGE_EQUIV_SEED", "seven")]);
    assert_eq!(bad.code, 2);
}

#[test]
fn generate_without_out_prints_model() {
    let r = run(&["generate", "--kind", "kruskal", "--n", "3", "--k", "1", "--seed", "5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["n"], 3);
}

#[test]
fn generation_failure_echoes_seed() {
    // A tolerance no construction can meet makes every attempt fail.
    let r = run(&["generate", "--kind", "gre-eq", "--n", "5", "--k", "2", "--seed", "913", "--tol-rel", "1e-300", "--tol-abs", "1e-300"]);
    assert_eq!(r.code, 5, "{}", r.stderr);
    assert!(r.stderr.contains("913"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let no_y = edited(&dir, "diag_omega.json", "y", None);
    let r = run(&["estimate", "--input", path_str(&no_y)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("\"y\""));

    let r = run(&["check", "--input", path_str(&data("diag_omega.json")), "--what", "rss-same-k"]);
    assert_eq!(r.code, 2, "{}", r.stderr);

    let r = run(&["check", "--input", path_str(&data("omega_fixes_x.json")), "--what", "d1"]);
    assert_eq!(r.code, 2, "{}", r.stderr);

    let r = run(&["generate", "--kind", "random", "--n", "2", "--k", "2"]);
    assert_eq!(r.code, 2);

    let r = run(&["check", "--input", "/nonexistent/model.json"]);
    assert_eq!(r.code, 2);

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(run(&["check", "--input", path_str(&garbage)]).code, 2);

    assert_eq!(run(&["check", "--input", path_str(&garbage), "--what", "nope"]).code, 2);
    assert_eq!(run(&["check", "--input", path_str(&data("diag_omega.json")), "--tol-rel", "-1"]).code, 2);
}

#[test]
fn invalid_models_exit_3() {
    let r = run(&["check", "--input", path_str(&data("indefinite_omega.json"))]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("Omega not positive definite"), "{}", r.stderr);
    assert!(r.stdout.is_empty());

    let dir = TempDir::new().unwrap();
    let ragged = edited(&dir, "diag_omega.json", "X", Some(serde_json::json!([[1, 0], [0, 1], [0]])));
    assert_eq!(run(&["decompose", "--input", path_str(&ragged)]).code, 3);

    let short_y = edited(&dir, "diag_omega.json", "y", Some(serde_json::json!([1, 2])));
    assert_eq!(run(&["estimate", "--input", path_str(&short_y)]).code, 3);

    let bad_z = edited(&dir, "equal_rss.json", "Z", Some(serde_json::json!([[1], [1], [1]])));
    assert_eq!(run(&["decompose", "--input", path_str(&bad_z)]).code, 3);

    let neg_s2 = edited(&dir, "diag_omega.json", "sigma2", Some(serde_json::json!(-1.0)));
    assert_eq!(run(&["check", "--input", path_str(&neg_s2), "--what", "gre"]).code, 3);
}

#[test]
fn d1_on_equal_estimators_has_rank_zero() {
    let r = run(&["check", "--input", path_str(&data("diag_omega.json")), "--what", "d1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["d1_rank"], 0);
}

#[test]
fn all_runs_every_applicable_checker() {
    let r = run(&["check", "--input", path_str(&data("equal_rss.json")), "--what", "all"]);
    assert_eq!(r.code, 1);
    let rep = r.json();
    assert_eq!(rep["agreement"], true);
    assert_eq!(rep["verdict"], false);
    for name in ["obe", "rss0", "rss", "rss-same-k", "pd-special", "oracle/rss", "oracle/estimator"] {
        condition(&rep, name);
    }
    assert_eq!(condition(&rep, "rss")["holds"], true);
    assert_eq!(condition(&rep, "oracle/rss")["holds"], true);
    assert_eq!(condition(&rep, "gre")["holds"], false);
    // No beta or sigma2 in the file: d1 is skipped, not an error.
    assert!(rep["conditions"].as_array().unwrap().iter().all(|c| c["name"] != "d1"));
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn report_keys_do_not_depend_on_verdicts() {
    let t = run(&["check", "--input", path_str(&data("diag_omega.json")), "--what", "gre"]).json();
    let f = run(&["check", "--input", path_str(&data("diag_omega.json")), "--what", "rss"]).json();
    let e = run(&["estimate", "--input", path_str(&data("diag_omega.json"))]).json();
    let d = run(&["decompose", "--input", path_str(&data("diag_omega.json"))]).json();
    assert_eq!(keys(&t), keys(&f));
    assert_eq!(keys(&t), keys(&e));
    assert_eq!(keys(&t), keys(&d));
    for c in t["conditions"].as_array().unwrap().iter().chain(f["conditions"].as_array().unwrap()) {
        assert_eq!(keys(c), ["holds", "name", "residual"].map(String::from).into());
    }
}

#[test]
fn residuals_carry_seventeen_significant_digits() {
    let r = run(&["check", "--input", path_str(&data("equal_rss.json")), "--what", "all"]);
    let mut seen = 0;
    for line in r.stdout.lines().filter(|l| l.contains("\"residual\"")) {
        let num = line.split(':').nth(1).unwrap().trim().trim_end_matches(',');
        let mantissa = num.trim_start_matches('-').split('e').next().unwrap();
        let digits = mantissa.chars().filter(char::is_ascii_digit).count();
        assert_eq!(digits, 17, "{line}");
        seen += 1;
    }
    assert!(seen > 10);
}

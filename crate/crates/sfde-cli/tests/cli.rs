//! End-to-end tests of the `sfde` binary: exit codes, artifact shape, and
//! the reproducibility contract.

use std::path::Path;
use std::process::{Command, Output};

fn sfde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const BASE_MODEL: &str = r#"
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.141592653589793, "grid_points": 65},
    "n_modes": 8,
    "noise": {"modes": 1, "spectrum": {"kind": "explicit", "values": [0.5]}},
    "nonlinearity": {
      "kind": "integral_lipschitz",
      "f": {"shape": "tanh", "gain": 0.1},
      "sigma": {"shape": "tanh", "gain": 0.1}
    },
    "delay": 1.0,
    "dt": 0.01
  }
"#;

#[test]
fn smallness_reports_reference_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{ {BASE_MODEL}, "experiment": {{"kind": "smallness"}}, "seed": 1 }}"#
        ),
    );
    let out_dir = dir.path().join("out");
    let out = sfde(&["smallness", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let data = &report["data"];
    let l_iter = data["l_iteration_max"].as_f64().unwrap();
    let l_attr = data["l_attractivity_max"].as_f64().unwrap();
    assert!((l_iter - 0.44721).abs() < 1e-5, "{l_iter}");
    assert!((l_attr - 0.24447).abs() < 1e-5, "{l_attr}");
    for f in ["manifest.json", "series.csv", "report.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn simulate_linear_decay_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.141592653589793, "grid_points": 65},
    "n_modes": 4,
    "nonlinearity": {"kind": "zero"},
    "delay": 1.0,
    "dt": 0.01
  },
  "experiment": {"kind": "simulate", "t_final": 2.0, "initial": {"mode": 1, "scale": 1.0}},
  "seed": 5
}"#,
    );
    let out_dir = dir.path().join("out");
    let out = sfde(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,E_norm_B0_sq,E_norm_B1_sq,E_norm_B_sq"));
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (t, b0_sq) = (cols[0], cols[1]);
        let expect = (-2.0 * t).exp();
        assert!(
            (b0_sq - expect).abs() <= 1e-12 * expect.max(1e-6),
            "t = {t}: {b0_sq} vs {expect}"
        );
    }
}

#[test]
fn rerun_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{ {BASE_MODEL},
  "experiment": {{"kind": "simulate", "t_final": 1.0, "ensemble": 16,
                 "initial": {{"mode": 1, "scale": 1.0}}}},
  "seed": 12 }}"#
        ),
    );
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "simulate",
            "--config",
            &cfg,
            "--out",
        ];
        let out_path = dir.path().join(out);
        let out_str = out_path.to_str().unwrap().to_string();
        args.push(Box::leak(out_str.into_boxed_str()));
        args.extend_from_slice(extra);
        let o = sfde(&args);
        assert!(o.status.success());
    };
    run("r1", &[]);
    run("r2", &["--threads", "4"]);
    let read = |out: &str, f: &str| std::fs::read(dir.path().join(out).join(f)).unwrap();
    assert_eq!(read("r1", "series.csv"), read("r2", "series.csv"));
    assert_eq!(read("r1", "report.json"), read("r2", "report.json"));
}

#[test]
fn seed_flag_changes_stochastic_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{ {BASE_MODEL},
  "experiment": {{"kind": "simulate", "t_final": 1.0, "ensemble": 8,
                 "initial": {{"mode": 1, "scale": 1.0}}}},
  "seed": 12 }}"#
        ),
    );
    let run = |out: &str, seed: &str| {
        let out_path = dir.path().join(out);
        let o = sfde(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            out_path.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success());
    };
    run("s12", "12");
    run("s13", "13");
    let read = |out: &str| std::fs::read(dir.path().join(out).join("series.csv")).unwrap();
    assert_ne!(read("s12"), read("s13"));
}

#[test]
fn exit_codes_by_error_class() {
    let dir = tempfile::tempdir().unwrap();

    // 5: missing file
    let out = sfde(&["simulate", "--config", "does_not_exist.json"]);
    assert_eq!(out.status.code(), Some(5));

    // 6: malformed JSON
    let bad = write_config(dir.path(), "bad.json", "{\"model\": {");
    let out = sfde(&["simulate", "--config", &bad]);
    assert_eq!(out.status.code(), Some(6));

    // 2: validation error naming both values, with every violation listed
    let cfg = write_config(
        dir.path(),
        "dt.json",
        r#"{
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.141592653589793, "grid_points": 65},
    "n_modes": 4,
    "nonlinearity": {"kind": "zero"},
    "delay": 1.0,
    "dt": 0.03
  },
  "experiment": {"kind": "simulate", "t_final": -1.0},
  "seed": 0
}"#,
    );
    let out = sfde(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("0.03") && stderr.contains('1'), "{stderr}");
    assert!(stderr.contains("t_final"), "all violations listed: {stderr}");

    // 2: whole-line weight requirement cited
    let cfg = write_config(
        dir.path(),
        "weight.json",
        r#"{
  "model": {
    "domain": {"kind": "whole_line", "radius": 5.0, "grid_points": 64,
               "weight_exponent": 0.5, "compare_weight_exponent": 0.0}
  },
  "experiment": {"kind": "kernel-check"},
  "seed": 0
}"#,
    );
    let out = sfde(&["kernel-check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("r > d"));

    // unknown keys rejected (serde-level → malformed class)
    let cfg = write_config(
        dir.path(),
        "unknown.json",
        r#"{
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.14, "grid_points": 65},
    "n_modes": 4, "nonlinearity": {"kind": "zero"},
    "delay": 1.0, "dt": 0.01, "unexpected_key": 1
  },
  "experiment": {"kind": "simulate"},
  "seed": 0
}"#,
    );
    let out = sfde(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unexpected_key"));

    // 4: failing check (invariance negative control: transient start,
    // short burn-in)
    let cfg = write_config(
        dir.path(),
        "control.json",
        r#"{
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.141592653589793, "grid_points": 65},
    "n_modes": 4,
    "noise": {"modes": 1, "spectrum": {"kind": "explicit", "values": [1.0]}},
    "nonlinearity": {"kind": "integral_lipschitz", "sigma": {"shape": "constant", "gain": 1.0}},
    "delay": 1.0,
    "dt": 0.02
  },
  "experiment": {"kind": "invariant", "t_final": 0.5, "burn_in": 0.1,
                 "ensemble": 256, "initial": {"mode": 1, "scale": 5.0}},
  "seed": 3
}"#,
    );
    let out_dir = dir.path().join("ctrl");
    let out = sfde(&["invariant", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn manifest_records_tolerances_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{ {BASE_MODEL},
  "experiment": {{"kind": "picard", "t_final": 0.5, "tolerance": 1e-9,
                 "initial": {{"mode": 1, "scale": 1.0}}}},
  "seed": 2 }}"#
        ),
    );
    let out_dir = dir.path().join("out");
    let out = sfde(&["picard", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["kind"], "picard");
    assert!(manifest["tolerances"]["picard_tol"].as_f64().unwrap() > 0.0);
    assert!(manifest["tolerances"]["agreement_envelope"].as_f64().is_some());
    assert!(manifest["wall_time_s"].as_f64().is_some());
    assert_eq!(manifest["config"]["model"]["delay"], 1.0);
}

#[test]
fn kind_conflict_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{ {BASE_MODEL}, "experiment": {{"kind": "smallness"}}, "seed": 1 }}"#
        ),
    );
    let out = sfde(&["picard", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflicts"));
}

/// Every checked-in fuzz corpus seed must flow through parse + validate
/// without panicking, and the well-formed ones must parse.
#[test]
fn fuzz_corpus_seeds_are_exercised() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus/parse_config");
    let mut seen = 0;
    for entry in std::fs::read_dir(&corpus).expect("corpus directory checked in") {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if let Ok(config) = sfde_cli::parse_config_str(&text) {
            let _ = sfde_cli::validate(config, None);
        } else {
            panic!("corpus seed {} is not valid JSON", path.display());
        }
        seen += 1;
    }
    assert!(seen >= 5, "expected several corpus seeds, found {seen}");
}

#[test]
fn dump_samples_writes_raw_observables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.141592653589793, "grid_points": 65},
    "n_modes": 4,
    "noise": {"modes": 1, "spectrum": {"kind": "explicit", "values": [1.0]}},
    "nonlinearity": {"kind": "integral_lipschitz", "sigma": {"shape": "constant", "gain": 1.0}},
    "delay": 1.0,
    "dt": 0.02
  },
  "experiment": {"kind": "invariant", "t_final": 8.0, "ensemble": 32,
                 "stationary_start": true, "dump_samples": true},
  "seed": 9
}"#,
    );
    let out_dir = dir.path().join("out");
    let out = sfde(&["invariant", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["samples_t1.csv", "samples_t2.csv"] {
        let dump = std::fs::read_to_string(out_dir.join(name)).unwrap();
        let mut lines = dump.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("mode_1,"));
        assert_eq!(lines.count(), 32, "one row per trajectory in {name}");
    }
}

#[test]
fn manifest_echoes_filled_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "minimal.json",
        r#"{
  "model": {
    "domain": {"kind": "bounded_dirichlet", "length": 3.141592653589793, "grid_points": 65}
  },
  "experiment": {"kind": "simulate", "t_final": 0.5},
  "seed": 0
}"#,
    );
    let out_dir = dir.path().join("out");
    let out = sfde(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    let model = &manifest["config"]["model"];
    assert_eq!(model["n_modes"], 16);
    assert_eq!(model["delay"], 1.0);
    assert_eq!(model["dt"], 0.01);
    assert_eq!(model["nonlinearity"]["kind"], "zero");
    assert_eq!(manifest["config"]["experiment"]["kind"], "simulate");
}

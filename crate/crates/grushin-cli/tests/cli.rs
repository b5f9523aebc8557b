use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn grushin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grushin"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .args(["--threads", "1"])
        .env_remove("GRUSHIN_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

const SMALL_PLANCHEREL: &str = r#"{
    "potentials": [{"family": "power", "params": {"d": 2.0}}],
    "n_states": 64,
    "r_grid": [1.0, 2.0],
    "xprimes": [0.0, 0.5],
    "thetas": [0.0, 0.25],
    "plancherel_identity": false,
    "kernel": {"xi_min_ratio": 0.01},
    "geometry_samples": 200
}"#;

#[test]
fn empty_suite_gives_empty_report() {
    let d = tempfile::tempdir().unwrap();
    let o = grushin(d.path(), &["all", "--suite", "empty"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(d.path());
    assert_eq!(r["checks"].as_array().unwrap().len(), 0);
    assert_eq!(r["hard_failures"], 0);
}

#[test]
fn harmonic_golden_config_passes_identities() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"potentials": [{"family": "power", "params": {"d": 2.0}}], "n_states": 32}"#);
    for cmd in ["eigensolve", "matrices"] {
        let o = grushin(d.path(), &[cmd, "--config", &cfg]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let r = report(d.path());
        let checks = r["checks"].as_array().unwrap();
        let hard: Vec<&Value> = checks.iter().filter(|c| c["hard"] == true).collect();
        assert!(!hard.is_empty());
        assert!(hard.iter().all(|c| c["status"] == "pass"), "{cmd}: {hard:?}");
    }
    let names: HashSet<String> =
        report(d.path())["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap().to_string()).collect();
    for n in ["av_residual_over_e_n", "virial_r1_over_e", "virial_r2_over_e", "harmonic_a13_error"] {
        assert!(names.contains(n), "missing {n}");
    }
}

#[test]
fn malformed_inputs_exit_nonzero_with_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"potentials": [{"family": "cosh_well", "params": {"d": 2.0}}]}"#);
    let o = grushin(d.path(), &["classify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cosh_well"), "{err}");

    let cfg = write_config(d.path(), r#"{"multipliers": ["wavelet"]}"#);
    let o = grushin(d.path(), &["plancherel", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wavelet"));

    let o = grushin(d.path(), &["classify", "--suite", "nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eigenvalue_csv_has_n_rows_and_decay_csv_is_sorted() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"potentials": [{"family": "power", "params": {"d": 1.0}}], "n_states": 64}"#);
    let o = grushin(d.path(), &["eigensolve", "--config", &cfg]);
    assert!(o.status.success());
    let rows = csv_rows(&d.path().join("eigenvalues_x_p1.csv"));
    assert_eq!(rows.len(), 64);
    assert_eq!(rows[0][0], "1");
    let o = grushin(d.path(), &["matrices", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let ks: Vec<usize> = csv_rows(&d.path().join("decay_x_p1.csv")).iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(!ks.is_empty());
    assert!(ks.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn ratio_csv_has_one_row_per_triple() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL_PLANCHEREL);
    let o = grushin(d.path(), &["plancherel", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&d.path().join("ratios_x_p2_bump.csv"));
    assert_eq!(rows.len(), 2 * 2 * 2);
    let triples: HashSet<(String, String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
    assert_eq!(triples.len(), rows.len());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("plancherel_x_p2_bump.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], report(d.path())["config_hash"]);
    let m = &json["moments"][0];
    for f in ["theta", "r", "xprime", "moment", "norm_sq", "ratio"] {
        assert!(m.get(f).is_some(), "missing {f}");
    }
}

#[test]
fn identical_configs_reproduce_bit_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL_PLANCHEREL);
    for d in [a.path(), b.path()] {
        let o = grushin(d, &["all", "--config", &cfg, "--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut files: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    for f in files {
        let name = f.to_string_lossy();
        if name == "config.json" {
            continue;
        }
        if name == "report.json" {
            let (mut ra, mut rb) = (report(a.path()), report(b.path()));
            ra.as_object_mut().unwrap().remove("runtimes");
            rb.as_object_mut().unwrap().remove("runtimes");
            assert_eq!(ra, rb);
            let keys: Vec<String> = ra["checks"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| format!("{}|{}|{}", c["section"], c["subject"], c["name"]))
                .collect();
            assert_eq!(keys.iter().collect::<HashSet<_>>().len(), keys.len(), "duplicate checks");
            continue;
        }
        let (x, y) = (std::fs::read(a.path().join(&f)).unwrap(), std::fs::read(b.path().join(&f)).unwrap());
        assert!(x == y, "{name} differs");
    }
}

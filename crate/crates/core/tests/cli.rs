use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hybrid_squeeze::scenarios::{COLUMNS, HISTOGRAM_COLUMNS, OUT_DIR_ENV};
use tempfile::TempDir;

fn run(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hybrid-squeeze"));
    cmd.args(args).env_remove(OUT_DIR_ENV);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_arg(dir: &TempDir) -> String {
    dir.path().to_str().unwrap().to_owned()
}

#[test]
fn css_check_writes_schema_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let o = run(&["css-check", "--trajectories", "2000", "--out", &out_arg(&dir)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let text = fs::read_to_string(dir.path().join("css-check.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), COLUMNS.len());
    let xi: f64 = row[10].parse().unwrap();
    let se: f64 = row[11].parse().unwrap();
    assert!((xi - 1.0).abs() < 4.0 * se, "xi={xi} se={se}");

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("css-check.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n_traj"], 2000);
    assert_eq!(meta["seed"], 1);
}

#[test]
fn unknown_subcommand_is_config_error() {
    let o = run(&["no-such-scenario"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_reports_position() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 3\ntrajectories = = 10\n").unwrap();
    let o = run(&["css-check", "--config", cfg.to_str().unwrap(), "--out", &out_arg(&dir)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn out_of_domain_value_is_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&["oat-sweep", "--atoms", "100", "--lambda-oat", "-0.1", "--out", &out_arg(&dir)], &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_key_warns_and_flags_override_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\ntrajectories = 500\natoms = 64\nmystery = true\n").unwrap();
    let o = run(
        &["css-check", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", &out_arg(&dir)],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("mystery"), "{}", stderr(&o));

    let mut rdr = csv::Reader::from_path(dir.path().join("css-check.csv")).unwrap();
    let rec = rdr.records().next().unwrap().unwrap();
    assert_eq!(&rec[1], "64");
    assert_eq!(&rec[12], "500");
    assert_eq!(&rec[14], "9");
}

#[test]
fn json_format() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &["oat-sweep", "--atoms", "100", "--lambda-oat", "0.01", "--lambda-oat", "0.02", "--trajectories", "1000"]
            .iter()
            .copied()
            .chain(["--format", "json", "--out", &out_arg(&dir)])
            .collect::<Vec<_>>(),
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("oat-sweep.json")).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["columns"].as_array().unwrap().len(), COLUMNS.len());
    assert!(v["rows"][1]["xi"].as_f64().unwrap() < 1.0);
}

#[test]
fn bloch_hist_long_form() {
    let dir = TempDir::new().unwrap();
    let o = run(&["bloch-hist", "--atoms", "100", "--trajectories", "1000", "--out", &out_arg(&dir)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("bloch-hist.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), HISTOGRAM_COLUMNS.to_vec());
    let total: u64 = rdr.records().map(|r| r.unwrap()[2].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 1000);
}

#[test]
fn output_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = |d: &TempDir| {
        vec![
            "hybrid-lossless".to_owned(),
            "--lambda-oat".into(),
            "0.01".into(),
            "--trajectories".into(),
            "1000".into(),
            "--seed".into(),
            "42".into(),
            "--out".into(),
            out_arg(d),
        ]
    };
    for d in [&a, &b] {
        let argv = args(d);
        let o = run(&argv.iter().map(String::as_str).collect::<Vec<_>>(), &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let x = fs::read(a.path().join("hybrid-lossless.csv")).unwrap();
    let y = fs::read(b.path().join("hybrid-lossless.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = run(&["css-check", "--trajectories", "500"], &[(OUT_DIR_ENV, dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("css-check.csv").exists());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_restoretime"));
    c.arg("--quiet");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic data run through ingest; returns the cleaned CSV path.
fn prepared(dir: &Path, rows: usize) -> PathBuf {
    let raw = dir.join("raw");
    let clean = dir.join("clean");
    ok(&["synth", "--seed", "1", "--rows", &rows.to_string(), "--corrupt-fraction", "0.01", "--out-dir", s(&raw)]);
    let text = ok(&[
        "ingest",
        "--outages",
        s(&raw.join("outages.csv")),
        "--weather",
        s(&raw.join("weather.csv")),
        "--out-dir",
        s(&clean),
    ]);
    assert!(text.contains("kept"), "{text}");
    let rejections = fs::read_to_string(clean.join("rejections.csv")).unwrap();
    assert_eq!(rejections.lines().count() - 1, (rows as f64 * 0.01).round() as usize);
    clean.join("cleaned.csv")
}

fn csv_column(path: &Path, col: usize) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().to_string())
        .collect()
}

#[test]
fn cluster_train_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cleaned = prepared(dir.path(), 4000);
    let models = dir.path().join("models");

    let out = ok(&["cluster", "--seed", "1", "--input", s(&cleaned), "--out-dir", s(&models), "--k-range", "2..8"]);
    assert!(out.starts_with("k = 4\n"), "{out}");
    for f in ["sdesc.model", "summary.csv", "dbi_curve.csv", "assignments.csv", "features.json", "features.sidecar"] {
        let text = fs::read_to_string(models.join(f)).unwrap();
        if f != "summary.csv" && f != "dbi_curve.csv" && f != "assignments.csv" {
            assert!(text.starts_with("restoretime-"), "{f} has no version line");
        }
    }
    let ks = csv_column(&models.join("dbi_curve.csv"), 0);
    let dbi: Vec<f64> = csv_column(&models.join("dbi_curve.csv"), 1).iter().map(|v| v.parse().unwrap()).collect();
    let best = dbi.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(ks[best], "4", "curve {ks:?} {dbi:?}");

    ok(&["train", "--seed", "1", "--input", s(&cleaned), "--model-dir", s(&models)]);
    let prov = fs::read_to_string(models.join("provenance.csv")).unwrap();
    assert_eq!(prov.lines().count(), 5, "{prov}");

    let preds = dir.path().join("pred/predictions.csv");
    ok(&["predict", "--input", s(&cleaned), "--model-dir", s(&models), "--out", s(&preds)]);
    let assigned = csv_column(&models.join("assignments.csv"), 1);
    let routed = csv_column(&preds, 1);
    assert_eq!(assigned.len(), routed.len());
    let agree = assigned.iter().zip(&routed).filter(|(a, b)| a == b).count();
    assert!(agree as f64 >= 0.95 * assigned.len() as f64, "{agree} of {} rows routed to their own cluster", assigned.len());
    assert!(csv_column(&preds, 2).iter().all(|p| p.parse::<f64>().is_ok_and(f64::is_finite)));
}

#[test]
fn eval_writes_manifest_that_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cleaned = prepared(dir.path(), 3000);
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "seed = 5\nmax_epochs = 40\ntsne_iters = 400\n").unwrap();
    let out_dir = dir.path().join("eval");
    let out = ok(&["eval", "--config", s(&conf), "--seed", "2", "--input", s(&cleaned), "--out-dir", s(&out_dir)]);
    assert!(out.contains("manifest:"), "{out}");

    let manifest_path = out_dir.join("manifest.txt");
    let manifest = fs::read_to_string(&manifest_path).unwrap();
    assert!(manifest.starts_with("restoretime-manifest v1\n"));
    assert!(manifest.contains("\nseed = 2\n"), "flag seed must win over the file");
    assert!(manifest.contains("\"max_epochs\":40"));
    assert!(manifest.contains("metric.global.all.mape_pct = "));
    for f in ["report.json", "report.txt", "predictions.csv", "summary.csv", "dbi_curve.csv", "plot.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }

    let replay = ok(&["replay", "--manifest", s(&manifest_path)]);
    assert!(replay.contains("replay matched all"), "{replay}");

    let key = "metric.global.all.mape_pct = ";
    let at = manifest.find(key).unwrap() + key.len();
    let mut tampered = manifest.clone();
    tampered.insert(at, '9');
    fs::write(&manifest_path, tampered).unwrap();
    let out = run(&["replay", "--manifest", s(&manifest_path)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metric.global.all.mape_pct"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["cluster", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let missing = d.join("nope.csv");
    let out = run(&["cluster", "--input", s(&missing), "--out-dir", s(d)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let out = run(&["cluster", "--input", s(&missing), "--out-dir", s(d), "--k-range", "8..2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k range"));

    let conf = d.join("bad.conf");
    fs::write(&conf, "sed = 1\n").unwrap();
    let out = run(&["synth", "--config", s(&conf), "--out-dir", s(d)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key `sed`"));

    let garbage = d.join("garbage.csv");
    fs::write(&garbage, "a,b\n1,2\n").unwrap();
    let out = run(&["cluster", "--input", s(&garbage), "--out-dir", s(d)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn loaders_reject_other_versions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cleaned = prepared(d, 400);
    let models = d.join("models");
    fs::create_dir_all(&models).unwrap();
    fs::write(models.join("features.json"), "restoretime-features v9\n{}\n").unwrap();
    let out = run(&["predict", "--input", s(&cleaned), "--model-dir", s(&models), "--out", s(&d.join("p.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("version 9") && err.contains("regenerate"), "{err}");

    fs::write(models.join("features.json"), "restoretime-sdesc v1\n{}\n").unwrap();
    let out = run(&["predict", "--input", s(&cleaned), "--model-dir", s(&models), "--out", s(&d.join("p.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected a features artifact"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str =
    "[corpus]\ncount = 40\n[attack.victim]\ntrain_size = 8\nepochs = 50\n[cv]\nfolds = 3\n";

fn tamperguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tamperguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn evaluate_without_features_names_featurize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = tamperguard(&["evaluate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("run `featurize` first"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn stage_from_other_config_is_stale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let o = tamperguard(&["generate", "--out", out, "--config", &cfg, "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tamperguard(&["attack", "--out", out, "--config", &cfg, "--seed", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stale artifact"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[corpus]\ncont = 3\n").unwrap();
    let o = tamperguard(&["generate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cont"), "{}", stderr(&o));

    assert_eq!(tamperguard(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tamperguard(&["--help"]).status.code(), Some(0));
}

#[test]
fn describe_rejects_non_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.bin");
    fs::write(&f, b"not a model").unwrap();
    let o = tamperguard(&["describe", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn full_run_with_paper_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = tamperguard(&[
        "run",
        "--out",
        out.to_str().unwrap(),
        "--config",
        &cfg,
        "--paper-layout",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let t1 = fs::read_to_string(out.join("report/table1.csv")).unwrap();
    let rows: Vec<Vec<&str>> = t1.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + 9);
    assert_eq!(
        rows[0][2..],
        ["Catboost (surrogate)", "KMeans", "Logistic regression"]
    );
    assert!(rows.iter().all(|r| r.len() == 2 + 3));

    let t2 = fs::read_to_string(out.join("report/table2.csv")).unwrap();
    let rows: Vec<Vec<&str>> = t2.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + 7);
    assert!(rows.iter().all(|r| r.len() == 1 + 9));

    for stage in [
        "generate",
        "attack",
        "featurize",
        "evaluate",
        "report",
        "gate",
    ] {
        let stamp = fs::read_to_string(out.join(stage).join("STAMP")).unwrap();
        assert!(stamp.starts_with(&format!("stage={stage}\n")), "{stamp}");
    }

    let d = tamperguard(&["describe", out.join("gate/detector.bin").to_str().unwrap()]);
    assert!(d.status.success());
    assert!(String::from_utf8_lossy(&d.stdout).starts_with("gate: family=ssim"));

    let verdicts = fs::read_to_string(out.join("gate/verdicts.csv")).unwrap();
    assert!(verdicts.starts_with("id,decision,score,second_layer_label,error\n"));
    assert!(verdicts.trim_end().ends_with("errors=0"), "{verdicts}");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spgp"))
        .args(args)
        .env_remove("SPGP_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = spgp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Paths as `'static` strs so argument arrays can mix them with literals.
fn p(path: &Path) -> &'static str {
    Box::leak(path.to_str().unwrap().to_owned().into_boxed_str())
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--n", "40", "--p", "8", "--m", "3", "--k", "2", "--seed", "7", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_is_reproducible_and_lists_support() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--n", "120", "--p", "50", "--m", "8", "--k", "5", "--seed", "7", "--out", p(d)]);
    }
    for f in ["embeddings.spgp", "targets.csv", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["support"].as_array().unwrap().len(), 5);
}

#[test]
fn oversized_support_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spgp(&["synth", "--k", "60", "--p", "50", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("support exceeds positions"));
}

#[test]
fn train_predict_and_mask_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--noise", "0"]);
    let tensor = data.join("embeddings.spgp");
    let targets = data.join("targets.csv");

    let (m1, m2) = (tmp.path().join("m1"), tmp.path().join("m2"));
    for m in [&m1, &m2] {
        ok(&[
            "train", "--tensor", p(&tensor), "--targets", p(&targets), "--variant", "prior",
            "--prior-sigma", "0.15", "--max-iters", "150", "--restarts", "2", "--seed", "3",
            "--trace", "--out", p(m),
        ]);
    }
    assert_eq!(fs::read(m1.join("model.spgm")).unwrap(), fs::read(m2.join("model.spgm")).unwrap());
    let s1: serde_json::Value = serde_json::from_slice(&fs::read(m1.join("summary.json")).unwrap()).unwrap();
    let s2: serde_json::Value = serde_json::from_slice(&fs::read(m2.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s1["snapshot_crc32"], s2["snapshot_crc32"]);
    assert_eq!(s1["config"]["variant"], "prior");
    assert_eq!(s1["config"]["prior_sigma"], 0.15);
    for key in ["final_mll", "hypers", "jitter_used", "sparsity"] {
        assert!(!s1[key].is_null(), "summary lacks {key}");
    }
    let trace = fs::read_to_string(m1.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,grad_norm\n"));

    let model = m1.join("model.spgm");
    let pred = tmp.path().join("pred.csv");
    ok(&["predict", "--model", p(&model), "--tensor", p(&tensor), "--targets", p(&targets), "--out", p(&pred)]);
    let text = fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,y_true,mean,variance"));
    assert_eq!(lines.count(), 40);

    let bare = tmp.path().join("bare.csv");
    ok(&["predict", "--model", p(&model), "--tensor", p(&tensor), "--out", p(&bare), "--full-cov"]);
    assert!(fs::read_to_string(&bare).unwrap().starts_with("id,mean,variance\n"));
    assert!(tmp.path().join("bare.cov.csv").exists());

    let report = tmp.path().join("mask.json");
    ok(&["mask-report", "--model", p(&model), "--out", p(&report)]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["threshold"], 1e-5);
    assert_eq!(r["weights"].as_array().unwrap().len(), 8);
}

#[test]
fn noise_free_mean_model_interpolates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &["--noise", "0"]);
    let m = tmp.path().join("m");
    ok(&[
        "train", "--tensor", p(&data.join("embeddings.spgp")), "--targets", p(&data.join("targets.csv")),
        "--max-iters", "400", "--restarts", "1", "--out", p(&m),
    ]);
    let pred = tmp.path().join("pred.csv");
    ok(&[
        "predict", "--model", p(&m.join("model.spgm")), "--tensor", p(&data.join("embeddings.spgp")),
        "--targets", p(&data.join("targets.csv")), "--out", p(&pred),
    ]);
    let mut abs = 0.0;
    let mut spread = 0.0;
    let text = fs::read_to_string(&pred).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let ybar = rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64;
    for r in &rows {
        abs += (r[0] - r[1]).abs();
        spread += (r[0] - ybar).abs();
    }
    assert!(abs / spread < 0.05, "training MAE {} vs spread {}", abs / rows.len() as f64, spread / rows.len() as f64);
}

#[test]
fn mismatched_embedding_width_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let (d1, d2) = (tmp.path().join("d1"), tmp.path().join("d2"));
    synth(&d1, &[]);
    ok(&["synth", "--n", "10", "--p", "8", "--m", "5", "--k", "2", "--seed", "1", "--out", p(&d2)]);
    let m = tmp.path().join("m");
    ok(&[
        "train", "--tensor", p(&d1.join("embeddings.spgp")), "--targets", p(&d1.join("targets.csv")),
        "--max-iters", "20", "--restarts", "1", "--out", p(&m),
    ]);
    let out = spgp(&[
        "predict", "--model", p(&m.join("model.spgm")), "--tensor", p(&d2.join("embeddings.spgp")),
        "--out", p(&tmp.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_and_sweep_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, &[]);
    let common = [
        "--tensor", p(&data.join("embeddings.spgp")), "--targets", p(&data.join("targets.csv")),
        "--meta", p(&data.join("meta.json")), "--max-iters", "40", "--restarts", "1", "--val-size", "6",
    ];
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    for e in [&e1, &e2] {
        let mut args = vec!["eval", "--trials", "8", "--methods", "mean,softmax,sigmoid,prior", "--out", p(e)];
        args.extend_from_slice(&common);
        ok(&args);
    }
    let csv = fs::read_to_string(e1.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32);
    assert_eq!(csv, fs::read_to_string(e2.join("trials.csv")).unwrap());
    assert_eq!(fs::read(e1.join("summary.json")).unwrap(), fs::read(e2.join("summary.json")).unwrap());

    let s = tmp.path().join("s");
    let mut args = vec!["sweep", "--trials", "2", "--sigmas", "0.05,0.15,0.5", "--out", p(&s)];
    args.extend_from_slice(&common);
    ok(&args);
    let sweep = fs::read_to_string(s.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 3);
}

#[test]
fn split_subcommand_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--n", "120", "--p", "20", "--m", "3", "--k", "3", "--seed", "2", "--out", p(&data)]);
    for (kind, size) in [("one-mut-shuffle", 10), ("uniform-shuffle", 24)] {
        let out = tmp.path().join(format!("{kind}.json"));
        ok(&[
            "split", "--targets", p(&data.join("targets.csv")), "--kind", kind, "--seed", "4",
            "--meta", p(&data.join("meta.json")), "--out", p(&out),
        ]);
        let s: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
        assert_eq!(s["validation"].as_array().unwrap().len(), size);
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let out = tmp.path().join("d");
    fs::write(&cfg, format!(r#"{{"config_version": 1, "n": 30, "p": 6, "m": 2, "k": 2, "max_mut": 3, "seed": 5, "out": "{}"}}"#, p(&out))).unwrap();
    ok(&["--config", p(&cfg), "synth", "--n", "12"]);
    let targets = fs::read_to_string(out.join("targets.csv")).unwrap();
    assert_eq!(targets.lines().count(), 1 + 12);

    fs::write(&cfg, r#"{"config_version": 2}"#).unwrap();
    assert_eq!(spgp(&["--config", p(&cfg), "synth"]).status.code(), Some(2));
    fs::write(&cfg, r#"{"config_version": 1, "bogus": 1}"#).unwrap();
    assert_eq!(spgp(&["--config", p(&cfg), "synth"]).status.code(), Some(2));
}

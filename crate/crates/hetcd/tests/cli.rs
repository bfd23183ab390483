use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hetcd::graph_dir::load_graph;
use hetcd::run::{RunManifest, RunMetrics, SplitMetrics, HISTORY_HEADER};
use hetcd_core::{metrics, Split};
use serde_json::Value;

const SMALL: &str = r#"{"d_model": 8, "heads": 2, "blocks": 1, "max_epochs": 3, "learning_rate": 0.01,
  "sampling": {"batch_size": 20, "budget": 8}}"#;

fn hetcd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcd"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hetcd(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn generate_small(dir: &Path, name: &str) {
    ok(
        dir,
        &[
            "generate",
            "--out",
            name,
            "--communities",
            "3",
            "--target-nodes",
            "60",
            "--aux-nodes",
            "30",
            "--feature-dim",
            "6",
            "--feature-separation",
            "3",
            "--seed",
            "7",
        ],
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    generate_small(dir.path(), "g");
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_a_loadable_graph_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &[
            "generate",
            "--out",
            "g1",
            "--communities",
            "4",
            "--target-nodes",
            "600",
            "--aux-types",
            "2",
            "--p-in",
            "0.1",
            "--p-out",
            "0.01",
            "--seed",
            "7",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("4 communities"));
    ok(
        dir.path(),
        &[
            "generate",
            "--out",
            "g2",
            "--communities",
            "4",
            "--target-nodes",
            "600",
            "--aux-types",
            "2",
            "--p-in",
            "0.1",
            "--p-out",
            "0.01",
            "--seed",
            "7",
        ],
    );
    let g = load_graph(&dir.path().join("g1")).unwrap();
    assert_eq!(g.target_count(), 600);
    assert_eq!(g.num_classes(), 4);
    for entry in fs::read_dir(dir.path().join("g1")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(dir.path().join("g1").join(&name)).unwrap();
        let b = fs::read(dir.path().join("g2").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
}

#[test]
fn invalid_generator_flags_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetcd(dir.path(), &["generate", "--out", "g", "--p-in", "1.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.path().join("g").exists());
    assert_eq!(
        hetcd(dir.path(), &["generate", "--bogus"]).status.code(),
        Some(2)
    );
}

#[test]
fn train_writes_the_run_directory() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "train",
            "--data",
            "g",
            "--config",
            "cfg.json",
            "--out",
            "runs/e1",
            "--set",
            "loss.silhouette=false",
            "--quiet",
        ],
    );
    let run = d.join("runs/e1");
    for f in ["model.ckpt", "history.csv", "metrics.json", "manifest.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some(HISTORY_HEADER));
    assert_eq!(lines.count(), 3);

    let manifest: RunManifest = read_json(&run.join("manifest.json"));
    assert!(!manifest.config.loss.silhouette);
    assert_eq!(manifest.config.d_model, 8);
    assert_eq!(manifest.seeds, [0]);
    assert!(manifest.outputs.contains(&"model.ckpt".to_string()));

    let metrics: Value = read_json(&run.join("metrics.json"));
    for key in ["acc", "clustering_acc", "nmi", "ari", "silhouette"] {
        assert!(metrics[key].is_f64(), "{key}");
        assert_eq!(metrics["per_repeat"][key].as_array().unwrap().len(), 1);
        assert_eq!(metrics["std"][key], 0.0);
    }
    assert_eq!(metrics["split"], "test");
}

#[test]
fn evaluate_reproduces_training_metrics_exactly() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "train", "--data", "g", "--config", "cfg.json", "--out", "r", "--quiet",
        ],
    );
    ok(
        d,
        &[
            "evaluate",
            "--data",
            "g",
            "--checkpoint",
            "r/model.ckpt",
            "--split",
            "test",
            "--out",
            "eval.json",
        ],
    );
    let trained: RunMetrics = read_json(&d.join("r/metrics.json"));
    let evaluated: SplitMetrics = read_json(&d.join("eval.json"));
    assert_eq!(evaluated.split, "test");
    let bits = |v: [f64; 5]| v.map(f64::to_bits);
    assert_eq!(
        bits(evaluated.metrics.values()),
        bits(trained.metrics.values())
    );

    let keys: Vec<String> = read_json::<serde_json::Map<String, Value>>(&d.join("eval.json"))
        .keys()
        .cloned()
        .collect();
    assert_eq!(
        keys,
        ["acc", "ari", "clustering_acc", "nmi", "silhouette", "split"]
    );

    ok(
        d,
        &[
            "evaluate",
            "--data",
            "g",
            "--checkpoint",
            "r/model.ckpt",
            "--split",
            "val",
            "--out",
            "val.json",
        ],
    );
    let val: SplitMetrics = read_json(&d.join("val.json"));
    assert_eq!(val.split, "val");
    let g = load_graph(&d.join("g")).unwrap();
    let (t, v) = (g.split_nodes(Split::Test), g.split_nodes(Split::Val));
    assert!(!t.is_empty() && !v.is_empty());
    assert!(t.iter().all(|n| !v.contains(n)));
}

#[test]
fn embed_exports_every_target_node() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "train", "--data", "g", "--config", "cfg.json", "--out", "r", "--quiet",
        ],
    );
    ok(
        d,
        &[
            "embed",
            "--data",
            "g",
            "--checkpoint",
            "r/model.ckpt",
            "--out",
            "emb.csv",
        ],
    );
    ok(
        d,
        &[
            "evaluate",
            "--data",
            "g",
            "--checkpoint",
            "r/model.ckpt",
            "--out",
            "eval.json",
        ],
    );
    let mut reader = csv::Reader::from_path(d.join("emb.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        &header[..4],
        ["node_id", "pred_community", "true_label", "e_0"]
    );
    assert_eq!(header.len(), 3 + 8);
    assert_eq!(header.last().unwrap(), "e_7");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let g = load_graph(&d.join("g")).unwrap();
    assert_eq!(rows.len(), g.target_count());

    // NMI recomputed from the exported predictions matches `evaluate`.
    let test = g.split_nodes(Split::Test);
    let col = |r: &csv::StringRecord, i: usize| r[i].parse::<usize>().unwrap();
    let pred: Vec<usize> = test.iter().map(|&n| col(&rows[n], 1)).collect();
    let truth: Vec<usize> = test.iter().map(|&n| col(&rows[n], 2)).collect();
    assert_eq!(
        truth,
        test.iter().map(|&n| g.labels()[n]).collect::<Vec<_>>()
    );
    let evaluated: SplitMetrics = read_json(&d.join("eval.json"));
    assert_eq!(metrics::nmi(&pred, &truth).unwrap(), evaluated.metrics.nmi);
}

#[test]
fn repeats_report_mean_and_spread() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "train",
            "--data",
            "g",
            "--config",
            "cfg.json",
            "--out",
            "r",
            "--repeats",
            "2",
            "--quiet",
        ],
    );
    let m: RunMetrics = read_json(&d.join("r/metrics.json"));
    assert_eq!(m.seeds, [0, 1]);
    let nmis = &m.per_repeat.nmi;
    assert_eq!(nmis.len(), 2);
    assert_eq!(m.mean.nmi, (nmis[0] + nmis[1]) / 2.0);
    assert_eq!(m.metrics, m.mean);
    assert!((m.std.nmi - (nmis[0] - nmis[1]).abs() / 2f64.sqrt()).abs() < 1e-15);
    for f in ["model-1.ckpt", "history-1.csv"] {
        assert!(d.join("r").join(f).is_file(), "{f}");
    }
    // Repeat 1 is an ordinary run with the next seed.
    ok(
        d,
        &[
            "evaluate",
            "--data",
            "g",
            "--checkpoint",
            "r/model-1.ckpt",
            "--out",
            "e1.json",
        ],
    );
    let e1: SplitMetrics = read_json(&d.join("e1.json"));
    assert_eq!(e1.metrics.nmi, nmis[1]);
}

#[test]
fn training_failures_map_to_exit_codes() {
    let dir = setup();
    let d = dir.path();
    let missing = hetcd(d, &["train", "--data", "nowhere", "--out", "r"]);
    assert_eq!(missing.status.code(), Some(4));
    let bad_set = hetcd(
        d,
        &[
            "train",
            "--data",
            "g",
            "--out",
            "r",
            "--set",
            "loss.unknown=1",
        ],
    );
    assert_eq!(bad_set.status.code(), Some(2));
    let diverged = hetcd(
        d,
        &[
            "train",
            "--data",
            "g",
            "--config",
            "cfg.json",
            "--out",
            "r",
            "--set",
            "learning_rate=1e300",
            "--quiet",
        ],
    );
    assert_eq!(
        diverged.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged"));
    assert!(d.join("r/last_finite.ckpt").is_file());
}

#[test]
fn incompatible_checkpoint_is_rejected() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "train", "--data", "g", "--config", "cfg.json", "--out", "r", "--quiet",
        ],
    );
    ok(
        d,
        &[
            "generate",
            "--out",
            "other",
            "--communities",
            "3",
            "--target-nodes",
            "60",
            "--aux-nodes",
            "30",
            "--feature-dim",
            "5",
        ],
    );
    let out = hetcd(
        d,
        &[
            "evaluate",
            "--data",
            "other",
            "--checkpoint",
            "r/model.ckpt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not fit"));
}

#[test]
fn commands_leave_the_data_directory_untouched() {
    let dir = setup();
    let d = dir.path();
    let snapshot = || {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(d.join("g"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let before = snapshot();
    ok(
        d,
        &[
            "train", "--data", "g", "--config", "cfg.json", "--out", "r", "--quiet",
        ],
    );
    ok(
        d,
        &["evaluate", "--data", "g", "--checkpoint", "r/model.ckpt"],
    );
    ok(
        d,
        &[
            "embed",
            "--data",
            "g",
            "--checkpoint",
            "r/model.ckpt",
            "--out",
            "e.csv",
        ],
    );
    assert_eq!(snapshot(), before);
}

#[test]
fn verify_passes_and_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let checks: Vec<&str> = stdout.lines().filter(|l| l.contains("max_err")).collect();
    assert!(checks.len() > 40);
    assert!(checks.iter().all(|l| l.starts_with("ok")));
    assert!(stdout.contains("0 failed"));
}

#[test]
fn verify_catches_a_flipped_clustering_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetcd(dir.path(), &["verify", "--flip-kl-sign"]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("FAIL") && l.contains("cluster")));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("failed in: cluster"), "{stderr}");
}

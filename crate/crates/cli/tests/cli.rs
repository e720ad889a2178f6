use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "rounds=3",
    "--set", "epochs_per_round=2",
    "--set", "metric.k=8",
    "--set", "model.hidden=[16]",
    "--set", "model.output_dim=8",
    "--set", "episodes.n_c_train=4",
    "--set", "episodes.n_c_test=3",
    "--set", "eval.queries=5",
    "--set", "eval.episodes=50",
];

fn uflst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uflst"))
        .args(args)
        .env_remove("UFLST_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Six 8-dimensional training blobs of 20 points and five held-out ones.
fn small_data(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    let o = uflst(&[
        "synth", "--out", s(&out),
        "--set", "num_classes=6",
        "--set", "points_per_class=20",
        "--set", "dim=8",
        "--set", "within_std=0.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn train(data: &Path, run: &Path, extra: &[&str]) -> Output {
    let (x, y) = (data.join("train.raw64"), data.join("train_labels.txt"));
    let (tx, ty) = (data.join("test.raw64"), data.join("test_labels.txt"));
    let mut args = vec![
        "train", "--quiet",
        "--data", s(&x), "--labels", s(&y),
        "--test", s(&tx), "--test-labels", s(&ty),
        "--run-dir", s(run),
    ];
    args.extend_from_slice(extra);
    uflst(&args)
}

#[test]
fn gradcheck_reports_three_losses() {
    let o = uflst(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for name in ["prototype", "triplet_hinge", "triplet_soft_margin"] {
        let line = out.lines().find(|l| l.starts_with(name)).expect(name);
        let err: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let o = uflst(&["train", "--config", "/no/such/config.toml", "--data", "x.raw64", "--run-dir", "r"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/config.toml"));

    let o = uflst(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = uflst(&["train", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_override_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let o = train(&data, &dir.path().join("run"), &["--set", "dbscan.mss=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mss"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_uflst"))
        .args(["gradcheck", "--trials", "1"])
        .env("UFLST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UFLST_THREADS"));
}

#[test]
fn train_then_eval_and_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    let mut args = SMALL.to_vec();
    args.extend(["--set", "dbscan.ms=3"]);
    let o = Command::new(env!("CARGO_BIN_EXE_uflst"))
        .args(["train", "--quiet"])
        .args(["--data", s(&data.join("train.raw64")), "--labels", s(&data.join("train_labels.txt"))])
        .args(["--test", s(&data.join("test.raw64")), "--test-labels", s(&data.join("test_labels.txt"))])
        .args(["--run-dir", s(&run)])
        .args(&args)
        .env("UFLST_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    let config = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("ms = 3"));
    assert!(std::fs::read_to_string(run.join("meta.toml")).unwrap().contains("threads = 1"));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    for r in 1..=3 {
        assert!(run.join(format!("checkpoints/round_{r:04}.ckpt")).is_file());
        assert!(run.join(format!("pseudo_labels/round_{r:04}.csv")).is_file());
    }

    let model = run.join("final_model.ckpt");
    let o = uflst(&[
        "eval", "--checkpoint", s(&model),
        "--test", s(&data.join("test.raw64")), "--test-labels", s(&data.join("test_labels.txt")),
        "--set", "eval.episodes=100",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy "), "{}", stdout(&o));
    assert!(stdout(&o).contains("100 episodes"));

    let csv = dir.path().join("pl.csv");
    let o = uflst(&[
        "cluster", "--checkpoint", s(&model),
        "--data", s(&data.join("train.raw64")), "--labels", s(&data.join("train_labels.txt")),
        "--out", s(&csv), "--set", "metric.k=8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("nmi "));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 121);
    assert!(text.starts_with("index,pseudo_label,round\n"));
}

#[test]
fn resume_reproduces_the_tail() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let full = dir.path().join("full");
    let o = train(&data, &full, SMALL);
    assert!(o.status.success(), "{}", stderr(&o));

    // Copy the run, then drop everything after round 1.
    let part = dir.path().join("part");
    for sub in ["", "checkpoints", "pseudo_labels"] {
        std::fs::create_dir_all(part.join(sub)).unwrap();
    }
    for f in ["config.toml", "meta.toml", "checkpoints/round_0001.ckpt"] {
        std::fs::copy(full.join(f), part.join(f)).unwrap();
    }
    let o = train(&data, &part, &["--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "checkpoints/round_0003.ckpt", "final_model.ckpt"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(part.join(f)).unwrap(), "{f}");
    }

    let o = train(&data, &part, &["--resume", "--set", "rounds=9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = uflst(&[
        "eval", "--checkpoint", s(&bad),
        "--test", s(&data.join("test.raw64")), "--test-labels", s(&data.join("test_labels.txt")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("format error"));

    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "1,2\n3\n").unwrap();
    let o = uflst(&["train", "--data", s(&ragged), "--run-dir", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn text_input_with_label_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("points.csv");
    let mut text = String::new();
    for c in 0..6 {
        for i in 0..20 {
            let x = 10.0 * c as f64 + 0.01 * i as f64;
            text.push_str(&format!("{x},{},{c}\n", (i % 3) as f64 * 0.01));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--quiet", "--data", s(&csv), "--label-column", "--run-dir", s(&run)];
    args.extend_from_slice(SMALL);
    args.extend(["--set", "rounds=1"]);
    let o = uflst(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[6].is_empty(), "NMI column should be filled: {metrics}");
}

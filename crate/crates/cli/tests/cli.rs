//! Command-line contract: exit codes, help text, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 7] = ["mine", "train", "eval", "bench", "augment", "experiment", "inspect"];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn sentedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentedit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sentedit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = sentedit(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(sentedit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sentedit(&["mine"]).status.code(), Some(1));
    assert_eq!(sentedit(&["eval", "--model", "m", "--pairs", "p", "--mode", "sideways"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let out = sentedit(&["inspect", "/nonexistent/model.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn help_documents_every_flag() {
    for sub in SUBCOMMANDS {
        let text = ok(&[sub, "--help"]);
        let lines: Vec<&str> = text.lines().map(str::trim_start).collect();
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| l.starts_with("--")) {
            // description on the same line, or on the next when clap wraps
            let inline = line.split("  ").filter(|s| !s.trim().is_empty()).count() > 1;
            let below = lines.get(i + 1).is_some_and(|n| !n.is_empty() && !n.starts_with('-'));
            assert!(inline || below, "`{sub} --help` leaves a flag undocumented: {line}");
        }
        assert!(text.contains("--seed"), "{sub} lacks --seed");
    }
}

fn mine_and_train(dir: &Path, seed: &str) -> PathBuf {
    let pairs = dir.join("pairs.tsv");
    let corpus = fixtures().join("domain_a.txt");
    ok(&["--seed", seed, "mine", "--input", corpus.to_str().unwrap(), "--out", pairs.to_str().unwrap()]);
    let out = dir.join("ckpt");
    let glove = fixtures().join("glove_toy.txt");
    ok(&[
        "--seed",
        seed,
        "--threads",
        "1",
        "train",
        "--pairs",
        pairs.to_str().unwrap(),
        "--emb",
        glove.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--d-model",
        "16",
        "--n-heads",
        "2",
        "--n-layers-enc",
        "1",
        "--n-layers-dec",
        "1",
        "--d-ffn",
        "32",
        "--d-edit",
        "8",
        "--max-steps",
        "20",
        "--eval-interval",
        "10",
        "--valid-fraction",
        "0.002",
    ]);
    out
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = mine_and_train(a.path(), "5");
    let cb = mine_and_train(b.path(), "5");
    let model = ca.join("model.ckpt");
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(cb.join("model.ckpt")).unwrap());
    let history = std::fs::read_to_string(ca.join("history.csv")).unwrap();
    assert!(history.starts_with("step,train_loss,valid_loss,valid_bleu\n"));
    assert_eq!(history.lines().count(), 3);

    let info = ok(&["inspect", model.to_str().unwrap()]);
    for needle in ["format version: 1", "d_model = 16", "trainable:", "frozen:"] {
        assert!(info.contains(needle), "inspect output lacks {needle:?}:\n{info}");
    }

    let m = model.to_str().unwrap();
    let pairs = a.path().join("pairs.tsv");
    let few = a.path().join("few.tsv");
    let text = std::fs::read_to_string(&pairs).unwrap();
    std::fs::write(&few, text.lines().take(5).collect::<Vec<_>>().join("\n")).unwrap();
    let report = ok(&["eval", "--model", m, "--pairs", few.to_str().unwrap(), "--mode", "prior"]);
    assert!(report.starts_with("mode,count,mean_loss,mean_bleu\nprior,5,"));

    let bench = ok(&["bench", "--model", m, "--reps", "20", "--train-steps", "1"]);
    assert!(bench.contains("latency_median_ms"));

    let input = fixtures().join("classify_b.tsv");
    let glove = fixtures().join("glove_toy.txt");
    let augment = |dir: &Path| {
        let out = dir.join("aug.tsv");
        ok(&[
            "--seed",
            "3",
            "augment",
            "--model",
            m,
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--n",
            "1",
            "--temperature",
            "0.8",
            "--emb",
            glove.to_str().unwrap(),
        ]);
        std::fs::read_to_string(out).unwrap()
    };
    let first = augment(a.path());
    assert_eq!(first, augment(b.path()));
    assert_eq!(first.lines().count(), 600);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "d_model = 30\nn_heads = 4\n").unwrap();
    let pairs = dir.path().join("p.tsv");
    std::fs::write(&pairs, "a b\ta c\t0.6\na c\ta b\t0.6\nb c\tb d\t0.6\n").unwrap();
    let glove = fixtures().join("glove_toy.txt");
    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "train",
        "--pairs",
        pairs.to_str().unwrap(),
        "--emb",
        glove.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--max-steps",
        "2",
        "--eval-interval",
        "1",
        "--d-ffn",
        "8",
        "--d-edit",
        "4",
        "--n-layers-enc",
        "1",
        "--n-layers-dec",
        "1",
    ];
    // 30 is not divisible by 4 heads
    assert_eq!(sentedit(&base).status.code(), Some(2));
    let mut fixed = base.to_vec();
    fixed.extend(["--d-model", "8"]);
    ok(&fixed);
    let info = ok(&["inspect", dir.path().join("model.ckpt").to_str().unwrap()]);
    assert!(info.contains("d_model = 8") && info.contains("n_heads = 4"));
}

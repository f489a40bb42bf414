//! Drives the real binary end to end: synthesize a corpus, train, predict,
//! score, cross-validate, ablate, and check the exit code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cefr"))
        .args(args)
        .output()
        .expect("spawn cefr binary")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?})\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn stdout_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Synthesizes a labeled corpus with resource files and writes a fast
/// numeric+bow config next to it. Returns (data, config) paths.
fn workspace(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    let res = dir.join("res");
    let out = run(&[
        "synth",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        data.to_str().unwrap(),
        "--distribution",
        "0.25,0.20,0.20,0.15,0.10,0.10",
        "--resources",
        res.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let config = dir.join("config.toml");
    let toml = format!(
        "seed = {seed}\n\n\
         [families]\n\
         lm = false\n\
         clusters = false\n\
         topics = false\n\
         pos = false\n\n\
         [resources]\n\
         dictionary = {dict:?}\n\
         easy_words = {easy:?}\n\n\
         [booster]\n\
         n_rounds = 12\n\
         learning_rate = 0.3\n\
         min_samples_leaf = 2\n\
         class_weighting = false\n",
        dict = res.join("dictionary.txt"),
        easy = res.join("easy_words.txt"),
    );
    fs::write(&config, toml).unwrap();
    (data, config)
}

#[test]
fn synth_train_predict_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = workspace(dir.path(), 80, 7);
    let model = dir.path().join("model.bin");
    let pred = dir.path().join("pred.csv");

    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout_text(&out).contains("trained 12 rounds on 80 essays"));

    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let body = fs::read_to_string(&pred).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "id,level,p_A1,p_A2,p_B1,p_B2,p_C1,p_C2");
    assert_eq!(lines.len(), 81);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 8);
    let total: f64 = fields[2..].iter().map(|p| p.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-3, "probabilities sum to {total}");

    let out = run(&[
        "score",
        "--pred",
        pred.to_str().unwrap(),
        "--gold",
        data.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = stdout_text(&out);
    assert!(text.contains("accuracy"));
    assert!(text.contains("true\\pred"));

    // A prediction file that misses a gold essay is a data error, not a
    // silent partial score.
    let partial = dir.path().join("partial.csv");
    let kept: Vec<&str> = lines[..lines.len() - 1].to_vec();
    fs::write(&partial, kept.join("\n")).unwrap();
    let out = run(&[
        "score",
        "--pred",
        partial.to_str().unwrap(),
        "--gold",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn training_twice_writes_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = workspace(dir.path(), 60, 11);
    let first = dir.path().join("a.bin");
    let second = dir.path().join("b.bin");

    for out_path in [&first, &second] {
        let out = run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_ok(&out);
    }
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn cv_and_ablate_write_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = workspace(dir.path(), 60, 3);

    let cv_dir = dir.path().join("cv");
    let out = run(&[
        "cv",
        "--data",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--k",
        "2",
        "--report",
        cv_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout_text(&out).contains("pooled"));
    assert!(cv_dir.join("cv_summary.txt").is_file());
    assert!(cv_dir.join("cv_folds.csv").is_file());

    let ab_dir = dir.path().join("ablation");
    let out = run(&[
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "cumulative",
        "--k",
        "2",
        "--report",
        ab_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout_text(&out).contains("+bow"));
    assert!(ab_dir.join("ablation.txt").is_file());
    assert!(ab_dir.join("ablation.csv").is_file());
    let plot = fs::read_to_string(ab_dir.join("plot_data.csv")).unwrap();
    assert!(plot.starts_with("x,error,accuracy"));
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = workspace(dir.path(), 40, 5);

    // Missing required arguments are a usage error.
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown family names are a config error.
    let out = run(&[
        "cv",
        "--data",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--families",
        "numeric,bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // A malformed distribution is a config error.
    let out = run(&[
        "synth",
        "--n",
        "10",
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
        "--distribution",
        "0.5,0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // A dataset path that does not exist is an i/o failure.
    let out = run(&[
        "train",
        "--data",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("m.bin").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    // Pointing --model at a CSV trips the model-file header check.
    let out = run(&[
        "predict",
        "--model",
        data.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("p.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model file"));
}

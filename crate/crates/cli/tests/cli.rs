use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smcg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn ted_of_single_relabel() {
    let o = smcg(&["ted", "--a", "(X)", "--b", "(Y)"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1");
    let o = smcg(&[
        "ted",
        "--a",
        "(S (NP (DT a) (NN dog)))",
        "--b",
        "(S (NP (DT the) (NN cat)))",
        "--strip-words",
    ]);
    assert_eq!(stdout(&o).trim(), "0");
}

#[test]
fn bad_input_exits_with_one() {
    assert_eq!(
        smcg(&["ted", "--a", "(X)", "--b", "(Y)", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        smcg(&["ted", "--a", "(X", "--b", "(Y)"]).status.code(),
        Some(1)
    );
    assert_eq!(smcg(&["ted", "--a", "(X)"]).status.code(), Some(1));
}

#[test]
fn parse_check_reports_each_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("parses.txt");
    fs::write(&input, "(ROOT (NP (DT a) (NN dog)))\n(ROOT (NP\n").unwrap();
    let o = smcg(&["parse-check", "--input", p(&input)]);
    let out = stdout(&o);
    assert!(out.contains("ok, 12 syntax tokens"), "{out}");
    assert!(out.contains("error"), "{out}");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = smcg(&["gradcheck", "--module", "nn"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(" ok")).count(), 5);
    assert_eq!(
        smcg(&["gradcheck", "--module", "nope"]).status.code(),
        Some(1)
    );
}

#[test]
fn synth_train_generate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let o = smcg(&[
        "synth-gen",
        "--out-dir",
        p(&data),
        "--train",
        "20",
        "--val",
        "4",
        "--test",
        "4",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let config = dir.path().join("train.toml");
    fs::write(
        &config,
        "hidden = 8\nword_embed = 8\nsyntax_embed = 8\nattention = 8\n",
    )
    .unwrap();
    let o = smcg(&[
        "train",
        "--config",
        p(&config),
        "--dataset",
        p(&data.join("train.jsonl")),
        "--heldout",
        p(&data.join("val.jsonl")),
        "--grammar",
        p(&data.join("grammar.json")),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--out-dir",
        p(&run),
        "--ablation",
        "all",
        "--epochs",
        "2",
        "--set",
        "eta=0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(run.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    assert!(fs::read_to_string(run.join("config.toml"))
        .unwrap()
        .contains("eta = 0.5"));

    let preds = dir.path().join("preds.jsonl");
    let o = smcg(&[
        "generate",
        "--checkpoint",
        p(&run.join("model.ckpt")),
        "--dataset",
        p(&data.join("test.jsonl")),
        "--grammar",
        p(&data.join("grammar.json")),
        "--exemplars",
        "2",
        "--mode",
        "beam:2",
        "--out",
        p(&preds),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 8);

    let report = dir.path().join("report.json");
    let o = smcg(&[
        "evaluate",
        "--predictions",
        p(&preds),
        "--dataset",
        p(&data.join("test.jsonl")),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("BLEU-4"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["predictions"], 8);
    assert!(r["avg_ted"].is_number());

    // Unknown config keys are rejected before any work.
    fs::write(&config, "hiden = 8\n").unwrap();
    let o = smcg(&[
        "train",
        "--config",
        p(&config),
        "--dataset",
        p(&data.join("train.jsonl")),
        "--out-dir",
        p(&run),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = smcg(&[
        "train",
        "--dataset",
        p(&dir.path().join("absent.jsonl")),
        "--out-dir",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

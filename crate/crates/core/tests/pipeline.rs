use std::fs;

use smcg::data::synth::{write_synth, SynthSpec};
use smcg::data::{read_instances, save_dataset, Vocabularies};
use smcg::model::{generate_predictions, load_checkpoint, DecodeMode};
use smcg::train::{train_run, Ablation, HeldoutEval, TrainConfig};

fn small_spec() -> SynthSpec {
    SynthSpec {
        train: 24,
        val: 6,
        test: 6,
        exemplars_per_video: 2,
        ..SynthSpec::default()
    }
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        hidden: 8,
        word_embed: 8,
        syntax_embed: 8,
        attention: 8,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn synthetic_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_synth(dir.path(), &small_spec(), 4).unwrap();
    let train = read_instances(&dir.path().join("train.jsonl")).unwrap();
    assert_eq!(train, data.train);
    let copy = dir.path().join("copy.jsonl");
    save_dataset(&copy, &train).unwrap();
    assert_eq!(
        fs::read(&copy).unwrap(),
        fs::read(dir.path().join("train.jsonl")).unwrap()
    );
    let again = tempfile::tempdir().unwrap();
    write_synth(again.path(), &small_spec(), 4).unwrap();
    for f in smcg::data::synth::SYNTH_FILES {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_save_load_generate() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_synth(&dir.path().join("data"), &small_spec(), 1).unwrap();
    let vocabs = Vocabularies::build(&data.train, 1);
    let parser = |w: &[String]| data.grammar.parse(w);
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    let mut cfg = small_config(3);
    cfg.apply_ablation(Ablation::All);
    let eval = HeldoutEval {
        parser: Some(&parser),
        cos: None,
    };
    let outcome = train_run(
        &cfg,
        &data.train,
        &data.val,
        &vocabs,
        eval,
        Some(&out),
        |_| {},
    )
    .unwrap();
    assert_eq!(outcome.records.len(), 2);

    let log = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for key in [
        "step",
        "epoch",
        "loss_total",
        "loss_cap",
        "loss_vrec",
        "loss_srec",
        "heldout_TED",
        "heldout_COS",
    ] {
        assert!(lines[0].get(key).is_some(), "missing {key}");
    }
    let saved_cfg =
        TrainConfig::from_toml(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(saved_cfg, cfg);

    let ckpt = load_checkpoint(&out.join("model.ckpt")).unwrap();
    assert_eq!(ckpt.vocabs, vocabs);
    let mut best = outcome.model.clone();
    best.round_to_f32();
    for mode in [DecodeMode::Greedy, DecodeMode::Beam(3)] {
        let a =
            generate_predictions(&best, &vocabs, &data.test, None, mode, Some(&parser), 1).unwrap();
        let b = generate_predictions(
            &ckpt.model,
            &ckpt.vocabs,
            &data.test,
            None,
            mode,
            Some(&parser),
            2,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), data.test.len() * 2);
    }
}

#[test]
fn identical_seeds_give_identical_curves() {
    let data = smcg::data::synth::synth_generate(&small_spec(), 2).unwrap();
    let vocabs = Vocabularies::build(&data.train, 1);
    let run = |seed| {
        let eval = HeldoutEval {
            parser: None,
            cos: None,
        };
        train_run(
            &small_config(seed),
            &data.train,
            &data.val,
            &vocabs,
            eval,
            None,
            |_| {},
        )
        .unwrap()
        .records
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a, run(6));
}

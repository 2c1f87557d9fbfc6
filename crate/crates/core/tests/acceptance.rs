//! Acceptance suite: one PASS/FAIL line per criterion. The synthetic
//! training runs dominate the runtime (about 15 minutes on one core).
//! Failures are reported but only fail the process with ACCEPTANCE_STRICT=1.

use std::collections::{HashMap, HashSet};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smcg::data::synth::{synth_generate, SynthData, SynthSpec};
use smcg::data::{parse_embeddings, tokenize, CaptionInstance, Vocabularies};
use smcg::metrics::{
    bleu4, cider, cos_similarity, default_stopwords, diversity, evaluate, rouge_l, CosContext,
    EmbeddingTable, Prediction,
};
use smcg::model::{
    generate_predictions, load_checkpoint, save_checkpoint, DecodeMode, Example, SmcgModel,
};
use smcg::syntax::fuzz::random_tree;
use smcg::syntax::{syntax_tokens, ted_brute_force, tree_edit_distance};
use smcg::tensor::Tape;
use smcg::train::{
    gradcheck_group, gradcheck_layer, train_run, Ablation, HeldoutEval, TrainConfig,
};

const RECIPE: &str = include_str!("../../../configs/synthetic.toml");
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, "");
    for name in gradcheck_group("all").expect("group") {
        let err = gradcheck_layer(name, 0).expect("gradcheck runs");
        if err >= worst.0 {
            worst = (err, name);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && secs < 60.0,
        format!(
            "max relative error {:.2e} ({}), {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

fn ted_fuzz() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let labels = ["A", "B", "C"];
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (na, nb) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let a = random_tree(&mut rng, na, &labels);
        let b = random_tree(&mut rng, nb, &labels);
        if tree_edit_distance(&a, &b) != ted_brute_force(&a, &b).expect("small trees") {
            mismatches += 1;
        }
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let tree = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(1..=12);
            random_tree(rng, n, &["NP", "VP", "DT", "NN"])
        };
        let (a, b, c) = (tree(&mut rng), tree(&mut rng), tree(&mut rng));
        let ab = tree_edit_distance(&a, &b);
        let ok = tree_edit_distance(&a, &a) == 0
            && (ab == 0) == (a == b)
            && ab == tree_edit_distance(&b, &a)
            && tree_edit_distance(&a, &c) <= ab + tree_edit_distance(&b, &c);
        if !ok {
            violations += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && violations == 0 && secs < 60.0,
        format!("{mismatches} brute-force mismatches, {violations} axiom violations, {secs:.1}s"),
    )
}

fn identity_rows() -> Outcome {
    let data = synth_generate(
        &SynthSpec {
            train: 1,
            val: 1,
            test: 20,
            ..SynthSpec::default()
        },
        0,
    )
    .expect("synthetic data");
    let preds: Vec<Prediction> = data
        .test
        .iter()
        .flat_map(|inst| {
            inst.exemplars.iter().enumerate().map(|(e, ex)| Prediction {
                video_id: inst.video_id.clone(),
                exemplar_id: e,
                caption: ex.text.clone(),
                parse: Some(ex.parse.clone()),
            })
        })
        .collect();
    let ted = evaluate(&preds, &data.test, None)
        .expect("evaluate")
        .avg_ted;
    let caps = vec![tokenize("a man is riding the bike"); 5];
    let div = diversity(&caps).expect("diversity");
    outcome(
        ted == Some(0.0) && div == (0.0, 0.0),
        format!("exemplar-as-prediction TED {ted:?}, identical-caption diversity {div:?}"),
    )
}

struct SeedResult {
    seed: u64,
    ted: HashMap<Ablation, f64>,
    cos: HashMap<Ablation, f64>,
    recall: HashMap<Ablation, f64>,
}

fn content_recall(data: &SynthData, preds: &[Prediction]) -> f64 {
    let by_id: HashMap<&str, &CaptionInstance> =
        data.test.iter().map(|i| (i.video_id.as_str(), i)).collect();
    let total: f64 = preds
        .iter()
        .map(|p| {
            let reference = tokenize(&by_id[p.video_id.as_str()].captions[0].text);
            data.grammar
                .content_recall(&tokenize(&p.caption), &reference)
        })
        .sum();
    total / preds.len() as f64
}

/// Fraction of test videos whose captions under two exemplars of different
/// templates have different parses.
fn template_switch_rate(model: &SmcgModel, vocabs: &Vocabularies, data: &SynthData) -> f64 {
    let preds = generate_predictions(
        model,
        vocabs,
        &data.test,
        Some(2),
        DecodeMode::Greedy,
        Some(&|w: &[String]| data.grammar.parse(w)),
        1,
    )
    .expect("generation");
    let mut differ = 0;
    for pair in preds.chunks(2) {
        if pair[0].parse != pair[1].parse {
            differ += 1;
        }
    }
    differ as f64 / (preds.len() / 2) as f64
}

fn synthetic_runs(switch_rate: &mut Option<f64>) -> (Vec<SeedResult>, f64) {
    let t = Instant::now();
    let base = TrainConfig::from_toml(RECIPE).expect("recipe parses");
    let stop = default_stopwords();
    let mut results = Vec::new();
    for seed in SEEDS {
        let data = synth_generate(&SynthSpec::default(), seed).expect("synthetic data");
        let vocabs = Vocabularies::build(&data.train, base.min_word_freq);
        let table = parse_embeddings(&data.embeddings, &HashSet::new())
            .expect("embeddings")
            .table;
        let cos_ctx = CosContext {
            table: &table,
            stopwords: &stop,
        };
        let parser = |w: &[String]| data.grammar.parse(w);
        let mut r = SeedResult {
            seed,
            ted: HashMap::new(),
            cos: HashMap::new(),
            recall: HashMap::new(),
        };
        for abl in [
            Ablation::CaptionBaseline,
            Ablation::ConcatBaseline,
            Ablation::None,
            Ablation::All,
        ] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.apply_ablation(abl);
            let eval = HeldoutEval {
                parser: Some(&parser),
                cos: Some(&cos_ctx),
            };
            let out = train_run(&cfg, &data.train, &data.val, &vocabs, eval, None, |_| {})
                .expect("training");
            let preds = generate_predictions(
                &out.model,
                &vocabs,
                &data.test,
                None,
                DecodeMode::Greedy,
                Some(&parser),
                1,
            )
            .expect("generation");
            let rep = evaluate(&preds, &data.test, Some(&cos_ctx)).expect("evaluation");
            r.ted.insert(abl, rep.avg_ted.expect("parsed"));
            r.cos.insert(abl, rep.cos.expect("embeddings"));
            r.recall.insert(abl, content_recall(&data, &preds));
            if seed == SEEDS[0] && abl == Ablation::All {
                *switch_rate = Some(template_switch_rate(&out.model, &vocabs, &data));
            }
        }
        println!(
            "  seed {seed}: TED caption {:.3} concat {:.3} smcg {:.3} allrec {:.3} | COS smcg {:.4} allrec {:.4} | recall caption {:.3} allrec {:.3}",
            r.ted[&Ablation::CaptionBaseline],
            r.ted[&Ablation::ConcatBaseline],
            r.ted[&Ablation::None],
            r.ted[&Ablation::All],
            r.cos[&Ablation::None],
            r.cos[&Ablation::All],
            r.recall[&Ablation::CaptionBaseline],
            r.recall[&Ablation::All],
        );
        results.push(r);
    }
    (results, t.elapsed().as_secs_f64())
}

fn main_claim(results: &[SeedResult], secs: f64) -> Outcome {
    let mut holds = Vec::new();
    for r in results {
        let (cap, concat, all) = (
            r.ted[&Ablation::CaptionBaseline],
            r.ted[&Ablation::ConcatBaseline],
            r.ted[&Ablation::All],
        );
        // Recall may not fall more than 5 points below the caption baseline.
        let recall_ok = r.recall[&Ablation::All] >= r.recall[&Ablation::CaptionBaseline] - 0.05;
        if all < concat && concat < cap && recall_ok {
            holds.push(r.seed);
        }
    }
    let ties = results
        .iter()
        .filter(|r| r.ted[&Ablation::All] == r.ted[&Ablation::ConcatBaseline])
        .count();
    outcome(
        holds.len() >= 4 && secs < 1800.0,
        format!(
            "ordering holds for seeds {holds:?} ({}/5); allrec ties concat in {ties}/5; {secs:.0}s",
            holds.len()
        ),
    )
}

fn ablation_direction(results: &[SeedResult]) -> Outcome {
    let ted = results
        .iter()
        .filter(|r| r.ted[&Ablation::All] <= r.ted[&Ablation::None])
        .count();
    let cos = results
        .iter()
        .filter(|r| r.cos[&Ablation::All] >= r.cos[&Ablation::None])
        .count();
    outcome(
        ted >= 3 && cos >= 3,
        format!("TED(allrec) <= TED(smcg) in {ted}/5, COS(allrec) >= COS(smcg) in {cos}/5"),
    )
}

fn single_instance() -> (CaptionInstance, Vocabularies) {
    let data = synth_generate(
        &SynthSpec {
            train: 1,
            val: 1,
            test: 1,
            ..SynthSpec::default()
        },
        7,
    )
    .expect("synthetic data");
    let vocabs = Vocabularies::build(&data.train, 1);
    (data.train[0].clone(), vocabs)
}

fn overfit() -> Outcome {
    let (inst, vocabs) = single_instance();
    let mut cfg = TrainConfig::from_toml(RECIPE).expect("recipe parses");
    cfg.apply_ablation(Ablation::All);
    cfg.epochs = 500;
    // Memorizing one caption: the recipe lr of 3e-3 plateaus near 0.015.
    cfg.lr = 1e-2;
    cfg.batch_size = 1;
    let train = vec![inst.clone()];
    let out = train_run(
        &cfg,
        &train,
        &[],
        &vocabs,
        HeldoutEval::default(),
        None,
        |_| {},
    )
    .expect("training");
    let first_below = out
        .records
        .iter()
        .find(|r| r.loss_cap < 0.01)
        .map(|r| r.step);
    // The log holds the loss before each epoch's update; score the final
    // parameters directly as well.
    let ex = Example::new(
        &inst.features,
        &inst.captions[0].text,
        &inst.captions[0].parse,
        &vocabs,
    )
    .expect("example");
    let mut tape = Tape::new();
    let p = out.model.store.bind(&mut tape, false);
    let terms = out
        .model
        .losses(&mut tape, &p, &ex, Default::default())
        .expect("loss");
    let final_loss = tape.scalar(terms.caption);
    let exemplar = vocabs.syntax.encode(
        &syntax_tokens(&inst.captions[0].parse)
            .expect("parse")
            .tokens,
    );
    let words = out
        .model
        .generate(&inst.features, &exemplar, DecodeMode::Greedy)
        .expect("generation");
    let generated = vocabs.words.decode(&words).join(" ");
    let reproduced = generated == tokenize(&inst.captions[0].text).join(" ");
    outcome(
        first_below.is_some() && final_loss < 0.01 && reproduced,
        format!("caption loss < 0.01 at step {first_below:?}, final {final_loss:.2e}; greedy {generated:?}"),
    )
}

fn metric_oracles() -> Outcome {
    // Frozen from tests/fixtures/metric_oracle.py and cos_oracle.py.
    let corpus = [
        (
            "a man is playing a guitar",
            [
                "a man plays a guitar",
                "a man is playing the guitar on stage",
            ],
        ),
        (
            "a woman is cutting an onion",
            [
                "a woman slices an onion",
                "someone is cutting an onion in the kitchen",
            ],
        ),
        (
            "the dog runs on the beach",
            [
                "a dog is running on the beach",
                "the dog runs along the sand",
            ],
        ),
    ];
    let hyps: Vec<Vec<String>> = corpus.iter().map(|(h, _)| tokenize(h)).collect();
    let refs: Vec<Vec<Vec<String>>> = corpus
        .iter()
        .map(|(_, r)| r.iter().map(|s| tokenize(s)).collect())
        .collect();
    let b = bleu4(&hyps, &refs).expect("bleu");
    let r = rouge_l(&hyps, &refs).expect("rouge");
    let c = cider(&hyps, &refs).expect("cider").0;
    let mut table = EmbeddingTable::new(4);
    for (w, v) in [
        ("man", [1.0, 0.0, 0.0, 0.5]),
        ("guitar", [0.0, 1.0, 0.0, 0.5]),
        ("plays", [0.0, 0.0, 1.0, 0.0]),
        ("woman", [0.9, 0.1, 0.0, 0.4]),
        ("drum", [0.0, 0.8, 0.3, 0.0]),
    ] {
        table.insert(w, v.to_vec());
    }
    let stop: HashSet<String> = ["a", "the", "is", "on"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pred = tokenize("a man plays the guitar");
    let cos_refs: Vec<Vec<String>> = [
        "a woman plays a drum",
        "the man is on a guitar",
        "a xylophone",
    ]
    .iter()
    .map(|s| tokenize(s))
    .collect();
    let cos = cos_similarity(&pred, &cos_refs, &table, &stop).expect("cos");
    let same = vec![hyps[0].clone()];
    let same_refs = vec![vec![hyps[0].clone()]];
    let b1 = bleu4(&same, &same_refs).expect("bleu");
    let r1 = rouge_l(&same, &same_refs).expect("rouge");
    let c1 = cos_similarity(&pred, std::slice::from_ref(&pred), &table, &stop).expect("cos");
    let close = |a: f64, b: f64| (a - b).abs() < 1e-6;
    outcome(
        close(b, 0.546024172542)
            && close(r, 0.739797979798)
            && close(c, 3.479757693308)
            && close(cos, 0.601824875400)
            && close(b1, 1.0)
            && close(r1, 1.0)
            && close(c1, 1.0),
        format!(
            "BLEU-4 {b:.9} ROUGE-L {r:.9} CIDEr {c:.9} COS {cos:.9}; identical: {b1} {r1} {c1:.12}"
        ),
    )
}

fn determinism() -> Outcome {
    let spec = SynthSpec {
        train: 32,
        val: 8,
        test: 8,
        exemplars_per_video: 2,
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec, 11).expect("synthetic data");
    let vocabs = Vocabularies::build(&data.train, 1);
    let mut cfg = TrainConfig::from_toml(RECIPE).expect("recipe parses");
    cfg.apply_ablation(Ablation::All);
    cfg.epochs = 2;
    cfg.hidden = 12;
    cfg.word_embed = 12;
    cfg.syntax_embed = 12;
    cfg.attention = 12;
    let parser = |w: &[String]| data.grammar.parse(w);
    let run = || {
        let eval = HeldoutEval {
            parser: Some(&parser),
            cos: None,
        };
        train_run(&cfg, &data.train, &data.val, &vocabs, eval, None, |_| {}).expect("training")
    };
    let (a, b) = (run(), run());
    let same_curves = a.records == b.records;
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &a.model, &vocabs, serde_json::Value::Null).expect("save");
    let loaded = load_checkpoint(&path).expect("load");
    let mut rounded = a.model.clone();
    rounded.round_to_f32();
    let gen = |m: &SmcgModel, v: &Vocabularies| {
        generate_predictions(
            m,
            v,
            &data.test,
            None,
            DecodeMode::Beam(3),
            Some(&parser),
            1,
        )
        .expect("generation")
    };
    let same_generations = gen(&rounded, &vocabs) == gen(&loaded.model, &loaded.vocabs);
    outcome(
        same_curves && same_generations,
        format!("identical loss curves: {same_curves}; checkpoint round-trip generations identical: {same_generations}"),
    )
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let mut report = |n: &str, name: &str, o: Outcome| {
        let line = format!(
            "criterion {n} [{name}]: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        println!("{line}");
        lines.push((o.pass, line));
    };
    report("1", "gradient correctness", gradients());
    report("2", "TED correctness", ted_fuzz());
    report("3", "identity rows", identity_rows());
    let mut switch = None;
    let (results, secs) = synthetic_runs(&mut switch);
    report("4", "synthetic main claim", main_claim(&results, secs));
    report("5", "ablation direction", ablation_direction(&results));
    report("6", "overfit sanity", overfit());
    report("7", "metric oracles", metric_oracles());
    report("8", "determinism and persistence", determinism());
    if let Some(rate) = switch {
        println!("note: exemplar template switch changes the parse for {:.1}% of test videos (seed 0, allrec)", 100.0 * rate);
    }
    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed == 0 || std::env::var_os("ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

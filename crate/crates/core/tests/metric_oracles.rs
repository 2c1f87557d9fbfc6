//! Metric values frozen from the independent scripts in `fixtures/`.

use std::collections::HashSet;

use smcg::data::{tokenize, CaptionInstance, FeatureSource, Sentence};
use smcg::metrics::{
    bleu4, cider, cos_similarity, diversity, evaluate, rouge_l, CosContext, EmbeddingTable,
    Prediction,
};
use smcg::tensor::Tensor;

const CORPUS: [(&str, [&str; 2]); 3] = [
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

fn corpus() -> (Vec<Vec<String>>, Vec<Vec<Vec<String>>>) {
    let hyps = CORPUS.iter().map(|(h, _)| tokenize(h)).collect();
    let refs = CORPUS
        .iter()
        .map(|(_, r)| r.iter().map(|s| tokenize(s)).collect())
        .collect();
    (hyps, refs)
}

#[test]
fn ngram_metrics_match_oracle() {
    // fixtures/metric_oracle.py
    let (hyps, refs) = corpus();
    assert!((bleu4(&hyps, &refs).unwrap() - 0.546024172542).abs() < 1e-6);
    assert!((rouge_l(&hyps, &refs).unwrap() - 0.739797979798).abs() < 1e-6);
    let (c, per) = cider(&hyps, &refs).unwrap();
    assert!((c - 3.479757693308).abs() < 1e-6);
    for (got, want) in per
        .iter()
        .zip([3.767825505868, 3.587626368505, 3.083821205552])
    {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn identical_sentences_score_one() {
    let s = vec![tokenize("a man is playing a guitar")];
    let r = vec![vec![s[0].clone()]];
    assert!((bleu4(&s, &r).unwrap() - 1.0).abs() < 1e-12);
    assert!((rouge_l(&s, &r).unwrap() - 1.0).abs() < 1e-12);
}

fn toy_table() -> EmbeddingTable {
    let mut t = EmbeddingTable::new(4);
    t.insert("man", vec![1.0, 0.0, 0.0, 0.5]);
    t.insert("guitar", vec![0.0, 1.0, 0.0, 0.5]);
    t.insert("plays", vec![0.0, 0.0, 1.0, 0.0]);
    t.insert("woman", vec![0.9, 0.1, 0.0, 0.4]);
    t.insert("drum", vec![0.0, 0.8, 0.3, 0.0]);
    t
}

#[test]
fn cos_matches_oracle() {
    // fixtures/cos_oracle.py
    let stop: HashSet<String> = ["a", "the", "is", "on"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pred = tokenize("a man plays the guitar");
    let refs: Vec<Vec<String>> = [
        "a woman plays a drum",
        "the man is on a guitar",
        "a xylophone",
    ]
    .iter()
    .map(|s| tokenize(s))
    .collect();
    let c = cos_similarity(&pred, &refs, &toy_table(), &stop).unwrap();
    assert!((c - 0.601824875400).abs() < 1e-9, "{c}");
    let same = cos_similarity(&pred, std::slice::from_ref(&pred), &toy_table(), &stop).unwrap();
    assert!((same - 1.0).abs() < 1e-12);
}

fn instance(id: &str, caption: &str, exemplars: &[(&str, &str)]) -> CaptionInstance {
    let rows = vec![vec![0.5, -0.5]];
    CaptionInstance {
        video_id: id.into(),
        features: Tensor::from_rows(&rows).unwrap(),
        source: FeatureSource::Inline(rows),
        captions: vec![Sentence {
            text: caption.into(),
            parse: "(ROOT (NP (NN x)))".into(),
        }],
        exemplars: exemplars
            .iter()
            .map(|(t, p)| Sentence {
                text: t.to_string(),
                parse: p.to_string(),
            })
            .collect(),
    }
}

#[test]
fn exemplar_parses_as_predictions_give_zero_ted() {
    let ex = [
        (
            "a dog runs",
            "(ROOT (S (NP (DT a) (NN dog)) (VP (VBZ runs))))",
        ),
        ("the cat", "(ROOT (NP (DT the) (NN cat)))"),
        (
            "there is a bird",
            "(ROOT (S (NP (EX there)) (VP (VBZ is) (NP (DT a) (NN bird)))))",
        ),
    ];
    let inst = instance("v1", "a dog runs", &ex);
    let preds: Vec<Prediction> = ex
        .iter()
        .enumerate()
        .map(|(i, (t, p))| Prediction {
            video_id: "v1".into(),
            exemplar_id: i,
            caption: t.to_string(),
            parse: Some(p.to_string()),
        })
        .collect();
    let report = evaluate(&preds, &[inst], None).unwrap();
    assert_eq!(report.avg_ted, Some(0.0));
    assert_eq!(report.missing_parses, 0);
}

#[test]
fn identical_captions_have_zero_diversity() {
    for k in [2, 5, 20] {
        let caps = vec![tokenize("a man is playing a guitar"); k];
        assert_eq!(diversity(&caps).unwrap(), (0.0, 0.0));
    }
}

#[test]
fn evaluation_ignores_prediction_order_and_worker_count() {
    let stop: HashSet<String> = ["a", "the"].iter().map(|s| s.to_string()).collect();
    let table = toy_table();
    let ctx = CosContext {
        table: &table,
        stopwords: &stop,
    };
    let ex = [
        ("a man", "(ROOT (NP (DT a) (NN man)))"),
        ("a drum", "(ROOT (NP (DT a) (NN drum)))"),
    ];
    let insts = vec![
        instance("v1", "a man plays a guitar", &ex),
        instance("v2", "a woman plays a drum", &ex),
    ];
    let mut preds = Vec::new();
    for (v, caps) in [
        ("v1", ["a man plays", "the guitar"]),
        ("v2", ["a woman", "a drum plays"]),
    ] {
        for (i, c) in caps.iter().enumerate() {
            preds.push(Prediction {
                video_id: v.into(),
                exemplar_id: i,
                caption: c.to_string(),
                parse: Some("(ROOT (NP (DT a) (NN man)))".into()),
            });
        }
    }
    let a = evaluate(&preds, &insts, Some(&ctx)).unwrap();
    preds.reverse();
    let b = smcg::metrics::evaluate_with_workers(&preds, &insts, Some(&ctx), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.videos, 2);
}

//! Training objective, Adam, and the epoch loop with held-out model selection.

mod adam;
mod gradcheck;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_atomic, CaptionInstance, DataError, Vocabularies};
use crate::metrics::{evaluate, CosContext, MetricsError};
use crate::model::{
    generate_predictions, save_checkpoint, DecodeMode, DecoderKind, Example, ModelConfig,
    ModelError, Parser, Reconstruct, SmcgModel,
};
use crate::nn::{Bound, MlpInit};
use crate::tensor::{Tape, TensorError, Var};

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use gradcheck::{gradcheck_group, gradcheck_layer, GRADCHECK_LAYERS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("instance {row} ({video_id}): {source}")]
    Instance {
        row: usize,
        video_id: String,
        source: ModelError,
    },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid training config: {0}")]
    Config(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Preset model/loss combinations used for comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Modulated decoder, no reconstructors.
    None,
    Video,
    Syntax,
    /// Modulated decoder with both reconstructors.
    All,
    ConcatBaseline,
    CaptionBaseline,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "none" => Ablation::None,
            "video" => Ablation::Video,
            "syntax" => Ablation::Syntax,
            "all" => Ablation::All,
            "concat-baseline" => Ablation::ConcatBaseline,
            "caption-baseline" => Ablation::CaptionBaseline,
            _ => {
                return Err(format!(
                    "unknown ablation {s:?}; expected none, video, syntax, all, concat-baseline or caption-baseline"
                ))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    None,
    Video,
    Syntax,
    Both,
}

impl Reconstruction {
    pub fn flags(self) -> Reconstruct {
        Reconstruct {
            video: matches!(self, Reconstruction::Video | Reconstruction::Both),
            syntax: matches!(self, Reconstruction::Syntax | Reconstruction::Both),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub word_embed: usize,
    pub syntax_embed: usize,
    pub attention: usize,
    pub max_len: usize,
    pub min_word_freq: usize,
    pub init_scale: f64,
    pub embed_scale: f64,
    /// Uniform ranges of the modulation MLP weights, hidden and output layer.
    pub modulation_init: MlpInit,
    pub decoder: DecoderKind,
    pub reconstruction: Reconstruction,
    pub per_gate_norm: bool,
    pub init_mean_state: bool,
    /// Held-out videos scored after each epoch (all when 0).
    pub heldout_videos: usize,
    /// Exemplars per held-out video.
    pub heldout_exemplars: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 1.0,
            eta: 4.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            hidden: 32,
            word_embed: 32,
            syntax_embed: 32,
            attention: 32,
            max_len: 30,
            min_word_freq: 1,
            init_scale: 0.08,
            embed_scale: 1.0,
            modulation_init: MlpInit { w1: 0.08, w2: 0.0 },
            decoder: DecoderKind::Modulated,
            reconstruction: Reconstruction::Both,
            per_gate_norm: false,
            init_mean_state: false,
            heldout_videos: 0,
            heldout_exemplars: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if [self.alpha, self.lambda, self.eta]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("lr must be positive and Adam betas in [0, 1)");
        }
        if self.batch_size == 0
            || self.hidden == 0
            || self.word_embed == 0
            || self.syntax_embed == 0
            || self.attention == 0
        {
            return bad("batch size and layer widths must be positive");
        }
        let m = self.modulation_init;
        if [self.init_scale, self.embed_scale, m.w1, m.w2]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("init ranges must be finite and non-negative");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if self.decoder != DecoderKind::Modulated && self.per_gate_norm {
            return bad("per_gate_norm needs the modulated decoder");
        }
        Ok(())
    }

    pub fn apply_ablation(&mut self, a: Ablation) {
        let (decoder, rec) = match a {
            Ablation::None => (DecoderKind::Modulated, Reconstruction::None),
            Ablation::Video => (DecoderKind::Modulated, Reconstruction::Video),
            Ablation::Syntax => (DecoderKind::Modulated, Reconstruction::Syntax),
            Ablation::All => (DecoderKind::Modulated, Reconstruction::Both),
            Ablation::ConcatBaseline => (DecoderKind::Concat, Reconstruction::None),
            Ablation::CaptionBaseline => (DecoderKind::Plain, Reconstruction::None),
        };
        self.decoder = decoder;
        self.reconstruction = rec;
    }

    pub fn model_config(&self, vocabs: &Vocabularies, feat_dim: usize) -> ModelConfig {
        ModelConfig {
            word_vocab: vocabs.words.len(),
            syntax_vocab: vocabs.syntax.len(),
            feat_dim,
            hidden: self.hidden,
            word_embed: self.word_embed,
            syntax_embed: self.syntax_embed,
            attention: self.attention,
            decoder: self.decoder,
            per_gate_norm: self.per_gate_norm,
            init_mean_state: self.init_mean_state,
            max_len: self.max_len,
            init_scale: self.init_scale,
            embed_scale: self.embed_scale,
            modulation_init: self.modulation_init,
        }
    }

    fn weights(&self) -> LossWeights {
        let r = self.reconstruction.flags();
        LossWeights {
            alpha: self.alpha,
            lambda: if r.video { self.lambda } else { 0.0 },
            eta: if r.syntax { self.eta } else { 0.0 },
        }
    }
}

/// Effective weights; a zero weight removes the term from the graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
}

impl LossWeights {
    fn reconstruct(&self) -> Reconstruct {
        Reconstruct {
            video: self.lambda > 0.0,
            syntax: self.eta > 0.0,
        }
    }
}

/// Batch-mean loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub caption: f64,
    pub video: f64,
    pub syntax: f64,
}

impl LossParts {
    fn add_scaled(&mut self, o: &LossParts, s: f64) {
        self.total += s * o.total;
        self.caption += s * o.caption;
        self.video += s * o.video;
        self.syntax += s * o.syntax;
    }
}

/// Builds the weighted objective `(1/B)·Σ α·cap + λ·vrec + η·srec` over
/// `batch` on one tape. Returns the loss node and its components, each a mean
/// over the batch of `total_items` examples.
pub fn total_loss(
    model: &SmcgModel,
    tape: &mut Tape,
    p: &Bound,
    batch: &[&Example],
    weights: LossWeights,
    total_items: usize,
) -> Result<(Var, LossParts), ModelError> {
    let inv = 1.0 / total_items as f64;
    let rec = weights.reconstruct();
    let mut terms = Vec::with_capacity(3 * batch.len());
    let mut parts = LossParts::default();
    for ex in batch {
        let l = model.losses(tape, p, ex, rec)?;
        parts.caption += tape.scalar(l.caption) * inv;
        if weights.alpha > 0.0 {
            terms.push((weights.alpha * inv, l.caption));
        }
        if let Some(v) = l.video {
            parts.video += tape.scalar(v) * inv;
            terms.push((weights.lambda * inv, v));
        }
        if let Some(s) = l.syntax {
            parts.syntax += tape.scalar(s) * inv;
            terms.push((weights.eta * inv, s));
        }
    }
    if terms.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let loss = tape.weighted_sum(&terms)?;
    parts.total = tape.scalar(loss);
    Ok((loss, parts))
}

/// Gradient of the batch objective, summed over `workers` fixed shards in
/// order so results do not depend on thread scheduling.
pub fn batch_gradient(
    model: &SmcgModel,
    batch: &[&Example],
    weights: LossWeights,
    workers: usize,
) -> Result<(Vec<Vec<f64>>, LossParts), ModelError> {
    let shards = workers.clamp(1, batch.len().max(1));
    let size = batch.len().div_ceil(shards);
    let shard = |chunk: &[&Example]| -> Result<(Vec<Vec<f64>>, LossParts), ModelError> {
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape, true);
        let (loss, parts) = total_loss(model, &mut tape, &p, chunk, weights, batch.len())?;
        tape.backward(loss)?;
        let mut g: Vec<Vec<f64>> = model
            .store
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        p.accumulate(&tape, &mut g);
        Ok((g, parts))
    };
    let chunks: Vec<&[&Example]> = batch.chunks(size.max(1)).collect();
    let results: Vec<_> = if chunks.len() == 1 {
        vec![shard(chunks[0])]
    } else {
        chunks.par_iter().map(|c| shard(c)).collect()
    };
    let mut grads: Option<Vec<Vec<f64>>> = None;
    let mut parts = LossParts::default();
    for r in results {
        let (g, pt) = r?;
        parts.add_scaled(&pt, 1.0);
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((grads.unwrap_or_default(), parts))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cap: f64,
    pub loss_vrec: f64,
    pub loss_srec: f64,
    #[serde(rename = "heldout_TED")]
    pub heldout_ted: Option<f64>,
    #[serde(rename = "heldout_COS")]
    pub heldout_cos: Option<f64>,
    /// Mean held-out caption loss with the ground-truth parse as exemplar.
    pub heldout_cap: Option<f64>,
}

/// Held-out scoring inputs: a parser for generated captions (enables TED)
/// and word embeddings (enables COS).
#[derive(Default, Clone, Copy)]
pub struct HeldoutEval<'a> {
    pub parser: Option<&'a Parser<'a>>,
    pub cos: Option<&'a CosContext<'a>>,
}

pub struct TrainOutcome {
    /// Parameters from the best held-out epoch (the last one without held-out data).
    pub model: SmcgModel,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
}

/// Turns every (video, caption) pair into a training example, using the
/// caption's own parse as the exemplar.
pub fn build_examples(
    instances: &[CaptionInstance],
    vocabs: &Vocabularies,
    max_len: usize,
) -> Result<Vec<Example>, TrainError> {
    let mut out = Vec::new();
    for (row, inst) in instances.iter().enumerate() {
        for c in &inst.captions {
            let ex = Example::new(&inst.features, &c.text, &c.parse, vocabs).map_err(|source| {
                TrainError::Instance {
                    row: row + 1,
                    video_id: inst.video_id.clone(),
                    source,
                }
            })?;
            if ex.words.len() > max_len {
                return Err(TrainError::Instance {
                    row: row + 1,
                    video_id: inst.video_id.clone(),
                    source: ModelError::TargetTooLong {
                        len: ex.words.len(),
                        max: max_len,
                    },
                });
            }
            out.push(ex);
        }
    }
    if out.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    Ok(out)
}

fn heldout_caption_loss(model: &SmcgModel, examples: &[Example]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape, false);
        let l = model.losses(&mut tape, &p, ex, Reconstruct::default())?;
        total += tape.scalar(l.caption);
    }
    Ok(total / examples.len() as f64)
}

/// Lower TED wins; caption loss breaks ties and decides alone when TED is
/// absent or meaningless (a decoder that never sees the exemplar).
fn better(new: &EpochRecord, old: &EpochRecord, use_ted: bool) -> bool {
    let ted = |r: &EpochRecord| {
        if use_ted {
            r.heldout_ted.unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let key = |r: &EpochRecord| (ted(r), r.heldout_cap.unwrap_or(0.0));
    let (a, b) = (key(new), key(old));
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Runs `cfg.epochs` epochs of shuffled mini-batches. When `out_dir` is set,
/// writes `metrics.jsonl`, `config.toml` and the best checkpoint
/// `model.ckpt` there. `on_epoch` sees every record as it is produced.
pub fn train_run(
    cfg: &TrainConfig,
    train: &[CaptionInstance],
    heldout: &[CaptionInstance],
    vocabs: &Vocabularies,
    eval: HeldoutEval<'_>,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let first = train.first().ok_or(DataError::EmptyDataset)?;
    let feat_dim = first.features.last_dim();
    let examples = build_examples(train, vocabs, cfg.max_len)?;
    let held_examples = if heldout.is_empty() {
        Vec::new()
    } else {
        build_examples(heldout, vocabs, cfg.max_len)?
    };
    let scored: &[CaptionInstance] = match cfg.heldout_videos {
        0 => heldout,
        n => &heldout[..n.min(heldout.len())],
    };

    let mut model = SmcgModel::new(cfg.model_config(vocabs, feat_dim), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };
    let mut state = AdamState::new(&model.store);
    let weights = cfg.weights();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| ModelError::Workers(e.to_string()))?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let text = toml::to_string(cfg).map_err(|e| TrainError::Config(e.to_string()))?;
        write_atomic(&dir.join("config.toml"), text.as_bytes())?;
    }
    let mut log = String::new();
    let mut records = Vec::new();
    let mut best: Option<(EpochRecord, SmcgModel)> = None;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let (mut grads, parts) =
                pool.install(|| batch_gradient(&model, &batch, weights, cfg.workers))?;
            if !parts.total.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            if cfg.clip_norm > 0.0 {
                clip_grad_norm(&mut grads, cfg.clip_norm);
            }
            adam_step(&mut model.store, &grads, &mut state, &adam_cfg)?;
            step += 1;
            sums.add_scaled(&parts, batch.len() as f64);
        }
        let n = examples.len() as f64;
        let mut rec = EpochRecord {
            step,
            epoch,
            loss_total: sums.total / n,
            loss_cap: sums.caption / n,
            loss_vrec: sums.video / n,
            loss_srec: sums.syntax / n,
            heldout_ted: None,
            heldout_cos: None,
            heldout_cap: None,
        };
        if !held_examples.is_empty() {
            rec.heldout_cap = Some(pool.install(|| heldout_caption_loss(&model, &held_examples))?);
        }
        if !scored.is_empty() && (eval.parser.is_some() || eval.cos.is_some()) {
            let preds = generate_predictions(
                &model,
                vocabs,
                scored,
                Some(cfg.heldout_exemplars.max(1)),
                DecodeMode::Greedy,
                eval.parser,
                cfg.workers,
            )?;
            let report = evaluate(&preds, scored, eval.cos)?;
            rec.heldout_ted = eval.parser.and(report.avg_ted);
            rec.heldout_cos = report.cos;
        }
        log.push_str(&serde_json::to_string(&rec).expect("serializable"));
        log.push('\n');
        if let Some(dir) = out_dir {
            write_atomic(&dir.join("metrics.jsonl"), log.as_bytes())?;
        }
        on_epoch(&rec);
        let improved = match &best {
            None => true,
            Some((b, _)) => {
                held_examples.is_empty() || better(&rec, b, cfg.decoder != DecoderKind::Plain)
            }
        };
        if improved {
            if let Some(dir) = out_dir {
                let extra = serde_json::json!({ "epoch": epoch, "step": step, "train": cfg });
                save_checkpoint(&dir.join("model.ckpt"), &model, vocabs, extra)?;
            }
            best = Some((rec.clone(), model.clone()));
        }
        records.push(rec);
    }
    let (best_rec, model) = match best {
        Some(b) => b,
        None => {
            if let Some(dir) = out_dir {
                let extra = serde_json::json!({ "epoch": 0, "step": 0, "train": cfg });
                save_checkpoint(&dir.join("model.ckpt"), &model, vocabs, extra)?;
            }
            return Ok(TrainOutcome {
                model,
                best_epoch: 0,
                records,
            });
        }
    };
    Ok(TrainOutcome {
        model,
        best_epoch: best_rec.epoch,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSource, Sentence};
    use crate::tensor::Tensor;

    fn instance(id: &str, rows: Vec<Vec<f64>>, text: &str, parse: &str) -> CaptionInstance {
        CaptionInstance {
            video_id: id.into(),
            features: Tensor::from_rows(&rows).unwrap(),
            source: FeatureSource::Inline(rows),
            captions: vec![Sentence {
                text: text.into(),
                parse: parse.into(),
            }],
            exemplars: vec![],
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 6,
            word_embed: 5,
            syntax_embed: 5,
            attention: 5,
            batch_size: 2,
            epochs: 2,
            ..Default::default()
        }
    }

    fn data() -> (Vec<CaptionInstance>, Vocabularies) {
        let inst = vec![
            instance(
                "a",
                vec![vec![0.5, -0.1], vec![0.2, 0.3]],
                "a dog runs",
                "(ROOT (S (NP (DT a) (NN dog)) (VP (VBZ runs))))",
            ),
            instance(
                "b",
                vec![vec![-0.4, 0.1]],
                "cats sleep",
                "(ROOT (S (NP (NNS cats)) (VP (VBP sleep))))",
            ),
            instance(
                "c",
                vec![vec![0.1, 0.9], vec![0.0, 0.0]],
                "a cat runs",
                "(ROOT (S (NP (DT a) (NN cat)) (VP (VBZ runs))))",
            ),
        ];
        let v = Vocabularies::build(&inst, 1);
        (inst, v)
    }

    #[test]
    fn config_defaults_and_toml() {
        let c = TrainConfig::default();
        assert_eq!((c.alpha, c.lambda, c.eta), (1.0, 1.0, 4.0));
        assert_eq!(c.batch_size, 16);
        let c = TrainConfig::from_toml("eta = 2.0\nreconstruction = \"video\"\n").unwrap();
        assert_eq!(c.eta, 2.0);
        assert_eq!(c.reconstruction, Reconstruction::Video);
        assert!(TrainConfig::from_toml("etaa = 2.0").is_err());
        assert!(TrainConfig::from_toml("lambda = -1.0").is_err());
    }

    #[test]
    fn caption_only_weights_equal_caption_loss() {
        let (inst, vocabs) = data();
        let mut cfg = tiny_cfg();
        cfg.lambda = 0.0;
        cfg.eta = 0.0;
        let ex = build_examples(&inst, &vocabs, 30).unwrap();
        let model = SmcgModel::new(cfg.model_config(&vocabs, 2), 1);
        let batch: Vec<&Example> = ex.iter().collect();
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape, false);
        let (_, parts) =
            total_loss(&model, &mut tape, &p, &batch, cfg.weights(), batch.len()).unwrap();
        assert_eq!(parts.total, parts.caption);
        assert_eq!((parts.video, parts.syntax), (0.0, 0.0));
    }

    #[test]
    fn components_sum_exactly_and_disabled_reconstructors_get_no_gradient() {
        let (inst, vocabs) = data();
        let cfg = tiny_cfg();
        let ex = build_examples(&inst, &vocabs, 30).unwrap();
        let model = SmcgModel::new(cfg.model_config(&vocabs, 2), 1);
        let batch: Vec<&Example> = ex.iter().collect();
        let (_, parts) = batch_gradient(&model, &batch, cfg.weights(), 1).unwrap();
        let w = cfg.weights();
        let recombined = w.alpha * parts.caption + w.lambda * parts.video + w.eta * parts.syntax;
        assert!((parts.total - recombined).abs() < 1e-12);
        assert!(parts.caption >= 0.0 && parts.video >= 0.0 && parts.syntax >= 0.0);

        let mut only_video = cfg.clone();
        only_video.reconstruction = Reconstruction::Video;
        let (g, _) = batch_gradient(&model, &batch, only_video.weights(), 1).unwrap();
        let silent = model.reconstructor_params(Reconstruct {
            video: false,
            syntax: true,
        });
        assert!(!silent.is_empty());
        for id in silent {
            assert!(
                g[id.index()].iter().all(|&x| x == 0.0),
                "{}",
                model.store.name(id)
            );
        }
        let live = model.reconstructor_params(Reconstruct {
            video: true,
            syntax: false,
        });
        assert!(live
            .iter()
            .any(|id| g[id.index()].iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn sharded_gradient_matches_single() {
        let (inst, vocabs) = data();
        let cfg = tiny_cfg();
        let ex = build_examples(&inst, &vocabs, 30).unwrap();
        let model = SmcgModel::new(cfg.model_config(&vocabs, 2), 4);
        let batch: Vec<&Example> = ex.iter().collect();
        let (g1, p1) = batch_gradient(&model, &batch, cfg.weights(), 1).unwrap();
        let (g3, p3) = batch_gradient(&model, &batch, cfg.weights(), 3).unwrap();
        assert!((p1.total - p3.total).abs() < 1e-12);
        for (a, b) in g1.iter().flatten().zip(g3.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let (inst, vocabs) = data();
        let cfg = tiny_cfg();
        let run = || {
            train_run(
                &cfg,
                &inst,
                &inst[..1],
                &vocabs,
                HeldoutEval::default(),
                None,
                |_| {},
            )
            .unwrap()
            .records
        };
        let a = run();
        assert_eq!(a.len(), 2);
        assert_eq!(a, run());
        assert!(a
            .iter()
            .all(|r| r.heldout_cap.is_some() && r.heldout_ted.is_none()));
    }

    #[test]
    fn target_too_long_reports_row() {
        let (mut inst, vocabs) = data();
        inst[1].captions[0].text = "cats sleep".to_string() + &" sleep".repeat(40);
        let err = build_examples(&inst, &vocabs, 30).unwrap_err();
        assert!(matches!(err, TrainError::Instance { row: 2, .. }), "{err}");
    }
}

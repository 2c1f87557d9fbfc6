use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{ModelError, SmcgModel};
use crate::data::{CaptionInstance, Sentence, Vocabularies, BEGIN, END, PAD};
use crate::metrics::Prediction;
use crate::nn::Bound;
use crate::syntax::{syntax_tokens, SyntaxTree};
use crate::tensor::{log_sum_exp, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

impl FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "greedy" {
            return Ok(DecodeMode::Greedy);
        }
        let k = s
            .strip_prefix("beam:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .ok_or_else(|| {
                format!("decode mode must be greedy or beam:K with K >= 1, got {s:?}")
            })?;
        Ok(DecodeMode::Beam(k))
    }
}

impl TryFrom<String> for DecodeMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<DecodeMode> for String {
    fn from(m: DecodeMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMode::Greedy => f.write_str("greedy"),
            DecodeMode::Beam(k) => write!(f, "beam:{k}"),
        }
    }
}

/// Log-probabilities with pad and begin excluded from the support.
fn masked_log_probs(logits: &[f64]) -> Vec<f64> {
    let mut z = logits.to_vec();
    z[PAD] = f64::NEG_INFINITY;
    z[BEGIN] = f64::NEG_INFINITY;
    let lse = log_sum_exp(&z);
    z.iter().map(|v| v - lse).collect()
}

#[derive(Clone)]
struct Hyp {
    words: Vec<usize>,
    logp: f64,
    /// Number of scored tokens, the end marker included.
    steps: usize,
    done: bool,
    h: Var,
    c: Var,
}

impl Hyp {
    fn score(&self) -> f64 {
        self.logp / self.steps.max(1) as f64
    }
}

impl SmcgModel {
    /// Generates word ids (without markers) for a video and an exemplar's
    /// syntax token ids. At most `max_len` words are produced.
    pub fn generate(
        &self,
        features: &Tensor,
        exemplar: &[usize],
        mode: DecodeMode,
    ) -> Result<Vec<usize>, ModelError> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let f = tape.constant(super::valid_frames(features)?);
        let enc = self.encode(&mut tape, &p, f, exemplar)?;
        let ctx = self.decoder_context(&mut tape, &p, &enc)?;
        match mode {
            DecodeMode::Greedy => {
                let (mut h, mut c) = (ctx.h0, ctx.c0);
                let mut prev = BEGIN;
                let mut out = Vec::new();
                while out.len() < self.config.max_len {
                    (h, c) = self.step(&mut tape, &p, &ctx, prev, h, c)?;
                    let logits = self.step_logits(&mut tape, &p, h)?;
                    let lp = masked_log_probs(tape.value(logits).data());
                    let w = crate::tensor::argmax(&lp);
                    if w == END {
                        break;
                    }
                    out.push(w);
                    prev = w;
                }
                Ok(out)
            }
            DecodeMode::Beam(k) => self.beam(&mut tape, &p, &ctx, k.max(1)),
        }
    }

    fn step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &super::DecoderContext,
        prev: usize,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), ModelError> {
        let e = self.word_embedding(tape, p, prev)?;
        self.decoder_step(tape, p, ctx, e, h, c)
    }

    fn beam(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &super::DecoderContext,
        k: usize,
    ) -> Result<Vec<usize>, ModelError> {
        let mut beam = vec![Hyp {
            words: Vec::new(),
            logp: 0.0,
            steps: 0,
            done: false,
            h: ctx.h0,
            c: ctx.c0,
        }];
        while beam.iter().any(|b| !b.done) {
            let mut cand: Vec<Hyp> = Vec::new();
            for hyp in &beam {
                if hyp.done {
                    cand.push(hyp.clone());
                    continue;
                }
                let prev = hyp.words.last().copied().unwrap_or(BEGIN);
                let (h, c) = self.step(tape, p, ctx, prev, hyp.h, hyp.c)?;
                let logits = self.step_logits(tape, p, h)?;
                let lp = masked_log_probs(tape.value(logits).data());
                let mut order: Vec<usize> = (0..lp.len()).filter(|&w| lp[w].is_finite()).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]));
                for &w in order.iter().take(k) {
                    let mut words = hyp.words.clone();
                    if w != END {
                        words.push(w);
                    }
                    cand.push(Hyp {
                        done: w == END || words.len() >= self.config.max_len,
                        words,
                        logp: hyp.logp + lp[w],
                        steps: hyp.steps + 1,
                        h,
                        c,
                    });
                }
            }
            // Stable sort keeps expansion order among equal scores.
            cand.sort_by(|a, b| b.score().total_cmp(&a.score()));
            cand.truncate(k);
            beam = cand;
        }
        Ok(beam.swap_remove(0).words)
    }
}

/// Maps generated words to a constituency tree, for TED scoring.
pub type Parser<'a> = dyn Fn(&[String]) -> SyntaxTree + Sync + 'a;

/// Captions every (video, exemplar) pair of `instances`, using at most
/// `max_exemplars` exemplars per video. Output order follows the input.
pub fn generate_predictions(
    model: &SmcgModel,
    vocabs: &Vocabularies,
    instances: &[CaptionInstance],
    max_exemplars: Option<usize>,
    mode: DecodeMode,
    parser: Option<&Parser<'_>>,
    workers: usize,
) -> Result<Vec<Prediction>, ModelError> {
    let mut jobs = Vec::new();
    for inst in instances {
        let k = max_exemplars
            .unwrap_or(usize::MAX)
            .min(inst.exemplars.len());
        for (e, ex) in inst.exemplars[..k].iter().enumerate() {
            jobs.push((inst, e, ex));
        }
    }
    let run =
        |&(inst, e, ex): &(&CaptionInstance, usize, &Sentence)| -> Result<Prediction, ModelError> {
            let syntax = vocabs.syntax.encode(&syntax_tokens(&ex.parse)?.tokens);
            let ids = model.generate(&inst.features, &syntax, mode)?;
            let words = vocabs.words.decode(&ids);
            Ok(Prediction {
                video_id: inst.video_id.clone(),
                exemplar_id: e,
                caption: words.join(" "),
                parse: parser.map(|p| p(&words).to_bracketed()),
            })
        };
    if workers <= 1 {
        return jobs.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ModelError::Workers(e.to_string()))?;
    pool.install(|| jobs.par_iter().map(run).collect())
}

//! Caption evaluation: tree edit distance to exemplars, embedding cosine,
//! BLEU@4, ROUGE-L, CIDEr-D and caption-set diversity.

mod cos;
mod diversity;
mod ngram;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{tokenize, CaptionInstance};
use crate::syntax::{parse_bracketed, strip_leaves, tree_edit_distance, SyntaxError, SyntaxTree};

pub use cos::{cos_similarity, default_stopwords, parse_stopwords, EmbeddingTable};
pub use diversity::{diversity, kernel_diversity, lsa_diversity, self_cider_diversity};
pub use ngram::{bleu4, cider, rouge_l, rouge_l_single};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no predictions to score")]
    EmptyCorpus,
    #[error("empty prediction")]
    EmptyPrediction,
    #[error("a prediction has no references")]
    NoReferences,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("diversity needs at least 2 captions, got {0}")]
    TooFewCaptions(usize),
    #[error("prediction for unknown video {0:?}")]
    UnknownVideo(String),
    #[error("video {video_id:?} has no exemplar {exemplar_id}")]
    UnknownExemplar {
        video_id: String,
        exemplar_id: usize,
    },
    #[error("bad parse in prediction for {video_id:?}: {source}")]
    Parse {
        video_id: String,
        source: SyntaxError,
    },
    #[error("worker pool: {0}")]
    Workers(String),
}

/// Mean TED between aligned prediction and exemplar trees, words stripped.
pub fn avg_ted(predictions: &[SyntaxTree], exemplars: &[SyntaxTree]) -> Result<f64, MetricsError> {
    if predictions.len() != exemplars.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: exemplars.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let total: usize = predictions
        .iter()
        .zip(exemplars)
        .map(|(p, e)| tree_edit_distance(&strip_leaves(p), &strip_leaves(e)))
        .sum();
    Ok(total as f64 / predictions.len() as f64)
}

/// One generated caption, produced under exemplar `exemplar_id` of a video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub exemplar_id: usize,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video_id: String,
    pub predictions: usize,
    pub avg_ted: Option<f64>,
    pub cos: Option<f64>,
    pub lsa: Option<f64>,
    pub self_cider: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictions: usize,
    pub videos: usize,
    pub avg_ted: Option<f64>,
    pub cos: Option<f64>,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: String,
    pub lsa: Option<f64>,
    pub self_cider: Option<f64>,
    /// Predictions whose TED was skipped for lack of a parse.
    pub missing_parses: usize,
    pub per_video: Vec<VideoReport>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Semantic side of an evaluation: embeddings plus stop words.
pub struct CosContext<'a> {
    pub table: &'a EmbeddingTable,
    pub stopwords: &'a HashSet<String>,
}

/// Per-video scores plus the caption/reference pairs fed to the corpus metrics.
struct VideoPart {
    report: VideoReport,
    hyps: Vec<Vec<String>>,
    refs: Vec<Vec<Vec<String>>>,
    missing_parses: usize,
}

fn score_video(
    vid: &str,
    preds: &[&Prediction],
    inst: &CaptionInstance,
    cos_ctx: Option<&CosContext<'_>>,
) -> Result<VideoPart, MetricsError> {
    let video_refs: Vec<Vec<String>> = inst.captions.iter().map(|c| tokenize(&c.text)).collect();
    let words: Vec<Vec<String>> = preds.iter().map(|p| tokenize(&p.caption)).collect();
    let mut teds = Vec::new();
    let mut missing_parses = 0;
    for p in preds {
        let ex =
            inst.exemplars
                .get(p.exemplar_id)
                .ok_or_else(|| MetricsError::UnknownExemplar {
                    video_id: p.video_id.clone(),
                    exemplar_id: p.exemplar_id,
                })?;
        let Some(parse) = &p.parse else {
            missing_parses += 1;
            continue;
        };
        let err = |source| MetricsError::Parse {
            video_id: p.video_id.clone(),
            source,
        };
        let pt = strip_leaves(&parse_bracketed(parse).map_err(err)?);
        let et = strip_leaves(&parse_bracketed(&ex.parse).map_err(err)?);
        teds.push(tree_edit_distance(&pt, &et) as f64);
    }
    let cos = match (cos_ctx, video_refs.is_empty()) {
        (Some(ctx), false) => {
            let mut vals = Vec::new();
            for w in &words {
                vals.push(if w.is_empty() {
                    0.0
                } else {
                    cos_similarity(w, &video_refs, ctx.table, ctx.stopwords)?
                });
            }
            mean(vals.into_iter())
        }
        _ => None,
    };
    let (lsa, self_cider) = if words.len() >= 2 {
        let (l, s) = diversity(&words)?;
        (Some(l), Some(s))
    } else {
        (None, None)
    };
    let (hyps, refs) = if video_refs.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let refs = vec![video_refs; words.len()];
        (words, refs)
    };
    Ok(VideoPart {
        report: VideoReport {
            video_id: vid.to_string(),
            predictions: preds.len(),
            avg_ted: mean(teds.into_iter()),
            cos,
            lsa,
            self_cider,
        },
        hyps,
        refs,
        missing_parses,
    })
}

/// Scores predictions against the captions and exemplars of `instances`.
/// Results do not depend on the order of `predictions`.
pub fn evaluate(
    predictions: &[Prediction],
    instances: &[CaptionInstance],
    cos_ctx: Option<&CosContext<'_>>,
) -> Result<EvalReport, MetricsError> {
    evaluate_with_workers(predictions, instances, cos_ctx, 1)
}

/// [`evaluate`] with per-video scoring spread over `workers` threads. The
/// report is identical for any worker count.
pub fn evaluate_with_workers(
    predictions: &[Prediction],
    instances: &[CaptionInstance],
    cos_ctx: Option<&CosContext<'_>>,
    workers: usize,
) -> Result<EvalReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let by_id: BTreeMap<&str, &CaptionInstance> =
        instances.iter().map(|i| (i.video_id.as_str(), i)).collect();
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.video_id, a.exemplar_id, &a.caption).cmp(&(&b.video_id, b.exemplar_id, &b.caption))
    });

    let mut groups: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in &sorted {
        if !by_id.contains_key(p.video_id.as_str()) {
            return Err(MetricsError::UnknownVideo(p.video_id.clone()));
        }
        groups.entry(p.video_id.as_str()).or_default().push(p);
    }
    let groups: Vec<(&str, Vec<&Prediction>)> = groups.into_iter().collect();
    let score =
        |(vid, preds): &(&str, Vec<&Prediction>)| score_video(vid, preds, by_id[vid], cos_ctx);
    let parts: Vec<VideoPart> = if workers <= 1 {
        groups.iter().map(score).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| MetricsError::Workers(e.to_string()))?;
        pool.install(|| groups.par_iter().map(score).collect::<Result<_, _>>())?
    };

    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut per_video = Vec::new();
    let mut missing_parses = 0;
    for part in parts {
        hyps.extend(part.hyps);
        refs.extend(part.refs);
        missing_parses += part.missing_parses;
        per_video.push(part.report);
    }

    let (bleu, rouge, cid) = if hyps.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            bleu4(&hyps, &refs)?,
            rouge_l(&hyps, &refs)?,
            cider(&hyps, &refs)?.0,
        )
    };
    Ok(EvalReport {
        predictions: predictions.len(),
        videos: per_video.len(),
        avg_ted: mean(per_video.iter().filter_map(|v| v.avg_ted)),
        cos: mean(per_video.iter().filter_map(|v| v.cos)),
        bleu4: bleu,
        rouge_l: rouge,
        cider: cid,
        meteor: "n/a".into(),
        lsa: mean(per_video.iter().filter_map(|v| v.lsa)),
        self_cider: mean(per_video.iter().filter_map(|v| v.self_cider)),
        missing_parses,
        per_video,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avg_ted_cases() {
        let x = parse_bracketed("(X)").unwrap();
        let y = parse_bracketed("(Y)").unwrap();
        assert_eq!(avg_ted(std::slice::from_ref(&x), &[y]).unwrap(), 1.0);
        let t = parse_bracketed("(ROOT (NP (DT a) (NN dog)))").unwrap();
        assert_eq!(avg_ted(&[t.clone(), x.clone()], &[t, x]).unwrap(), 0.0);
        assert!(matches!(avg_ted(&[], &[]), Err(MetricsError::EmptyCorpus)));
    }
}

//! Corpus n-gram metrics: BLEU@4, ROUGE-L and CIDEr-D.

use std::collections::HashMap;

use super::MetricsError;

type Ngrams<'a> = HashMap<&'a [String], f64>;

fn ngrams(words: &[String], n: usize) -> Ngrams<'_> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w).or_insert(0.0) += 1.0;
        }
    }
    out
}

fn check(preds: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<(), MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if preds.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            left: preds.len(),
            right: refs.len(),
        });
    }
    if refs.iter().any(Vec::is_empty) {
        return Err(MetricsError::NoReferences);
    }
    Ok(())
}

/// Corpus BLEU with uniform 1–4-gram weights, clipped counts, brevity
/// penalty against the closest reference length (ties prefer the shorter)
/// and no smoothing.
pub fn bleu4(preds: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64, MetricsError> {
    check(preds, refs)?;
    let mut matched = [0.0f64; 4];
    let mut total = [0.0f64; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, rs) in preds.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| (r.len().abs_diff(h.len()), r.len()))
            .min()
            .expect("nonempty references")
            .1;
        for n in 1..=4 {
            let mut max_ref: Ngrams = HashMap::new();
            for r in rs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0.0);
                    *e = e.max(c);
                }
            }
            matched[n - 1] += ngrams(h, n)
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0.0)))
                .sum::<f64>();
            total[n - 1] += h.len().saturating_sub(n - 1) as f64;
        }
    }
    if matched.contains(&0.0) {
        return Ok(0.0);
    }
    let log_p = matched
        .iter()
        .zip(&total)
        .map(|(m, t)| (m / t).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L for one prediction: the best precision and best recall over the
/// references combined into an F-measure with β = 1.2.
pub fn rouge_l_single(pred: &[String], refs: &[Vec<String>]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for rf in refs {
        let l = lcs(pred, rf) as f64;
        p = p.max(l / pred.len() as f64);
        if !rf.is_empty() {
            r = r.max(l / rf.len() as f64);
        }
    }
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l(preds: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64, MetricsError> {
    check(preds, refs)?;
    let total: f64 = preds
        .iter()
        .zip(refs)
        .map(|(p, r)| rouge_l_single(p, r))
        .sum();
    Ok(total / preds.len() as f64)
}

/// Document frequencies of 1–4-grams where each document is one reference set.
pub struct IdfTable<'a> {
    df: HashMap<&'a [String], f64>,
    log_n: f64,
}

impl<'a> IdfTable<'a> {
    pub fn new(documents: &[&'a [Vec<String>]]) -> Self {
        let mut df: HashMap<&[String], f64> = HashMap::new();
        for doc in documents {
            let mut seen: HashMap<&[String], ()> = HashMap::new();
            for s in doc.iter() {
                for n in 1..=4 {
                    for g in ngrams(s, n).into_keys() {
                        seen.insert(g, ());
                    }
                }
            }
            for g in seen.into_keys() {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Self {
            df,
            log_n: (documents.len() as f64).ln(),
        }
    }

    /// tf·idf vectors for n = 1..=4 and their norms.
    pub fn vectors<'s>(&self, words: &'s [String]) -> [(Ngrams<'s>, f64); 4] {
        std::array::from_fn(|k| {
            let mut v = ngrams(words, k + 1);
            for (g, x) in v.iter_mut() {
                let df = self.df.get(g).copied().unwrap_or(0.0);
                *x *= self.log_n - df.max(1.0).ln();
            }
            let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
            (v, norm)
        })
    }
}

const CIDER_SIGMA: f64 = 6.0;

fn cider_d_single(idf: &IdfTable<'_>, pred: &[String], refs: &[Vec<String>]) -> f64 {
    let hv = idf.vectors(pred);
    let mut acc = 0.0;
    for r in refs {
        let rv = idf.vectors(r);
        let delta = pred.len() as f64 - r.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        for n in 0..4 {
            let (h, nh) = (&hv[n].0, hv[n].1);
            let (rr, nr) = (&rv[n].0, rv[n].1);
            let mut dot: f64 = h
                .iter()
                .filter_map(|(g, &x)| rr.get(g).map(|&y| x.min(y) * y))
                .sum();
            if nh != 0.0 && nr != 0.0 {
                dot /= nh * nr;
            }
            acc += dot * penalty;
        }
    }
    10.0 * (acc / 4.0) / refs.len() as f64
}

/// CIDEr-D with document frequencies from the references under evaluation.
/// Returns the corpus mean and the per-prediction scores.
pub fn cider(
    preds: &[Vec<String>],
    refs: &[Vec<Vec<String>>],
) -> Result<(f64, Vec<f64>), MetricsError> {
    check(preds, refs)?;
    let docs: Vec<&[Vec<String>]> = refs.iter().map(Vec::as_slice).collect();
    let idf = IdfTable::new(&docs);
    let scores: Vec<f64> = preds
        .iter()
        .zip(refs)
        .map(|(p, r)| cider_d_single(&idf, p, r))
        .collect();
    Ok((scores.iter().sum::<f64>() / scores.len() as f64, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    #[test]
    fn identical_sentences() {
        let s = tokenize("a man is riding a horse");
        let preds = vec![s.clone()];
        let refs = vec![vec![s]];
        assert!((bleu4(&preds, &refs).unwrap() - 1.0).abs() < 1e-12);
        assert!((rouge_l(&preds, &refs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_four_gram_overlap_gives_zero_bleu() {
        let preds = vec![tokenize("a b c d e")];
        let refs = vec![vec![tokenize("a b c x d e")]];
        assert_eq!(bleu4(&preds, &refs).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(bleu4(&[], &[]), Err(MetricsError::EmptyCorpus));
        assert!(matches!(
            cider(&[vec![]], &[]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }
}

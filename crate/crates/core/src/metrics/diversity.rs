//! Caption-set diversity from the spectrum of a similarity kernel:
//! `D = -log_K(√λ_max / Σ√λ_i)` over the K×K kernel's eigenvalues, which is
//! 0 when all captions coincide and 1 when they are mutually orthogonal.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use super::ngram::IdfTable;
use super::MetricsError;

const RELATIVE_EIGEN_FLOOR: f64 = 1e-10;

/// Diversity score of a symmetric positive semidefinite kernel.
pub fn kernel_diversity(kernel: &DMatrix<f64>) -> f64 {
    let k = kernel.nrows();
    if k < 2 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(kernel.clone()).eigenvalues;
    let max = eig.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let roots: Vec<f64> = eig
        .iter()
        .map(|&l| {
            if l > RELATIVE_EIGEN_FLOOR * max {
                l.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let ratio = max.sqrt() / roots.iter().sum::<f64>();
    if ratio >= 1.0 {
        return 0.0;
    }
    (-ratio.ln() / (k as f64).ln()).clamp(0.0, 1.0)
}

fn check(captions: &[Vec<String>]) -> Result<(), MetricsError> {
    if captions.len() < 2 {
        return Err(MetricsError::TooFewCaptions(captions.len()));
    }
    Ok(())
}

/// LSA diversity: kernel of unit-normalized bag-of-words vectors.
pub fn lsa_diversity(captions: &[Vec<String>]) -> Result<f64, MetricsError> {
    check(captions)?;
    let bags: Vec<HashMap<&str, f64>> = captions
        .iter()
        .map(|c| {
            let mut m = HashMap::new();
            for w in c {
                *m.entry(w.as_str()).or_insert(0.0) += 1.0;
            }
            let norm = m.values().map(|x: &f64| x * x).sum::<f64>().sqrt();
            m.values_mut()
                .for_each(|x| *x /= norm.max(f64::MIN_POSITIVE));
            m
        })
        .collect();
    let k = bags.len();
    let kernel = DMatrix::from_fn(k, k, |i, j| {
        bags[i]
            .iter()
            .filter_map(|(w, x)| bags[j].get(w).map(|y| x * y))
            .sum()
    });
    Ok(kernel_diversity(&kernel))
}

/// Self-CIDEr diversity: kernel of pairwise CIDEr similarities (tf-idf
/// cosine averaged over 1–4-grams) with each caption as one document.
pub fn self_cider_diversity(captions: &[Vec<String>]) -> Result<f64, MetricsError> {
    check(captions)?;
    let docs: Vec<Vec<Vec<String>>> = captions.iter().map(|c| vec![c.clone()]).collect();
    let doc_refs: Vec<&[Vec<String>]> = docs.iter().map(Vec::as_slice).collect();
    let idf = IdfTable::new(&doc_refs);
    let vecs: Vec<_> = captions.iter().map(|c| idf.vectors(c)).collect();
    let k = captions.len();
    let kernel = DMatrix::from_fn(k, k, |i, j| {
        let mut s = 0.0;
        for n in 0..4 {
            let (a, na) = (&vecs[i][n].0, vecs[i][n].1);
            let (b, nb) = (&vecs[j][n].0, vecs[j][n].1);
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
            s += dot / (na * nb);
        }
        10.0 * s / 4.0
    });
    Ok(kernel_diversity(&kernel))
}

/// `(LSA, Self-CIDEr)` diversity of one video's captions.
pub fn diversity(captions: &[Vec<String>]) -> Result<(f64, f64), MetricsError> {
    Ok((lsa_diversity(captions)?, self_cider_diversity(captions)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    fn caps(xs: &[&str]) -> Vec<Vec<String>> {
        xs.iter().map(|s| tokenize(s)).collect()
    }

    #[test]
    fn identical_is_exactly_zero() {
        let c = caps(&["a man rides a horse"; 5]);
        let (l, s) = diversity(&c).unwrap();
        assert_eq!(l.to_bits(), 0.0f64.to_bits());
        assert_eq!(s.to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn disjoint_is_one() {
        let c = caps(&["a b c d", "e f g h", "i j k l"]);
        let (l, s) = diversity(&c).unwrap();
        assert!((l - 1.0).abs() < 1e-9, "{l}");
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn too_few() {
        assert_eq!(
            diversity(&caps(&["a b"])),
            Err(MetricsError::TooFewCaptions(1))
        );
    }
}

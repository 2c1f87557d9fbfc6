//! Constituency trees: bracketed parsing, leaf stripping, linearization into
//! syntax tokens, and tree edit distance.

mod brute;
mod ted;
mod tree;

use thiserror::Error;

pub use brute::{ted_brute_force, BRUTE_FORCE_MAX_NODES};
pub use ted::{tree_edit_distance, tree_edit_distance_normalized};
pub use tree::{
    delinearize, linearize, normalize_whitespace, parse_bracketed, strip_leaves,
    SyntaxTokenSequence, SyntaxTree,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("empty parse string")]
    EmptyInput,
    #[error("unbalanced brackets at byte {position}")]
    UnbalancedBrackets { position: usize },
    #[error("stray token {token:?} at byte {position} outside any group")]
    StrayToken { position: usize, token: String },
    #[error("group at byte {position} has no label")]
    MissingLabel { position: usize },
    #[error("word leaf {word:?} present; strip leaves first")]
    WordLeafPresent { word: String },
    #[error("tree has {nodes} nodes; brute force is capped at {limit}")]
    TreeTooLarge { nodes: usize, limit: usize },
}

/// Parses, strips words, and linearizes in one go.
pub fn syntax_tokens(bracketed: &str) -> Result<SyntaxTokenSequence, SyntaxError> {
    linearize(&strip_leaves(&parse_bracketed(bracketed)?))
}

/// Generates random trees for fuzzing; shared by unit and integration tests.
pub mod fuzz {
    use rand::Rng;

    use super::SyntaxTree;

    /// Random tree with exactly `nodes` nodes, labels drawn from `alphabet`.
    pub fn random_tree<R: Rng + ?Sized>(
        rng: &mut R,
        nodes: usize,
        alphabet: &[&str],
    ) -> SyntaxTree {
        assert!(nodes >= 1);
        let label = alphabet[rng.gen_range(0..alphabet.len())];
        let mut remaining = nodes - 1;
        let mut children = Vec::new();
        while remaining > 0 {
            let take = rng.gen_range(1..=remaining);
            children.push(random_tree(rng, take, alphabet));
            remaining -= take;
        }
        SyntaxTree::node(label, children)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// The exemplar tree printed for "The girl on the scooter riding in the
    /// summer sun in the park" (its spacing is irregular on purpose).
    const EXEMPLAR_TREE: &str = "(ROOT (FRAG (NP (DT) (NN)) (PP (IN) (NP (NP (DT) (NN)) (VP (VBG) (PP (IN) (NP (NP (DT) (NN) (NN)) (PP (IN)(NP (DT) (NN))))))))))";

    #[test]
    fn strip_recovers_exemplar_tree() {
        let with_words = "(ROOT (FRAG (NP (DT The) (NN girl)) (PP (IN on) (NP (NP (DT the) (NN scooter)) \
            (VP (VBG riding) (PP (IN in) (NP (NP (DT the) (NN summer) (NN sun)) (PP (IN in) (NP (DT the) (NN park))))))))))";
        let stripped = strip_leaves(&parse_bracketed(with_words).unwrap());
        assert_eq!(stripped.to_bracketed(), normalize_whitespace(EXEMPLAR_TREE));
        assert!(!stripped.has_words());
    }

    #[test]
    fn exemplar_tree_token_count() {
        // 75 tokens (25 open, 25 close, 25 tags), counted by a standalone
        // regex tokenizer over the printed string.
        let seq = syntax_tokens(EXEMPLAR_TREE).unwrap();
        assert_eq!(seq.len(), 75);
        assert_eq!(seq.iter().filter(|t| *t == "(").count(), 25);
        assert_eq!(seq.iter().filter(|t| *t == ")").count(), 25);
    }

    #[test]
    fn fuzz_dp_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let alphabet = ["A", "B", "C"];
        for _ in 0..300 {
            let na = rand::Rng::gen_range(&mut rng, 1..=6);
            let nb = rand::Rng::gen_range(&mut rng, 1..=6);
            let a = fuzz::random_tree(&mut rng, na, &alphabet);
            let b = fuzz::random_tree(&mut rng, nb, &alphabet);
            assert_eq!(
                tree_edit_distance(&a, &b),
                ted_brute_force(&a, &b).unwrap(),
                "{a} vs {b}"
            );
        }
    }

    fn arb_tree(max_nodes: usize) -> impl Strategy<Value = SyntaxTree> {
        (1..=max_nodes, any::<u64>()).prop_map(|(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fuzz::random_tree(&mut rng, n, &["NP", "VP", "DT", "NN"])
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(a in arb_tree(12), b in arb_tree(12), c in arb_tree(12)) {
            let ab = tree_edit_distance(&a, &b);
            prop_assert_eq!(tree_edit_distance(&a, &a), 0);
            prop_assert_eq!(ab, tree_edit_distance(&b, &a));
            prop_assert!(tree_edit_distance(&a, &c) <= ab + tree_edit_distance(&b, &c));
        }

        #[test]
        fn distance_to_single_node_bounded(a in arb_tree(8)) {
            let single = SyntaxTree::leaf("Q");
            let d = tree_edit_distance(&a, &single);
            prop_assert!(d <= a.node_count());
            // Label Q never occurs in `a`, so every mapping pays for every node.
            prop_assert_eq!(d, a.node_count());
            prop_assert_eq!(d, ted_brute_force(&a, &single).unwrap());
        }

        #[test]
        fn round_trip_serialization(t in arb_tree(12)) {
            let s = t.to_bracketed();
            let back = parse_bracketed(&s).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.to_bracketed(), normalize_whitespace(&s));
            prop_assert_eq!(delinearize(&linearize(&t).unwrap()).unwrap(), t);
        }
    }
}

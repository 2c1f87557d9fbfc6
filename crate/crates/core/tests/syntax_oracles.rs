use smcg::data::synth::SynthSpec;
use smcg::syntax::{parse_bracketed, strip_leaves, syntax_tokens, tree_edit_distance};

// fixtures/template_ted.py (forest edit distance, independent of the keyroot DP).
const TEMPLATE_TED: [[usize; 6]; 6] = [
    [0, 2, 4, 3, 6, 5],
    [2, 0, 3, 4, 6, 5],
    [4, 3, 0, 7, 8, 4],
    [3, 4, 7, 0, 5, 3],
    [6, 6, 8, 5, 0, 8],
    [5, 5, 4, 3, 8, 0],
];

#[test]
fn default_template_distances_match_oracle() {
    let spec = SynthSpec::default();
    let trees: Vec<_> = spec
        .templates
        .iter()
        .map(|t| parse_bracketed(&t.skeleton).unwrap())
        .collect();
    let nodes: Vec<usize> = trees.iter().map(|t| t.node_count()).collect();
    assert_eq!(nodes, [10, 12, 14, 11, 15, 13]);
    for (i, a) in trees.iter().enumerate() {
        for (j, b) in trees.iter().enumerate() {
            assert_eq!(
                tree_edit_distance(a, b),
                TEMPLATE_TED[i][j],
                "templates {i}, {j}"
            );
            if i != j {
                assert!(TEMPLATE_TED[i][j] >= 2);
            }
        }
    }
}

#[test]
fn stripped_parse_and_token_counts() {
    let with_words = "(ROOT (S (NP (DT a) (NN man)) (VP (VBZ rides) (NP (DT the) (NN bike)))))";
    let bare = strip_leaves(&parse_bracketed(with_words).unwrap());
    assert_eq!(
        bare.to_bracketed(),
        SynthSpec::default().templates[0].skeleton
    );
    // 10 nodes: 10 open brackets, 10 labels, 10 close brackets.
    assert_eq!(syntax_tokens(with_words).unwrap().len(), 30);
}

#[test]
fn single_nodes() {
    let x = parse_bracketed("(X)").unwrap();
    let y = parse_bracketed("(Y)").unwrap();
    assert_eq!(tree_edit_distance(&x, &y), 1);
    assert_eq!(tree_edit_distance(&x, &x), 0);
}

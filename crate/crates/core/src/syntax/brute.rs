//! Exhaustive tree edit distance used to cross-check the dynamic program.
//!
//! Enumerates every valid ordered-tree mapping: a partial one-to-one node
//! correspondence preserving ancestry and left-to-right order. The cost of a
//! mapping is the number of relabeled pairs plus all unmapped nodes.

use super::{SyntaxError, SyntaxTree};

pub const BRUTE_FORCE_MAX_NODES: usize = 8;

struct Flat<'a> {
    labels: Vec<&'a str>,
    // Preorder index of the last node in each node's subtree.
    subtree_end: Vec<usize>,
}

impl<'a> Flat<'a> {
    fn new(root: &'a SyntaxTree) -> Self {
        let mut f = Flat {
            labels: Vec::new(),
            subtree_end: Vec::new(),
        };
        fn walk<'a>(t: &'a SyntaxTree, f: &mut Flat<'a>) {
            let me = f.labels.len();
            f.labels.push(&t.label);
            f.subtree_end.push(me);
            for c in &t.children {
                walk(c, f);
            }
            f.subtree_end[me] = f.labels.len() - 1;
        }
        walk(root, &mut f);
        f
    }

    fn is_ancestor(&self, x: usize, y: usize) -> bool {
        x < y && y <= self.subtree_end[x]
    }

    fn is_left_of(&self, x: usize, y: usize) -> bool {
        x < y && !self.is_ancestor(x, y)
    }
}

pub fn ted_brute_force(a: &SyntaxTree, b: &SyntaxTree) -> Result<usize, SyntaxError> {
    let (na, nb) = (a.node_count(), b.node_count());
    if na > BRUTE_FORCE_MAX_NODES || nb > BRUTE_FORCE_MAX_NODES {
        return Err(SyntaxError::TreeTooLarge {
            nodes: na.max(nb),
            limit: BRUTE_FORCE_MAX_NODES,
        });
    }
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let mut best = na + nb;
    let mut pairs = Vec::with_capacity(na);
    let mut used = vec![false; nb];
    search(&fa, &fb, 0, &mut pairs, &mut used, 0, &mut best);
    Ok(best)
}

fn compatible(
    fa: &Flat<'_>,
    fb: &Flat<'_>,
    (x1, y1): (usize, usize),
    (x2, y2): (usize, usize),
) -> bool {
    fa.is_ancestor(x1, x2) == fb.is_ancestor(y1, y2)
        && fa.is_ancestor(x2, x1) == fb.is_ancestor(y2, y1)
        && fa.is_left_of(x1, x2) == fb.is_left_of(y1, y2)
        && fa.is_left_of(x2, x1) == fb.is_left_of(y2, y1)
}

fn search(
    fa: &Flat<'_>,
    fb: &Flat<'_>,
    next: usize,
    pairs: &mut Vec<(usize, usize)>,
    used: &mut [bool],
    relabels: usize,
    best: &mut usize,
) {
    let (na, nb) = (fa.labels.len(), fb.labels.len());
    if next == na {
        let mapped = pairs.len();
        let cost = relabels + (na - mapped) + (nb - mapped);
        *best = (*best).min(cost);
        return;
    }
    // Leave `next` unmapped.
    search(fa, fb, next + 1, pairs, used, relabels, best);
    for y in 0..nb {
        if used[y] || !pairs.iter().all(|&p| compatible(fa, fb, p, (next, y))) {
            continue;
        }
        used[y] = true;
        pairs.push((next, y));
        let r = relabels + usize::from(fa.labels[next] != fb.labels[y]);
        search(fa, fb, next + 1, pairs, used, r, best);
        pairs.pop();
        used[y] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_bracketed;

    fn brute(a: &str, b: &str) -> usize {
        ted_brute_force(&parse_bracketed(a).unwrap(), &parse_bracketed(b).unwrap()).unwrap()
    }

    #[test]
    fn small_cases() {
        assert_eq!(brute("(A (B) (C))", "(A (B) (C))"), 0);
        assert_eq!(brute("(X)", "(A (B))"), 2);
        assert_eq!(brute("(A (B) (C))", "(A (B (C)))"), 2);
    }

    #[test]
    fn size_cap() {
        let big = parse_bracketed("(A (B) (C) (D) (E) (F) (G) (H) (I))").unwrap();
        let small = parse_bracketed("(A)").unwrap();
        assert!(matches!(
            ted_brute_force(&big, &small),
            Err(SyntaxError::TreeTooLarge { nodes: 9, limit: 8 })
        ));
    }
}

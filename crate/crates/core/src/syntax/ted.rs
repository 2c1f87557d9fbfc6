//! Ordered tree edit distance (Zhang–Shasha keyroot dynamic program) with
//! unit insert, delete and relabel costs.

use super::SyntaxTree;

/// Post-order flattening with leftmost-leaf indices.
struct Indexed<'a> {
    labels: Vec<&'a str>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(root: &'a SyntaxTree) -> Self {
        let mut labels = Vec::new();
        let mut leftmost = Vec::new();
        fn walk<'a>(
            t: &'a SyntaxTree,
            labels: &mut Vec<&'a str>,
            leftmost: &mut Vec<usize>,
        ) -> usize {
            let mut first = None;
            for c in &t.children {
                let l = walk(c, labels, leftmost);
                first.get_or_insert(l);
            }
            let me = labels.len();
            labels.push(&t.label);
            leftmost.push(first.unwrap_or(me));
            leftmost[me]
        }
        walk(root, &mut labels, &mut leftmost);

        // A keyroot is the highest node for each distinct leftmost leaf.
        let n = labels.len();
        let mut seen = vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[leftmost[i]] {
                seen[leftmost[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Self {
            labels,
            leftmost,
            keyroots,
        }
    }
}

/// Minimal number of node insertions, deletions and relabelings turning `a`
/// into `b`. Word leaves, if present, are ordinary labeled nodes here; strip
/// them first when comparing syntax only.
pub fn tree_edit_distance(a: &SyntaxTree, b: &SyntaxTree) -> usize {
    let ta = Indexed::new(a);
    let tb = Indexed::new(b);
    let (na, nb) = (ta.labels.len(), tb.labels.len());
    let mut treedist = vec![0usize; na * nb];
    let mut forest = vec![0usize; (na + 1) * (nb + 1)];

    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let li = ta.leftmost[i];
            let lj = tb.leftmost[j];
            let rows = i - li + 2;
            let cols = j - lj + 2;
            let fd = |x: usize, y: usize| x * cols + y;
            forest[fd(0, 0)] = 0;
            for x in 1..rows {
                forest[fd(x, 0)] = forest[fd(x - 1, 0)] + 1;
            }
            for y in 1..cols {
                forest[fd(0, y)] = forest[fd(0, y - 1)] + 1;
            }
            for x in 1..rows {
                let ni = li + x - 1;
                for y in 1..cols {
                    let nj = lj + y - 1;
                    let del = forest[fd(x - 1, y)] + 1;
                    let ins = forest[fd(x, y - 1)] + 1;
                    if ta.leftmost[ni] == li && tb.leftmost[nj] == lj {
                        let relabel = usize::from(ta.labels[ni] != tb.labels[nj]);
                        let m = forest[fd(x - 1, y - 1)] + relabel;
                        let v = del.min(ins).min(m);
                        forest[fd(x, y)] = v;
                        treedist[ni * nb + nj] = v;
                    } else {
                        let px = ta.leftmost[ni] - li;
                        let py = tb.leftmost[nj] - lj;
                        let m = forest[fd(px, py)] + treedist[ni * nb + nj];
                        forest[fd(x, y)] = del.min(ins).min(m);
                    }
                }
            }
        }
    }
    treedist[(na - 1) * nb + (nb - 1)]
}

/// Edit distance divided by the combined node count, in `[0, 1]`.
pub fn tree_edit_distance_normalized(a: &SyntaxTree, b: &SyntaxTree) -> f64 {
    let total = a.node_count() + b.node_count();
    tree_edit_distance(a, b) as f64 / total as f64
}

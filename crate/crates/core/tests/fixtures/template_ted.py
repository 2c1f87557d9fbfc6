"""Independent TED oracle for the synthetic caption templates.

Uses the recursive forest edit distance (rightmost-root decomposition with
memoization), not the keyroot dynamic program, so it cross-checks the Rust
implementation on trees too large for exhaustive mapping enumeration.
"""
from functools import lru_cache
import re

TEMPLATES = [
    "(ROOT (S (NP (DT) (NN)) (VP (VBZ) (NP (DT) (NN)))))",
    "(ROOT (S (NP (DT) (NN)) (VP (VBZ) (VP (VBG) (NP (DT) (NN))))))",
    "(ROOT (S (NP (DT) (NN)) (VP (VBZ) (VP (VBN) (PP (IN) (NP (DT) (NN)))))))",
    "(ROOT (FRAG (NP (NP (DT) (NN)) (VP (VBG) (NP (DT) (NN))))))",
    "(ROOT (S (NP (EX)) (VP (VBZ) (NP (NP (DT) (NN)) (VP (VBG) (NP (DT) (NN)))))))",
    "(ROOT (FRAG (NP (NP (DT) (NN)) (VP (VBN) (PP (IN) (NP (DT) (NN)))))))",
]


def parse(s):
    toks = re.findall(r"\(|\)|[^\s()]+", s)
    pos = 0

    def node():
        nonlocal pos
        assert toks[pos] == "("
        label = toks[pos + 1]
        pos += 2
        kids = []
        while toks[pos] != ")":
            kids.append(node())
        pos += 1
        return (label, tuple(kids))

    return node()


def size(forest):
    return sum(1 + size(t[1]) for t in forest)


@lru_cache(maxsize=None)
def fd(f, g):
    if not f and not g:
        return 0
    if not f:
        return size(g)
    if not g:
        return size(f)
    v, w = f[-1], g[-1]
    return min(
        fd(f[:-1] + v[1], g) + 1,
        fd(f, g[:-1] + w[1]) + 1,
        fd(v[1], w[1]) + fd(f[:-1], g[:-1]) + (v[0] != w[0]),
    )


if __name__ == "__main__":
    trees = [parse(t) for t in TEMPLATES]
    print("nodes", [size((t,)) for t in trees])
    for a in trees:
        print([fd((a,), (b,)) for b in trees])

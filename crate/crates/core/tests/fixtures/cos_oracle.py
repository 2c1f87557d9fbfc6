# Independent reference for the embedding-cosine fixture (5-word toy table).
import math

TABLE = {
    "man":    [1.0, 0.0, 0.0, 0.5],
    "guitar": [0.0, 1.0, 0.0, 0.5],
    "plays":  [0.0, 0.0, 1.0, 0.0],
    "woman":  [0.9, 0.1, 0.0, 0.4],
    "drum":   [0.0, 0.8, 0.3, 0.0],
}
STOP = {"a", "the", "is", "on"}

def sent_vec(words):
    vs = [TABLE[w] for w in words if w not in STOP and w in TABLE]
    if not vs:
        return None
    return [sum(c) / len(vs) for c in zip(*vs)]

def cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))

pred = "a man plays the guitar".split()
refs = ["a woman plays a drum".split(), "the man is on a guitar".split(), "a xylophone".split()]
p = sent_vec(pred)
sims = []
for r in refs:
    v = sent_vec(r)
    sims.append(0.0 if v is None or p is None else cos(p, v))
print("cos %.12f" % (sum(sims) / len(sims)))

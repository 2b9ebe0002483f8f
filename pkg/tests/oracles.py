"""Naive pure-Python reference implementations used as test oracles.

Everything here is written with explicit loops over plain floats so it shares
no code path with the vectorized implementations under test.
"""
import math
import random

import numpy as np


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def centers(rows, labels, classes):
    out = []
    for c in classes:
        members = [r for r, lab in zip(rows, labels) if lab == c]
        out.append([sum(col) / len(members) for col in zip(*members)])
    return out


def mean_similarity(rows, labels, center_rows, classes):
    table = []
    for c in classes:
        members = [r for r, lab in zip(rows, labels) if lab == c]
        if not members:
            continue
        table.append([sum(cosine(r, ck) for r in members) / len(members) for ck in center_rows])
    return table


def center_similarity(center_rows):
    k = len(center_rows)
    return [[cosine(center_rows[i], center_rows[j]) for j in range(k)] for i in range(k)]


def pairwise(rows):
    sims = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            sims.append(cosine(rows[i], rows[j]))
    return min(sims), sum(sims) / len(sims), max(sims), len(sims)


def random_embedding_case(rnd: random.Random):
    """Random (rows, labels, classes) with N <= 200, D <= 64, K <= 10."""
    k = rnd.randint(1, 10)
    d = rnd.randint(1, 64)
    n = rnd.randint(max(k, 2), 200)
    classes = [f"c{i}" for i in range(k)]
    labels = classes + [rnd.choice(classes) for _ in range(n - k)]
    rnd.shuffle(labels)
    shift = [rnd.uniform(-1, 1) for _ in range(d)]
    rows = [[rnd.gauss(0, 1) + s for s in shift] for _ in range(n)]
    return rows, labels, classes


def max_abs_diff(a, b):
    """Max |a - b| over nested lists / arrays of equal shape."""
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def naive_auroc(pos, neg):
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def naive_nt_xent(Z, t):
    """Direct enumeration over anchors; no normalization check, for use off the sphere."""
    n = len(Z)
    total = 0.0
    for a in range(n):
        p = a + 1 if a % 2 == 0 else a - 1
        num = math.exp(float(Z[a] @ Z[p]) / t)
        den = sum(math.exp(float(Z[a] @ Z[b]) / t) for b in range(n) if b != a)
        total += -math.log(num / den)
    return total / n


def unit_rows(rng, n, p):
    Z = rng.normal(size=(n, p))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)

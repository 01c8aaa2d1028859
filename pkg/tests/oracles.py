"""Brute-force reference implementations used only by the tests."""

import itertools
import math
from fractions import Fraction

import numpy as np


def otsu_bruteforce(hist):
    """Exhaustive search over all thresholds with exact rational variance."""
    counts = [int(c) for c in hist]
    n = sum(counts)
    scores = {}
    for t in range(256):
        c0 = counts[: t + 1]
        c1 = counts[t + 1 :]
        n0, n1 = sum(c0), sum(c1)
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(i * c for i, c in enumerate(c0)), n0)
        mu1 = Fraction(sum((t + 1 + i) * c for i, c in enumerate(c1)), n1)
        scores[t] = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
    best = max(scores.values())
    first = min(t for t, s in scores.items() if s == best)
    last = first
    while scores.get(last + 1) == best:
        last += 1
    return (first + last) // 2


def auc_pairwise(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def _midranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def wilcoxon_exact_enumeration(a, b):
    """Two-sided rank-sum p-value by enumerating every assignment of ranks to group a."""
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    na, n = len(a), len(pooled)
    observed = sum(ranks[:na])
    mean = na * (n + 1) / 2
    dev_obs = abs(observed - mean)
    hits = total = 0
    for combo in itertools.combinations(range(n), na):
        total += 1
        if abs(sum(ranks[i] for i in combo) - mean) >= dev_obs - 1e-9:
            hits += 1
    return hits / total


def bh_reference(p):
    """min over j >= i of p_(j) * m / j, in sorted order, mapped back and clamped.

    Evaluated in exact rationals and rounded once at the end.
    """
    p = [Fraction(float(v)) for v in p]
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    adjusted = [0.0] * m
    for rank_i, idx in enumerate(order, start=1):
        adjusted[idx] = float(min(min(p[order[j - 1]] * m / j for j in range(rank_i, m + 1)), Fraction(1)))
    return adjusted


def central_diff(f, x, eps=1e-3):
    """Central finite-difference gradient of scalar f at array x (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def log_softmax_loss(q, qp, m, tau):
    """Contrastive loss written term by term with math.log/exp (no vectorization)."""
    total = 0.0
    for i in range(len(q)):
        pos = math.exp(float(np.dot(q[i], qp[i])) / tau)
        neg = sum(math.exp(float(np.dot(q[i], mk)) / tau) for mk in m)
        total += -math.log(pos / (pos + neg))
    return total / len(q)


def de_feature_bruteforce(H, a, l):
    """Top/bottom-l row means with explicit sorting by (score, index)."""
    idx = list(range(len(a)))
    top = sorted(idx, key=lambda i: (-a[i], i))[:l]
    bottom = sorted(idx, key=lambda i: (a[i], i))[:l]
    d = len(H[0])
    top_mean = [sum(H[i][j] for i in top) / l for j in range(d)]
    bottom_mean = [sum(H[i][j] for i in bottom) / l for j in range(d)]
    return np.array(top_mean + bottom_mean)

"""Rank-sum test, Benjamini-Hochberg adjustment and fold-change binning."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .metrics import midranks

EXACT_MAX_N = 12


def _exact_two_sided(ranks2: np.ndarray, n_a: int, obs2: int) -> float:
    # ranks2: doubled midranks (integers). Count size-n_a subsets by doubled
    # rank sum with a subset-sum DP, then take mass at least as far from the mean.
    n = len(ranks2)
    total = int(ranks2.sum())
    counts = np.zeros((n_a + 1, total + 1), dtype=np.float64)
    counts[0, 0] = 1.0
    for r in ranks2:
        r = int(r)
        for k in range(n_a, 0, -1):
            counts[k, r:] += counts[k - 1, : total + 1 - r]
    dist = counts[n_a]
    center2 = n_a * (n + 1)  # twice the null mean of the doubled sum
    dev = np.abs(np.arange(total + 1) - center2)
    extreme = dist[dev >= abs(obs2 - center2)].sum()
    return float(min(1.0, extreme / dist.sum()))


def wilcoxon_rank_sum(sample_a, sample_b) -> float:
    """Two-sided rank-sum p-value.

    Exact over all rank assignments when the combined size is at most 12;
    otherwise a normal approximation with tie and continuity corrections.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be nonempty")
    n_a, n_b = len(a), len(b)
    n = n_a + n_b
    ranks = midranks(np.concatenate([a, b]))
    if n <= EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        return _exact_two_sided(ranks2, n_a, int(ranks2[:n_a].sum()))
    return _normal_two_sided(ranks, n_a, n_b)


def _normal_two_sided(ranks, n_a, n_b) -> float:
    n = n_a + n_b
    w = ranks[:n_a].sum()
    mean = n_a * (n + 1) / 2.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def bh_correct(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="mergesort")
    # p * m / j in rationals, rounded once: float p * m / m can land an ulp below p
    scaled = [Fraction(float(v)) * m / j for j, v in enumerate(p[order], start=1)]
    adjusted = np.empty(m)
    running = Fraction(1)
    for j in range(m - 1, -1, -1):
        running = min(running, scaled[j])
        adjusted[j] = float(running)
    out = np.empty(m)
    out[order] = adjusted
    return out


def fc_accuracy_bins(per_gene_pearson, per_gene_mean_fc, bin_edges) -> list[dict]:
    """Fold-change summary per prediction-accuracy bin.

    Bin ``i`` holds genes with ``edges[i] < r <= edges[i+1]``; the first bin
    also includes its left edge. Empty bins are reported with ``empty=True``.
    """
    r = np.asarray(per_gene_pearson, dtype=np.float64)
    fc = np.asarray(per_gene_mean_fc, dtype=np.float64)
    edges = np.asarray(bin_edges, dtype=np.float64)
    if r.shape != fc.shape:
        raise ValueError("pearson and fold-change vectors must be aligned")
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with at least two entries")
    bins = []
    for i in range(len(edges) - 1):
        lo, hi = edges[i], edges[i + 1]
        sel = (r > lo) & (r <= hi)
        if i == 0:
            sel |= r == lo
        vals = fc[sel]
        entry = {"lower": float(lo), "upper": float(hi), "count": int(sel.sum()), "empty": not sel.any()}
        if sel.any():
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            entry.update(
                mean=float(vals.mean()), q1=float(q1), median=float(med), q3=float(q3),
                min=float(vals.min()), max=float(vals.max()),
            )
        else:
            entry.update(mean=None, q1=None, median=None, q3=None, min=None, max=None)
        bins.append(entry)
    return bins

"""Synthetic paired expression driven by each patient's tumor share.

Gene families, with ``f`` the tumor fraction of the patient's tumor slide:

* ``G_FRAC``: tumor = 9 f times normal, so the target is exactly ``log10(9f + 1)``.
* ``G_SIGNAL``: target ``0.5 + slope * (f - f_mid) + N(0, sigma)``.
* ``G_NOISE``: target ``0.4 + N(0, sigma)``, independent of ``f``.
* ``G_FC01..``: base fold change and slope both grow with the index, so
  genes with a larger designed fold change are also easier to predict.
"""

from __future__ import annotations

import numpy as np

from .targets import GeneRecord

SIGMA = 0.1


def fc_gene_design(n: int = 20):
    """``(name, base_fc, slope)`` for the graded fold-change family."""
    k = np.arange(1, n + 1)
    base_fc = 1.5 + 2.5 * (k - 1) / max(n - 1, 1)
    slope = 2.0 * (k / n) ** 2
    return [(f"G_FC{i:02d}", float(b), float(s)) for i, b, s in zip(k, base_fc, slope)]


def synthesize_expression(tumor_fraction: dict, seed: int = 0, n_fc_genes: int = 20, signal_slope: float = 3.0, sigma: float = SIGMA):
    """Return ``(records, genes)`` for patients keyed in ``tumor_fraction``."""
    patients = sorted(tumor_fraction)
    f = np.array([tumor_fraction[p] for p in patients], dtype=np.float64)
    f_mid = 0.5 * (f.min() + f.max()) if len(f) else 0.0
    rng = np.random.default_rng([seed, 41])
    n = len(patients)

    targets = {
        "G_FRAC": np.log10(9.0 * f + 1.0),
        "G_SIGNAL": 0.5 + signal_slope * (f - f_mid) + rng.normal(0, sigma, n),
        "G_NOISE": 0.4 + rng.normal(0, sigma, n),
    }
    for name, base_fc, slope in fc_gene_design(n_fc_genes):
        targets[name] = np.log10(base_fc + 1.0) + slope * (f - f_mid) + rng.normal(0, sigma, n)

    genes = list(targets)
    records = []
    for g in genes:
        fc = np.maximum(10.0 ** targets[g] - 1.0, 0.0)
        normal = 5.0 * np.exp(rng.normal(0, 0.2, n))
        if g == "G_FRAC":
            normal = np.ones(n)
        for p, t, nrm in zip(patients, fc * normal, normal):
            records.append(GeneRecord(p, g, float(t), float(nrm)))
    return records, genes

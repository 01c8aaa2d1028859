from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from .render import normalize_scores

INTERPRETATION = "linear proxy: (w_top - w_bottom) . h_i from the gene model weight blocks"


def gene_saliency(H, gene_model) -> np.ndarray:
    """Normalized per-tile score ``(w_top - w_bottom) . h_i``.

    ``w_top``/``w_bottom`` are the halves of the gene model's weight vector
    acting on the top- and bottom-tile means. For a classifier the weight
    difference between the two output nodes is used.
    """
    H = np.asarray(H, dtype=np.float64)
    w = np.asarray(gene_model.weights, dtype=np.float64)
    if w.ndim == 2:
        w = w[1] - w[0]
    d = H.shape[1]
    if len(w) != 2 * d:
        raise DimensionMismatch(f"gene model expects {len(w)} features, bag rows give 2 x {d}")
    return normalize_scores(H @ (w[:d] - w[d:]))

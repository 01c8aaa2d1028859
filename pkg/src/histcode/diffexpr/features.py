"""Attention-ranked tile selection and the concatenated top/bottom feature."""

from __future__ import annotations

import numpy as np

from ..errors import BagTooSmall, NonFinite

DEFAULT_L = 100


def effective_l(n_tiles: int, l: int, strict: bool = True) -> int:
    if 2 * l <= n_tiles:
        return l
    if strict or n_tiles < 2:
        raise BagTooSmall(f"cannot select {l} top and {l} bottom tiles from {n_tiles}")
    return n_tiles // 2


def select_tiles(a, l: int = DEFAULT_L, strict: bool = True):
    """Indices of the ``l`` highest (descending) and ``l`` lowest (ascending)
    attention scores; ties go to the lower index. With ``strict=False`` an
    oversized ``l`` shrinks to ``floor(L / 2)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    if not np.all(np.isfinite(a)):
        raise NonFinite("non-finite attention score")
    l = effective_l(len(a), l, strict)
    top = np.argsort(-a, kind="stable")[:l]
    bottom = np.argsort(a, kind="stable")[:l]
    return top, bottom


def build_de_feature(H, a, l: int = DEFAULT_L, strict: bool = True) -> np.ndarray:
    """``concat(mean of top-l rows, mean of bottom-l rows)``, length ``2D``."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or len(H) != len(a):
        raise ValueError(f"need an L x D matrix aligned to {len(a)} attention scores")
    top, bottom = select_tiles(a, l, strict)
    return np.concatenate([H[top].mean(axis=0), H[bottom].mean(axis=0)])

"""Otsu-based tissue detection on a downsampled slide."""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateHistogram
from .types import SlideImage, TissueMask

# Tissue must sit at least this many gray levels below white. Stands in for the
# "threshold 8" tissue-detection constant; see README.
TISSUE_GUARD = 8


def otsu_threshold(histogram) -> int:
    """Otsu threshold of a 256-bin histogram.

    Pixels ``<= t`` form the first class. The between-class variance is
    compared in exact integer arithmetic, so ties are real ties; among tied
    maxima the midpoint (rounded down) of the first contiguous run of
    maximizing thresholds is returned.
    """
    hist = np.asarray(histogram)
    if hist.shape != (256,):
        raise ValueError(f"expected 256 bins, got shape {hist.shape}")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be nonnegative")
    counts = [int(c) for c in hist]
    if sum(1 for c in counts if c) < 2:
        raise DegenerateHistogram("fewer than two nonzero histogram bins")

    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))
    # sigma_b^2 * N^2 = (N*S0 - n0*S)^2 / (n0*n1); kept as a fraction num/den
    best = None
    scores = []
    n0 = s0 = 0
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            scores.append(None)
            continue
        num = (total * s0 - n0 * total_sum) ** 2
        den = n0 * n1
        scores.append((num, den))
        if best is None or num * best[1] > best[0] * den:
            best = (num, den)

    def is_max(s):
        return s is not None and s[0] * best[1] == best[0] * s[1]

    first = next(t for t, s in enumerate(scores) if is_max(s))
    last = first
    while last + 1 < len(scores) and is_max(scores[last + 1]):
        last += 1
    return (first + last) // 2


def block_mean(pixels: np.ndarray, downsample: int) -> np.ndarray:
    """Average over ``downsample x downsample`` blocks; edge blocks may be partial."""
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    arr = np.asarray(pixels, dtype=np.float64)
    if downsample == 1:
        return arr
    h, w = arr.shape[:2]
    rows = np.arange(0, h, downsample)
    cols = np.arange(0, w, downsample)
    sums = np.add.reduceat(np.add.reduceat(arr, rows, axis=0), cols, axis=1)
    rh = np.minimum(rows + downsample, h) - rows
    cw = np.minimum(cols + downsample, w) - cols
    area = np.outer(rh, cw)
    if arr.ndim == 3:
        area = area[:, :, None]
    return sums / area


def inverted_gray(pixels: np.ndarray, downsample: int = 1) -> np.ndarray:
    small = block_mean(pixels, downsample)
    gray = small[..., 0] * 0.299 + small[..., 1] * 0.587 + small[..., 2] * 0.114
    return np.clip(np.rint(255.0 - gray), 0, 255).astype(np.uint8)


def detect_tissue(slide: SlideImage, downsample: int = 32, tissue_guard: int = TISSUE_GUARD) -> TissueMask:
    """Binary tissue mask at ``ceil(dims / downsample)`` resolution."""
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    pixels = slide.pixels if isinstance(slide, SlideImage) else np.asarray(slide)
    inv = inverted_gray(pixels, downsample)
    # near-white pixels are background regardless of where Otsu lands
    inv = np.where(inv < tissue_guard, 0, inv).astype(np.uint8)
    hist = np.bincount(inv.ravel(), minlength=256)
    try:
        t = otsu_threshold(hist)
    except DegenerateHistogram:
        return TissueMask(mask=inv > 0, downsample=downsample)
    return TissueMask(mask=inv > t, downsample=downsample)

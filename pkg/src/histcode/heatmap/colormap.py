"""256-level indexed colormaps with exact inversion."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

BACKGROUND = (224, 224, 224)  # neutral gray, not in the ramp


@lru_cache(maxsize=None)
def lossless_lut(name: str = "viridis") -> np.ndarray:
    """256 x 3 uint8 ramp sampled from a matplotlib colormap.

    Entries that collide after rounding are nudged by one unit in blue so
    every level maps to a distinct color.
    """
    import matplotlib

    rgb = np.rint(matplotlib.colormaps[name](np.linspace(0.0, 1.0, 256))[:, :3] * 255).astype(np.int64)
    seen = {BACKGROUND}
    for i in range(256):
        step = 1
        while tuple(rgb[i]) in seen:
            rgb[i, 2] = np.clip(rgb[i, 2] + step, 0, 255)
            step = -step - np.sign(step)
        seen.add(tuple(rgb[i]))
    lut = rgb.astype(np.uint8)
    lut.setflags(write=False)
    return lut


def score_to_level(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise ValueError("scores must be normalized to [0, 1]")
    return np.rint(s * 255).astype(np.int64)


def apply_lut(scores, lut=None) -> np.ndarray:
    lut = lossless_lut() if lut is None else lut
    return lut[score_to_level(scores)]


def invert_lut(image, lut=None) -> np.ndarray:
    """Per-pixel level / 255, NaN where the color is not in the ramp."""
    lut = lossless_lut() if lut is None else lut
    img = np.asarray(image, dtype=np.int64)
    key = (img[..., 0] << 16) | (img[..., 1] << 8) | img[..., 2]
    lut_key = (lut[:, 0].astype(np.int64) << 16) | (lut[:, 1].astype(np.int64) << 8) | lut[:, 2]
    order = np.argsort(lut_key)
    pos = np.clip(np.searchsorted(lut_key[order], key), 0, 255)
    hit = lut_key[order][pos] == key
    return np.where(hit, order[pos] / 255.0, np.nan)

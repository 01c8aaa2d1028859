"""Spatial deconvolution of per-tile scores onto a downsampled slide grid."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import CoordOutOfBounds, NonFinite
from .colormap import BACKGROUND, apply_lut


@dataclass
class ScoreMap:
    slide_id: str
    coords: np.ndarray  # N x 2 (x, y)
    scores: np.ndarray  # N, raw
    score_kind: str = "diagnosis_attention"
    tile_px: int = 256
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        if len(self.coords) != len(self.scores):
            raise ValueError(f"{self.slide_id}: {len(self.coords)} coords for {len(self.scores)} scores")
        if not np.all(np.isfinite(self.scores)):
            raise NonFinite(f"{self.slide_id}: non-finite score")


def normalize_scores(scores) -> np.ndarray:
    """Min-max scaling to [0, 1]; constant input maps to 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one score")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full(s.shape, 0.5)
    return (s - lo) / (hi - lo)


def footprint(x: int, y: int, tile_px: int, downsample: int):
    """Row and column slices covered by a tile on the downsampled grid."""
    return (
        slice(y // downsample, (y + tile_px) // downsample),
        slice(x // downsample, (x + tile_px) // downsample),
    )


def heatmap_shape(width: int, height: int, downsample: int):
    return math.ceil(height / downsample), math.ceil(width / downsample)


def _check(coords, width, height, tile_px, downsample):
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    if len(coords) and (coords.min() < 0 or np.any(coords[:, 0] + tile_px > width) or np.any(coords[:, 1] + tile_px > height)):
        raise CoordOutOfBounds(f"tile outside the {width}x{height} slide")


def score_image(score_map: ScoreMap, width: int, height: int, downsample: int, normalize: bool = True) -> np.ndarray:
    """Float image of (normalized) scores per footprint, NaN where no tile lies."""
    _check(score_map.coords, width, height, score_map.tile_px, downsample)
    out = np.full(heatmap_shape(width, height, downsample), np.nan)
    vals = normalize_scores(score_map.scores) if normalize and len(score_map.scores) else score_map.scores
    for (x, y), v in zip(score_map.coords, vals):
        out[footprint(x, y, score_map.tile_px, downsample)] = v
    return out


def render_heatmap(score_map: ScoreMap, width: int, height: int, downsample: int = 16, lut=None) -> np.ndarray:
    """RGB uint8 heatmap of normalized scores; background is neutral gray."""
    img = score_image(score_map, width, height, downsample)
    out = np.empty(img.shape + (3,), dtype=np.uint8)
    out[...] = BACKGROUND
    covered = np.isfinite(img)
    out[covered] = apply_lut(img[covered], lut)
    return out


def lookup_tile_scores(image_scores: np.ndarray, coords, tile_px: int, downsample: int) -> np.ndarray:
    """Read one value per tile back out of a score or inverted-color image."""
    out = []
    for x, y in np.asarray(coords).reshape(-1, 2):
        rows, cols = footprint(x, y, tile_px, downsample)
        out.append(image_scores[rows.start, cols.start])
    return np.array(out)


def inside_outside_means(score_img: np.ndarray, mask: np.ndarray, downsample: int):
    """Pixel-weighted mean score inside and outside a full-resolution mask,
    over tile-covered pixels of a ``score_image``."""
    h, w = score_img.shape
    # nearest sample at each downsampled pixel centre
    ys = np.minimum((np.arange(h) * downsample + downsample // 2), mask.shape[0] - 1)
    xs = np.minimum((np.arange(w) * downsample + downsample // 2), mask.shape[1] - 1)
    m = np.asarray(mask, dtype=bool)[np.ix_(ys, xs)]
    covered = np.isfinite(score_img)
    return _masked_mean(score_img, covered & m), _masked_mean(score_img, covered & ~m)


def _masked_mean(img, sel) -> float:
    return float(img[sel].mean()) if sel.any() else float("nan")


def write_heatmap(path, image: np.ndarray, score_map: ScoreMap, downsample: int) -> None:
    """PNG plus a ``.json`` sidecar with normalization parameters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path, format="PNG")
    s = score_map.scores
    sidecar = {
        "slide_id": score_map.slide_id,
        "score_kind": score_map.score_kind,
        "downsample": int(downsample),
        "tile_px": int(score_map.tile_px),
        "normalization": {"method": "minmax", "min": float(s.min()) if len(s) else None, "max": float(s.max()) if len(s) else None},
        **score_map.meta,
    }
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path.with_suffix(".json"))

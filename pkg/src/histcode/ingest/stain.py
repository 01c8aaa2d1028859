"""Color normalization by mean/std matching in the decorrelated l-alpha-beta space.

Source statistics can come from the tile itself or, as in the pipeline, from
all tissue tiles of the slide, so every tile of a slide gets the same affine
transform and relative color differences inside a slide survive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

_RGB2LMS = np.array(
    [[0.3811, 0.5783, 0.0402], [0.1967, 0.7244, 0.0782], [0.0241, 0.1288, 0.8444]]
)
_LMS2RGB = np.linalg.inv(_RGB2LMS)
_LOG2LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array(
    [[1, 1, 1], [1, 1, -2], [1, -1, 0]], dtype=np.float64
)
_LAB2LOG = np.linalg.inv(_LOG2LAB)
_EPS = 1.0 / 255.0


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """uint8 or float RGB (0-255) -> float64 l-alpha-beta."""
    x = np.asarray(rgb, dtype=np.float64) / 255.0
    lms = x @ _RGB2LMS.T
    return np.log10(np.maximum(lms, _EPS)) @ _LOG2LAB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`, float RGB on the 0-255 scale, unclamped."""
    lms = 10.0 ** (np.asarray(lab, dtype=np.float64) @ _LAB2LOG.T)
    return (lms @ _LMS2RGB.T) * 255.0


@dataclass(frozen=True)
class StainStats:
    mean: tuple
    std: tuple

    @classmethod
    def from_pixels(cls, rgb: np.ndarray) -> "StainStats":
        lab = rgb_to_lab(np.asarray(rgb).reshape(-1, 3))
        return cls(tuple(float(v) for v in lab.mean(0)), tuple(float(v) for v in lab.std(0)))

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))

    def is_valid(self) -> bool:
        return bool(np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std)) and min(self.std) > 0)


@lru_cache(maxsize=1)
def reference_stats() -> StainStats:
    """Statistics of the reference tile shipped with the package."""
    from PIL import Image

    with resources.files("histcode.data").joinpath("reference_tile.png").open("rb") as fh:
        tile = np.asarray(Image.open(fh).convert("RGB"))
    return StainStats.from_pixels(tile)


def transfer_lab(tile: np.ndarray, reference: StainStats, source: StainStats | None = None) -> np.ndarray:
    """Tile mapped to the reference statistics in l-alpha-beta (before quantization)."""
    lab = rgb_to_lab(tile)
    if source is None:
        flat = lab.reshape(-1, 3)
        src_mean, src_std = flat.mean(0), flat.std(0)
    else:
        src_mean, src_std = np.asarray(source.mean), np.asarray(source.std)
    return (lab - src_mean) / src_std * np.asarray(reference.std) + np.asarray(reference.mean)


def normalize_stain(tile: np.ndarray, reference: StainStats, source: StainStats | None = None):
    """Return ``(normalized_uint8_tile, uniform_flag)``.

    A tile (or source) with zero variance in any channel cannot be rescaled;
    it is returned unchanged with ``uniform_flag=True``.
    """
    if not reference.is_valid():
        raise ValueError("reference stats must be finite with std > 0")
    tile = np.asarray(tile)
    if source is None:
        std = rgb_to_lab(tile.reshape(-1, 3)).std(0)
        degenerate = bool(np.any(std <= 1e-12))
    else:
        degenerate = not source.is_valid()
    if degenerate:
        return tile.copy(), True
    rgb = lab_to_rgb(transfer_lab(tile, reference, source))
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8), False

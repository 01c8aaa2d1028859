from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientTiles
from .encoder import TileEncoder, encode, project


@dataclass
class MemoryBank:
    vectors: np.ndarray  # K x P, unit rows
    lr: float = 3.0

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])


def per_slide_count(n_tiles: int, fraction: float) -> int:
    """``round(fraction * n_tiles)`` with halves rounded up."""
    return int(np.floor(fraction * n_tiles + 0.5))


def sample_bank_tiles(tile_counts: dict, fraction: float, seed) -> list[tuple[str, int]]:
    """Per-slide sample without replacement of ``round(fraction * n)`` tile indices."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    picked = []
    for slide_id, n in tile_counts.items():
        k = per_slide_count(n, fraction)
        idx = np.sort(rng.choice(n, size=k, replace=False)) if k else []
        picked.extend((slide_id, int(i)) for i in idx)
    return picked


def init_bank(model: TileEncoder, tile_pool: dict, size: int, fraction: float, seed, lr: float = 3.0) -> MemoryBank:
    """Seed the negatives with projections of tiles sampled from every slide.

    ``tile_pool`` maps slide id -> uint8 array of tiles. When more than
    ``size`` tiles are sampled, a seeded subset of ``size`` is kept.
    """
    picked = sample_bank_tiles({k: len(v) for k, v in tile_pool.items()}, fraction, seed)
    if len(picked) < size:
        raise InsufficientTiles(f"bank needs {size} tiles, sampling at fraction {fraction} gives {len(picked)}")
    if len(picked) > size:
        rng = np.random.default_rng([int(s) for s in np.atleast_1d(seed)] + [1])
        keep = np.sort(rng.choice(len(picked), size=size, replace=False))
        picked = [picked[i] for i in keep]
    tiles = np.stack([tile_pool[s][i] for s, i in picked])
    vectors = project(model, encode(model, tiles))
    return MemoryBank(vectors, lr)

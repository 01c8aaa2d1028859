from __future__ import annotations

import numpy as np

from .stain import StainStats
from .tissue import TISSUE_GUARD, detect_tissue
from .types import SlideImage, TileCoord, TileManifest, TissueMask


def tessellate(width: int, height: int, tile_px: int, tile_um: float = 128.0) -> list[TileCoord]:
    """Non-overlapping grid of full tiles, sorted by (y, x); partial edge tiles are dropped."""
    if tile_px <= 0:
        raise ValueError("tile_px must be positive")
    return [
        TileCoord(y=y, x=x, tile_px=tile_px, tile_um=tile_um)
        for y in range(0, height - tile_px + 1, tile_px)
        for x in range(0, width - tile_px + 1, tile_px)
    ]


def _overlap(start: int, stop: int, downsample: int, n_cells: int) -> tuple[int, np.ndarray]:
    """First mask cell index and per-cell pixel overlap of [start, stop) at full resolution."""
    first = start // downsample
    last = min((stop - 1) // downsample, n_cells - 1)
    if last < first:
        return first, np.zeros(0, dtype=np.int64)
    cells = np.arange(first, last + 1)
    lo = np.maximum(cells * downsample, start)
    hi = np.minimum((cells + 1) * downsample, stop)
    return first, (hi - lo).astype(np.int64)


def tissue_pixels(tile: TileCoord, mask: TissueMask) -> int:
    """Tissue-positive pixels inside a tile footprint, with the mask upsampled by nearest neighbour."""
    ds = mask.downsample
    r0, rw = _overlap(tile.y, tile.y + tile.tile_px, ds, mask.mask.shape[0])
    c0, cw = _overlap(tile.x, tile.x + tile.tile_px, ds, mask.mask.shape[1])
    sub = mask.mask[r0 : r0 + len(rw), c0 : c0 + len(cw)].astype(np.int64)
    return int(rw @ sub @ cw)


def filter_tiles(coords, mask: TissueMask, min_tissue_px: int = 100) -> list[TileCoord]:
    return [t for t in coords if tissue_pixels(t, mask) >= min_tissue_px]


def crop(pixels: np.ndarray, tile: TileCoord) -> np.ndarray:
    return pixels[tile.y : tile.y + tile.tile_px, tile.x : tile.x + tile.tile_px]


def slide_stain_stats(pixels: np.ndarray, tiles, max_tiles: int = 64) -> StainStats | None:
    """Source color statistics pooled over (an evenly spaced subset of) the tissue tiles."""
    tiles = list(tiles)
    if not tiles:
        return None
    idx = np.unique(np.linspace(0, len(tiles) - 1, min(max_tiles, len(tiles))).astype(int))
    stack = np.concatenate([crop(pixels, tiles[i]).reshape(-1, 3) for i in idx])
    stats = StainStats.from_pixels(stack)
    return stats if stats.is_valid() else None


def ingest_slide(
    slide: SlideImage,
    tile_px: int = 256,
    tile_um: float = 128.0,
    downsample: int = 32,
    min_tissue_px: int = 100,
    tissue_guard: int = TISSUE_GUARD,
) -> TileManifest:
    """Mask, tessellate and filter one slide into a manifest."""
    mask = detect_tissue(slide, downsample, tissue_guard)
    grid = tessellate(slide.width, slide.height, tile_px, tile_um)
    kept = filter_tiles(grid, mask, min_tissue_px)
    meta = {
        "patient_id": slide.patient_id,
        "label": slide.label,
        "width": slide.width,
        "height": slide.height,
        "mpp": float(slide.microns_per_pixel),
        "tissue_fraction": float(mask.mask.mean()) if mask.mask.size else 0.0,
    }
    stats = slide_stain_stats(slide.pixels, kept)
    if stats is not None:
        meta["stain_source"] = stats.to_dict()
    return TileManifest.from_tiles(slide.slide_id, kept, meta, tile_px=tile_px, tile_um=tile_um)

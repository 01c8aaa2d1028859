from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

CAPTION_PX = 24


def rank_tiles(scores, n: int):
    """Indices of the ``n`` highest (descending) and ``n`` lowest (ascending); ties by lower index."""
    s = np.asarray(scores, dtype=np.float64)
    if not 1 <= n <= len(s):
        raise ValueError(f"n must be in [1, {len(s)}]")
    return np.argsort(-s, kind="stable")[:n], np.argsort(s, kind="stable")[:n]


def _grid(tiles, entries, cell_px):
    canvas = Image.new("RGB", (cell_px * len(entries), cell_px + CAPTION_PX), (255, 255, 255))
    draw = ImageDraw.Draw(canvas)
    for k, e in enumerate(entries):
        tile = Image.fromarray(tiles[e["index"]]).resize((cell_px, cell_px), Image.BILINEAR)
        canvas.paste(tile, (k * cell_px, 0))
        draw.text((k * cell_px + 2, cell_px + 1), f"{e['score']:.3g}", fill=(0, 0, 0))
        draw.text((k * cell_px + 2, cell_px + 12), f"({e['x']},{e['y']})", fill=(0, 0, 0))
    return np.asarray(canvas)


def _entry(i, coords, scores):
    return {"index": int(i), "x": int(coords[i, 0]), "y": int(coords[i, 1]), "score": float(scores[i])}


def tile_gallery(tiles, coords, scores, n: int, cell_px: int = 96):
    """Grids of the ``n`` highest and ``n`` lowest scoring tiles.

    Returns ``(top_image, bottom_image, top_entries, bottom_entries)``; each
    entry holds the tile index, coordinates and its exact score.
    """
    coords = np.asarray(coords).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64)
    if len(tiles) != len(scores) or len(coords) != len(scores):
        raise ValueError("tiles, coords and scores must be aligned")
    top, bottom = rank_tiles(scores, n)
    top_e = [_entry(i, coords, scores) for i in top]
    bottom_e = [_entry(i, coords, scores) for i in bottom]
    return _grid(tiles, top_e, cell_px), _grid(tiles, bottom_e, cell_px), top_e, bottom_e

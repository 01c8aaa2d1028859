"""Per-tile score heatmaps, gene saliency and tile galleries."""

from .colormap import BACKGROUND, apply_lut, invert_lut, lossless_lut
from .gallery import rank_tiles, tile_gallery
from .render import (
    ScoreMap,
    footprint,
    heatmap_shape,
    inside_outside_means,
    lookup_tile_scores,
    normalize_scores,
    render_heatmap,
    score_image,
    write_heatmap,
)
from .saliency import INTERPRETATION, gene_saliency

"""Regenerate src/histcode/data/reference_tile.png (the stain-normalization target)."""

from pathlib import Path

import numpy as np
from PIL import Image

from histcode.ingest.synth import SynthParams, synthesize_slide
from histcode.ingest.tissue import detect_tissue
from histcode.ingest.tiling import filter_tiles, tessellate, crop

OUT = Path(__file__).resolve().parents[1] / "src" / "histcode" / "data" / "reference_tile.png"


def main():
    slide, tumor = synthesize_slide(SynthParams(tumor_fraction=0.3, stain_jitter=0.0, artifact_prob=0.0), seed=20220101)
    mask = detect_tissue(slide, downsample=8)
    tiles = filter_tiles(tessellate(slide.width, slide.height, 256), mask, min_tissue_px=int(0.95 * 256 * 256))
    # a fully-tissue tile that mixes tumor and stroma
    best = min(tiles, key=lambda t: abs(crop(tumor, t).mean() - 0.5))
    Image.fromarray(crop(slide.pixels, best)).save(OUT)
    print(OUT, best, crop(tumor, best).mean())


if __name__ == "__main__":
    main()

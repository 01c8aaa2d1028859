"""Reading slides from disk.

Plain PNG/TIFF images are decoded with Pillow. Pyramidal formats (.svs,
.ndpi, .mrxs, ...) go through openslide when it is installed; only level 0 is
read.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .types import SlideImage

PLAIN_SUFFIXES = {".png", ".tif", ".tiff", ".jpg", ".jpeg"}
PYRAMID_SUFFIXES = {".svs", ".ndpi", ".mrxs", ".scn", ".vms", ".bif"}

Image.MAX_IMAGE_PIXELS = None


def list_slides(directory) -> dict[str, Path]:
    """slide_id (file stem) -> path, for every readable slide file in a directory."""
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() in PLAIN_SUFFIXES | PYRAMID_SUFFIXES:
            out[p.stem] = p
    return out


def _sidecar_mpp(path: Path):
    side = path.with_suffix(".json")
    if side.exists():
        return json.loads(side.read_text()).get("mpp")
    return None


def load_slide(path, patient_id: str, label: str = "unknown", default_mpp: float = 0.5) -> SlideImage:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in PYRAMID_SUFFIXES:
        try:
            import openslide
        except ImportError as exc:
            raise RuntimeError(f"{path}: reading {suffix} slides needs openslide-python") from exc
        with openslide.OpenSlide(str(path)) as osr:
            w, h = osr.level_dimensions[0]
            pixels = np.asarray(osr.read_region((0, 0), 0, (w, h)).convert("RGB"))
            mpp = float(osr.properties.get(openslide.PROPERTY_NAME_MPP_X, default_mpp))
    else:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"))
        mpp = _sidecar_mpp(path) or default_mpp
    return SlideImage(path.stem, np.ascontiguousarray(pixels), float(mpp), patient_id, label)


def save_slide(slide: SlideImage, path) -> None:
    path = Path(path)
    Image.fromarray(slide.pixels).save(path)
    path.with_suffix(".json").write_text(json.dumps({"mpp": slide.microns_per_pixel}))

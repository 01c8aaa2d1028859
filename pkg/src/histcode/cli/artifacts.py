"""On-disk artifact helpers shared by the stages."""

from __future__ import annotations

import os
from pathlib import Path

import h5py
import numpy as np

from ..errors import MissingUpstreamArtifact
from ..ingest import normalize_stain, read_labels, read_manifest, reference_stats
from ..ingest.slideio import list_slides, load_slide
from ..ingest.stain import StainStats
from ..ingest.tiling import crop
from ..mil import SlideBag

LABEL_CODE = {"normal": 0, "tumor": 1}


def require(path, hint: str = "") -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingUpstreamArtifact(path, hint)
    return path


def labels_by_slide(path) -> dict:
    return {r["slide_id"]: r for r in read_labels(require(path, "labels CSV"))}


def slide_files(slides_dir) -> dict:
    return list_slides(require(slides_dir, "slides directory"))


def manifest_path(out: Path, slide_id: str) -> Path:
    return out / "tiles" / "manifests" / f"{slide_id}.h5"


def embedding_path(out: Path, slide_id: str) -> Path:
    return out / "pretrain" / "embeddings" / f"{slide_id}.h5"


def attention_path(out: Path, slide_id: str) -> Path:
    return out / "diag" / "attention" / f"{slide_id}.csv"


def normalized_tiles(slide_path, manifest, indices=None, patient_id="", label="unknown", default_mpp=0.5) -> np.ndarray:
    """Crop and stain-normalize manifest tiles (all, or ``indices``) from a slide file."""
    slide = load_slide(slide_path, patient_id, label, default_mpp)
    ref = reference_stats()
    src = manifest.metadata.get("stain_source")
    source = StainStats.from_dict(src) if src else None
    tiles = list(manifest.tiles())
    if indices is not None:
        tiles = [tiles[i] for i in indices]
    t = manifest.tile_px
    out = np.empty((len(tiles), t, t, 3), dtype=np.uint8)
    for k, tile in enumerate(tiles):
        out[k], _ = normalize_stain(crop(slide.pixels, tile), ref, source)
    return out


def write_embeddings(path, slide_id: str, H: np.ndarray, coords: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with h5py.File(tmp, "w", track_order=True) as f:
        f.attrs["format_version"] = 1
        f.attrs["slide_id"] = slide_id
        f.create_dataset("embeddings", data=np.asarray(H, dtype=np.float32), track_times=False)
        f.create_dataset("coords", data=np.asarray(coords, dtype=np.int32).reshape(-1, 2), track_times=False)
    os.replace(tmp, path)


def read_embeddings(path):
    with h5py.File(require(path, "run `histcode pretrain` first"), "r") as f:
        return f["embeddings"][()].astype(np.float64), f["coords"][()].astype(np.int64)


def load_bags(out: Path, labels: dict) -> list[SlideBag]:
    """Bags for every labelled (tumor/normal) slide, sorted by slide id."""
    bags = []
    for slide_id in sorted(labels):
        row = labels[slide_id]
        if row["label"] not in LABEL_CODE:
            continue
        H, coords = read_embeddings(embedding_path(out, slide_id))
        if len(H) == 0:
            continue
        bags.append(SlideBag(slide_id, row["patient_id"], H, LABEL_CODE[row["label"]], coords))
    return bags


def read_manifests(out: Path, slide_ids) -> dict:
    return {s: read_manifest(require(manifest_path(out, s), "run `histcode tile` first")) for s in slide_ids}

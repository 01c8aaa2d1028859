"""HDF5 tile manifests and the slide labels CSV."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import h5py
import numpy as np

from ..errors import SchemaMismatch
from .types import LABELS, TileManifest

FORMAT_VERSION = 1

# metadata keys that map to fixed top-level attributes
_ATTR_KEYS = {"patient_id": str, "label": str, "width": int, "height": int, "mpp": float}


def write_manifest(manifest: TileManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coords = np.asarray(manifest.coords, dtype=np.int64)
    if len(coords) and (coords.max() > np.iinfo(np.int32).max or coords.min() < 0):
        raise ValueError("tile coordinates must fit in nonnegative int32")
    meta = dict(manifest.metadata)
    extra = {k: v for k, v in meta.items() if k not in _ATTR_KEYS}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with h5py.File(tmp, "w", track_order=False) as fh:
        fh.create_dataset("coords", data=coords.astype(np.int32).reshape(-1, 2), track_times=False)
        fh.attrs["format_version"] = FORMAT_VERSION
        fh.attrs["slide_id"] = manifest.slide_id
        fh.attrs["tile_px"] = int(manifest.tile_px)
        fh.attrs["tile_um"] = float(manifest.tile_um)
        for key, kind in _ATTR_KEYS.items():
            if key in meta:
                fh.attrs[key] = kind(meta[key])
        fh.attrs["extra_json"] = json.dumps(extra, sort_keys=True)
    tmp.replace(path)
    return path


def _attr(value):
    if isinstance(value, bytes):
        return value.decode()
    if isinstance(value, np.generic):
        return value.item()
    return value


def read_manifest(path) -> TileManifest:
    with h5py.File(path, "r") as fh:
        version = _attr(fh.attrs.get("format_version"))
        if version != FORMAT_VERSION:
            raise SchemaMismatch(f"{path}: unsupported manifest format_version {version!r}")
        coords = fh["coords"][()].astype(np.int64).reshape(-1, 2)
        attrs = {k: _attr(v) for k, v in fh.attrs.items()}
    meta = {k: kind(attrs[k]) for k, kind in _ATTR_KEYS.items() if k in attrs}
    meta.update(json.loads(attrs.get("extra_json", "{}")))
    return TileManifest(
        slide_id=str(attrs["slide_id"]),
        coords=coords,
        tile_px=int(attrs["tile_px"]),
        tile_um=float(attrs["tile_um"]),
        metadata=meta,
    )


def read_labels(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["slide_id", "patient_id", "label"]:
            raise SchemaMismatch(f"{path}: expected header slide_id,patient_id,label, got {reader.fieldnames}")
        rows = [dict(r) for r in reader]
    for r in rows:
        if r["label"] not in LABELS:
            raise SchemaMismatch(f"{path}: bad label {r['label']!r} for slide {r['slide_id']}")
    return rows


def write_labels(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slide_id", "patient_id", "label"])
        for r in rows:
            writer.writerow([r["slide_id"], r["patient_id"], r["label"]])

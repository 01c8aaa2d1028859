from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

LABELS = ("tumor", "normal", "unknown")


@dataclass
class SlideImage:
    slide_id: str
    pixels: np.ndarray  # H x W x 3 uint8
    microns_per_pixel: float
    patient_id: str
    label: str = "unknown"

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected HxWx3 pixels, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError("slide pixels must be uint8")
        if not self.microns_per_pixel > 0:
            raise ValueError("microns_per_pixel must be positive")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True, order=True)
class TileCoord:
    # field order gives the (y, x) lexicographic sort used by manifests
    y: int
    x: int
    tile_px: int = 256
    tile_um: float = 128.0


@dataclass
class TissueMask:
    mask: np.ndarray  # bool, ceil(H / downsample) x ceil(W / downsample)
    downsample: int

    @property
    def shape(self):
        return self.mask.shape


@dataclass(eq=False)
class TileManifest:
    """Coordinates of the retained tiles of one slide.

    ``coords`` is an ``(N, 2)`` int array of ``(x, y)`` top-left offsets kept
    sorted by ``(y, x)``.
    """

    slide_id: str
    coords: np.ndarray
    tile_px: int = 256
    tile_um: float = 128.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        if len(coords):
            order = np.lexsort((coords[:, 0], coords[:, 1]))
            coords = coords[order]
            if np.any(np.all(np.diff(coords, axis=0) == 0, axis=1)):
                raise ValueError("duplicate tile coordinates in manifest")
        self.coords = coords

    def __len__(self):
        return len(self.coords)

    def __eq__(self, other):
        if not isinstance(other, TileManifest):
            return NotImplemented
        return (
            self.slide_id == other.slide_id
            and self.tile_px == other.tile_px
            and self.tile_um == other.tile_um
            and self.metadata == other.metadata
            and np.array_equal(self.coords, other.coords)
        )

    def tiles(self) -> Iterator[TileCoord]:
        for x, y in self.coords:
            yield TileCoord(y=int(y), x=int(x), tile_px=self.tile_px, tile_um=self.tile_um)

    @classmethod
    def from_tiles(cls, slide_id, tiles, metadata=None, tile_px=None, tile_um=None):
        tiles = list(tiles)
        if tile_px is None:
            tile_px = tiles[0].tile_px if tiles else 256
        if tile_um is None:
            tile_um = tiles[0].tile_um if tiles else 128.0
        coords = np.array([(t.x, t.y) for t in tiles], dtype=np.int64).reshape(-1, 2)
        return cls(slide_id, coords, tile_px, tile_um, dict(metadata or {}))

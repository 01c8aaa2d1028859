from .manifest import read_labels, read_manifest, write_labels, write_manifest
from .stain import StainStats, normalize_stain, reference_stats
from .synth import SynthParams, synthesize_slide
from .tiling import filter_tiles, ingest_slide, tessellate
from .tissue import detect_tissue, otsu_threshold
from .types import SlideImage, TileCoord, TileManifest, TissueMask

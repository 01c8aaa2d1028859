"""Procedural H&E-like slides with a known tumor mask.

Tissue is a smooth blob on a white background. Inside it, normal stroma
(pink, sparse small nuclei), lymphoid aggregates (dense, small, very dark
nuclei) and tumor regions (purple, crowded, large irregular nuclei) are laid
out from thresholded smooth random fields. Each slide also gets a random
stain perturbation and, sometimes, a pen-mark artifact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .types import SlideImage

BACKGROUND = np.array([243.0, 242.0, 245.0])
STROMA = np.array([226.0, 146.0, 188.0])
TUMOR_BASE = np.array([208.0, 146.0, 196.0])
LYMPH_BASE = np.array([218.0, 146.0, 196.0])
NUCLEUS = np.array([92.0, 56.0, 138.0])
LYMPH_NUCLEUS = np.array([58.0, 34.0, 104.0])
TUMOR_NUCLEUS = np.array([104.0, 58.0, 150.0])
PEN = np.array([40.0, 90.0, 70.0])


@dataclass
class SynthParams:
    height: int = 1024
    width: int = 1024
    tumor_fraction: float = 0.0  # fraction of all slide pixels that are tumor
    tissue_coverage: float = 0.62  # fraction of slide pixels covered by tissue
    margin: float = 0.05  # white border, as a fraction of each dimension
    lymph_fraction: float | None = None  # None: drawn per slide in [0, 0.2) of tissue
    artifact_prob: float = 0.3
    stain_jitter: float = 0.15
    mpp: float = 1.0
    # nuclei per pixel
    stroma_density: float = 0.0006
    lymph_density: float = 0.008
    tumor_density: float = 0.0028


def _smooth_field(rng, shape, scale):
    """Zero-mean, unit-variance smooth random field with correlation length ~scale pixels."""
    h, w = shape
    step = max(1, int(scale // 4))
    small = rng.standard_normal((h // step + 2, w // step + 2))
    small = ndimage.gaussian_filter(small, sigma=max(scale / step / 2.0, 0.5), mode="wrap")
    field = ndimage.zoom(small, step, order=1)[:h, :w]
    field -= field.mean()
    return field / (field.std() + 1e-12)


def _top_fraction(field, allowed, n_pixels):
    """Boolean mask of the ``n_pixels`` highest field values inside ``allowed``."""
    out = np.zeros(field.shape, dtype=bool)
    if n_pixels <= 0:
        return out
    idx = np.flatnonzero(allowed)
    if n_pixels >= len(idx):
        out.flat[idx] = True
        return out
    vals = field.flat[idx]
    # stable ordering so ties cannot make the count seed-dependent
    order = np.argsort(-vals, kind="stable")[:n_pixels]
    out.flat[idx[order]] = True
    return out


def _kernels(radius, aspect, n_orient, softness=1.0):
    ks = []
    r = int(np.ceil(radius * max(aspect, 1.0))) + 2
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    for k in range(n_orient):
        th = np.pi * k / n_orient
        u = xx * np.cos(th) + yy * np.sin(th)
        v = -xx * np.sin(th) + yy * np.cos(th)
        d = np.sqrt((u / (radius * aspect)) ** 2 + (v / radius) ** 2)
        ks.append(np.clip((1.0 - d) * radius / softness + 0.5, 0.0, 1.0))
    return ks


def _stamp_nuclei(rng, alpha, region, density, kernels, strength=(0.75, 0.95)):
    n = rng.poisson(density * region.sum())
    if n == 0:
        return
    ys, xs = np.nonzero(region)
    pick = rng.integers(0, len(ys), size=n)
    which = rng.integers(0, len(kernels), size=n)
    amp = rng.uniform(*strength, size=n)
    h, w = alpha.shape
    for y, x, k, a in zip(ys[pick], xs[pick], which, amp):
        ker = kernels[k]
        r = ker.shape[0] // 2
        y0, y1 = max(0, y - r), min(h, y + r + 1)
        x0, x1 = max(0, x - r), min(w, x + r + 1)
        sub = ker[y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)] * a
        np.maximum(alpha[y0:y1, x0:x1], sub, out=alpha[y0:y1, x0:x1])


def synthesize_slide(params: SynthParams, seed: int, slide_id: str = "synthetic", patient_id: str = "P0"):
    """Return ``(SlideImage, tumor_mask)`` with ``tumor_mask.mean()`` matching ``params.tumor_fraction``."""
    rng = np.random.default_rng(seed)
    h, w = params.height, params.width
    n_total = h * w
    if not 0.0 <= params.tumor_fraction <= params.tissue_coverage:
        raise ValueError("tumor_fraction must lie in [0, tissue_coverage]")

    # tissue blob: radial falloff plus smooth noise, confined inside the margins
    yy, xx = np.mgrid[0:h, 0:w]
    rad = ((yy - h / 2) / (h / 2)) ** 2 + ((xx - w / 2) / (w / 2)) ** 2
    tissue_field = -rad + 0.35 * _smooth_field(rng, (h, w), scale=min(h, w) / 6)
    mh, mw = int(round(params.margin * h)), int(round(params.margin * w))
    inside = np.zeros((h, w), dtype=bool)
    inside[mh : h - mh, mw : w - mw] = True
    tissue = _top_fraction(tissue_field, inside, int(round(params.tissue_coverage * n_total)))

    tumor_field = _smooth_field(rng, (h, w), scale=min(h, w) / 5)
    tumor = _top_fraction(tumor_field, tissue, int(round(params.tumor_fraction * n_total)))

    lymph_frac = params.lymph_fraction
    if lymph_frac is None:
        lymph_frac = rng.uniform(0.0, 0.2)
    lymph_field = _smooth_field(rng, (h, w), scale=min(h, w) / 10)
    normal = tissue & ~tumor
    lymph = _top_fraction(lymph_field, normal, int(round(lymph_frac * tissue.sum())))

    # base colors with fibrous texture
    fiber = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=(1.0, 5.0))
    fiber /= fiber.std() + 1e-12
    grain = rng.standard_normal((h, w))
    img = np.empty((h, w, 3))
    img[:] = BACKGROUND
    img += 1.5 * grain[..., None]
    for region, base, tex in ((normal, STROMA, 14.0), (lymph, LYMPH_BASE, 8.0), (tumor, TUMOR_BASE, 10.0)):
        img[region] = base + tex * fiber[region][:, None] + 3.0 * grain[region][:, None]

    for region, density, radius, aspect, color, strength in (
        (normal & ~lymph, params.stroma_density, 2.5, 1.8, NUCLEUS, (0.6, 0.85)),
        (lymph, params.lymph_density, 2.2, 1.0, LYMPH_NUCLEUS, (0.85, 1.0)),
        (tumor, params.tumor_density, 5.0, 1.5, TUMOR_NUCLEUS, (0.6, 0.85)),
    ):
        alpha = np.zeros((h, w))
        kernels = _kernels(radius, aspect, 6) + _kernels(radius * 1.35, aspect, 3)
        _stamp_nuclei(rng, alpha, region, density, kernels, strength)
        alpha *= tissue
        img = img * (1.0 - alpha[..., None]) + color * alpha[..., None]

    if rng.uniform() < params.artifact_prob:
        alpha = np.zeros((h, w))
        y, x = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        th = rng.uniform(0, np.pi)
        length, width = rng.uniform(0.2, 0.4) * min(h, w), rng.uniform(6, 12)
        u = (xx - x) * np.cos(th) + (yy - y) * np.sin(th)
        v = -(xx - x) * np.sin(th) + (yy - y) * np.cos(th)
        alpha[(np.abs(u) < length / 2) & (np.abs(v) < width / 2)] = 0.8
        img = img * (1.0 - alpha[..., None]) + PEN * alpha[..., None]

    # stain variation in optical density space, tissue only
    if params.stain_jitter > 0:
        scale = rng.uniform(1 - params.stain_jitter, 1 + params.stain_jitter, size=3)
        od = -np.log(np.clip(img, 1.0, 255.0) / 255.0)
        jittered = 255.0 * np.exp(-od * scale)
        img = np.where(tissue[..., None], jittered, img)

    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    label = "tumor" if params.tumor_fraction > 0 else "normal"
    slide = SlideImage(slide_id, pixels, params.mpp, patient_id, label)
    return slide, tumor

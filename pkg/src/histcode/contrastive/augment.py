"""Stochastic views for contrastive pretraining.

Random resized crop (scale 0.2-1.0), horizontal and vertical flips, color
jitter, random grayscale (p=0.2) and Gaussian blur. Every draw comes from a
``numpy`` generator seeded by the caller, so a (tile, seed) pair always gives
the same two views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageFilter


@dataclass(frozen=True)
class AugmentParams:
    crop_scale: tuple = (0.2, 1.0)
    crop_ratio: tuple = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    jitter_p: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.05
    gray_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)


def _crop_box(rng, h, w, scale, ratio):
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(*scale)
        aspect = math.exp(rng.uniform(math.log(ratio[0]), math.log(ratio[1])))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            y = int(rng.integers(0, h - ch + 1))
            x = int(rng.integers(0, w - cw + 1))
            return x, y, x + cw, y + ch
    return 0, 0, w, h


def _jitter(img, rng, p: AugmentParams):
    # brightness, contrast, saturation, hue in random order, on float 0-1 RGB
    gray_w = np.array([0.299, 0.587, 0.114])
    for op in rng.permutation(4):
        if op == 0:
            img = img * rng.uniform(1 - p.brightness, 1 + p.brightness)
        elif op == 1:
            mean = (img @ gray_w).mean()
            img = (img - mean) * rng.uniform(1 - p.contrast, 1 + p.contrast) + mean
        elif op == 2:
            gray = (img @ gray_w)[..., None]
            img = (img - gray) * rng.uniform(1 - p.saturation, 1 + p.saturation) + gray
        else:
            # hue rotation about the gray axis in YIQ space
            theta = 2 * np.pi * rng.uniform(-p.hue, p.hue)
            c, s = np.cos(theta), np.sin(theta)
            to_yiq = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
            rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
            img = img @ (np.linalg.inv(to_yiq) @ rot @ to_yiq).T
        img = np.clip(img, 0.0, 1.0)
    return img


def augment_view(tile: np.ndarray, rng: np.random.Generator, params: AugmentParams = AugmentParams()) -> np.ndarray:
    h, w = tile.shape[:2]
    im = Image.fromarray(tile)
    im = im.crop(_crop_box(rng, h, w, params.crop_scale, params.crop_ratio)).resize((w, h), Image.BILINEAR)
    if rng.uniform() < params.flip_p:
        im = im.transpose(Image.FLIP_LEFT_RIGHT)
    if rng.uniform() < params.flip_p:
        im = im.transpose(Image.FLIP_TOP_BOTTOM)
    arr = np.asarray(im, dtype=np.float64) / 255.0
    if rng.uniform() < params.jitter_p:
        arr = _jitter(arr, rng, params)
    if rng.uniform() < params.gray_p:
        arr = np.repeat((arr @ np.array([0.299, 0.587, 0.114]))[..., None], 3, axis=2)
    out = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if rng.uniform() < params.blur_p:
        sigma = rng.uniform(*params.blur_sigma)
        out = np.asarray(Image.fromarray(out).filter(ImageFilter.GaussianBlur(sigma)))
    return out


def augment_pair(tile: np.ndarray, seed, params: AugmentParams = AugmentParams()):
    """Two independent random views of ``tile``; ``seed`` may be an int or a sequence of ints."""
    rng = np.random.default_rng(seed)
    return augment_view(tile, rng, params), augment_view(tile, rng, params)

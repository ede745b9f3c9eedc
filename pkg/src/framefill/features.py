"""Deterministic frame-to-feature-map extraction.

Stands in for a learned encoder: every frame maps to a c x res x res feature
grid through fixed, seeded arithmetic, so the whole pipeline is reproducible
without any training.  Two modes:

* ``pool``: per-cell mean RGB (3 channels), smooth and suitable for
  photometric Gauss-Newton refinement;
* ``convbank``: a seeded random projection bank with ReLU applied to a 4x4
  resample of each cell (a strided random convolution), more distinctive and
  suitable for correlation matching.

A feature cell is marked valid only if every pixel it draws from is visible.
"""

from __future__ import annotations

import numpy as np

import scipy.ndimage as ndimage

from . import _kernels as kern
from .errors import InvalidParameterError, ShapeMismatchError
from .rng import substream

_PATCH_SIDE = 6    # convbank descriptor taps per axis
_FIELD_SCALE = 2   # receptive field is this many cells wide


def _check_geometry(h: int, w: int, res: int):
    if res < 1:
        raise InvalidParameterError(f"feature resolution must be >= 1, got {res}")
    if h % res or w % res:
        raise ShapeMismatchError(
            f"frame size {h}x{w} is not divisible by feature resolution {res}")
    return h // res, w // res


def downsample_mask(mask: np.ndarray, res: int,
                    field_scale: int = 1) -> np.ndarray:
    """Conservative mask pooling: a cell is visible iff all its pixels are.

    With field_scale > 1 the requirement extends to the surrounding
    receptive field (the convbank descriptor reads beyond its cell).
    """
    h, w = mask.shape
    by, bx = _check_geometry(h, w, res)
    vis = np.asarray(mask) > 0
    if field_scale > 1:
        pad_y = (field_scale - 1) * by // 2
        pad_x = (field_scale - 1) * bx // 2
        vis = ndimage.minimum_filter(vis, size=(2 * pad_y + 1, 2 * pad_x + 1),
                                     mode="nearest")
    blocks = vis.reshape(res, by, res, bx)
    return (blocks.min(axis=(1, 3)) > 0).astype(np.uint8)


def pool_features(img: np.ndarray, res: int) -> np.ndarray:
    """Per-cell mean of each channel; (H,W,3) -> (3,res,res)."""
    h, w = img.shape[:2]
    by, bx = _check_geometry(h, w, res)
    blocks = img.reshape(res, by, res, bx, -1)
    return blocks.mean(axis=(1, 3)).transpose(2, 0, 1).astype(np.float64)


def projection_bank(channels: int, in_dim: int, seed: int) -> np.ndarray:
    """Seeded Gaussian projection matrix shared by all frames of a run."""
    gen = substream(seed, "feature-bank", channels, in_dim)
    bank = gen.normal(size=(channels, in_dim))
    return bank / np.sqrt(in_dim)


def convbank_features(img: np.ndarray, res: int, channels: int,
                      seed: int) -> np.ndarray:
    """Strided random-projection features with ReLU; (H,W,3) -> (c,res,res).

    Each cell's descriptor taps a 6x6 grid spanning a receptive field twice
    the cell size (clamped at the image border), is mean-centered, projected
    with a seeded Gaussian bank and rectified.  The matching validity mask
    for these features is downsample_mask(..., field_scale=2).
    """
    h, w = img.shape[:2]
    by, bx = _check_geometry(h, w, res)
    g = _PATCH_SIDE

    def _taps(n_cells, block, limit):
        # per-cell sample positions over the widened field, clamped into frame
        k = np.arange(g)
        field = _FIELD_SCALE * block
        off = (k + 0.5) * field / g - 0.5 * (field - block) - 0.5
        starts = np.arange(n_cells) * block
        return np.clip(starts[:, None] + off[None, :], 0.0, limit - 1.0)

    ys = _taps(res, by, h).reshape(-1)   # (res*g,)
    xs = _taps(res, bx, w).reshape(-1)
    px = np.tile(xs, res * g)
    py = np.repeat(ys, res * g)
    src = np.ascontiguousarray(img.transpose(2, 0, 1).astype(np.float64))
    sampled, _ = kern.bilinear_sample_px(src, px, py)
    # (3, res*g, res*g) -> per-cell descriptor of 3*g*g values
    grid = sampled.reshape(3, res, g, res, g)
    desc = grid.transpose(1, 3, 0, 2, 4).reshape(res * res, 3 * g * g)
    desc = desc - desc.mean(axis=1, keepdims=True)

    bank = projection_bank(channels, 3 * g * g, seed)
    feats = np.maximum(desc @ bank.T, 0.0)
    return feats.T.reshape(channels, res, res)


def extract_features(img: np.ndarray, mask: np.ndarray, res: int,
                     mode: str = "convbank", channels: int = 16,
                     seed: int = 0):
    """Feature map plus its conservative validity mask.

    Returns (features (c,res,res), feature_mask (res,res) uint8); c is 3 in
    ``pool`` mode regardless of ``channels``.
    """
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatchError(f"expected (H,W,3) image, got {img.shape}")
    if img.shape[:2] != mask.shape:
        raise ShapeMismatchError(
            f"mask {mask.shape} does not match image {img.shape[:2]}")
    if mode == "pool":
        feats = pool_features(img, res)
        fmask = downsample_mask(mask, res)
    elif mode == "convbank":
        feats = convbank_features(img, res, channels, seed)
        fmask = downsample_mask(mask, res, field_scale=_FIELD_SCALE)
    else:
        raise InvalidParameterError(f"unknown feature mode {mode!r}")
    return feats, fmask

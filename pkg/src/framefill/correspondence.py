"""Masked cosine correlation between reference and target feature maps.

Correlation entries exist only where both feature cells are visible; the
softmax normalization likewise runs over visible reference cells only, so
hole content can never vote.  Correlation maps are (h*w, h*w) arrays with
row-major flattened reference positions as rows and target positions as
columns.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as kern
from .errors import InvalidParameterError, ShapeMismatchError

NORM_EPS = 1e-8


def center_features(f: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Subtract each channel's mean over visible cells.

    Decorrelates the correlation landscape: nonnegative feature banks
    otherwise push every cosine toward 1 and the softmax cannot separate the
    true match from the background.
    """
    f = np.asarray(f, np.float64)
    vis = np.asarray(m).reshape(-1) > 0
    flat = f.reshape(f.shape[0], -1).copy()
    if vis.any():
        flat -= flat[:, vis].mean(axis=1, keepdims=True)
    return flat.reshape(f.shape)


def normalize_channels(f: np.ndarray) -> np.ndarray:
    """L2-normalize the channel vector at every spatial location.

    Zero vectors stay zero (the norm is floored at 1e-8 instead of dividing
    by zero).
    """
    f = np.asarray(f, np.float64)
    norms = np.sqrt((f * f).sum(axis=0, keepdims=True))
    return f / np.maximum(norms, NORM_EPS)


def masked_correlation(f_r: np.ndarray, m_r: np.ndarray,
                       f_t: np.ndarray, m_t: np.ndarray) -> np.ndarray:
    """Cosine similarity C(i,j) = <f_r(i), f_t(j)> where both cells are
    visible, exactly 0 elsewhere.

    Inputs are expected channel-normalized; masks are at feature resolution.
    """
    f_r = np.asarray(f_r, np.float64)
    f_t = np.asarray(f_t, np.float64)
    if f_r.shape != f_t.shape:
        raise ShapeMismatchError(f"feature shapes differ: {f_r.shape} vs {f_t.shape}")
    if m_r.shape != f_r.shape[1:] or m_t.shape != f_t.shape[1:]:
        raise ShapeMismatchError("mask shape does not match feature grid")
    c = f_r.shape[0]
    fr = np.ascontiguousarray(f_r.reshape(c, -1))
    ft = np.ascontiguousarray(f_t.reshape(c, -1))
    mr = np.ascontiguousarray(m_r.reshape(-1).astype(np.uint8))
    mt = np.ascontiguousarray(m_t.reshape(-1).astype(np.uint8))
    return kern.masked_correlation(fr, ft, mr, mt)


def softmax_normalize(corr: np.ndarray, m_r: np.ndarray,
                      temperature: float = 1.0):
    """Normalize each target column by a softmax over visible reference rows.

    Rows with m_r == 0 get weight 0 and are excluded from the partition
    function.  Returns (normalized (N,N), col_valid (N,) uint8); columns with
    no valid row are all-zero with their flag cleared.
    """
    if not (temperature > 0.0) or not np.isfinite(temperature):
        raise InvalidParameterError(f"temperature must be positive, got {temperature}")
    corr = np.ascontiguousarray(corr, np.float64)
    mr = np.ascontiguousarray(np.asarray(m_r).reshape(-1).astype(np.uint8))
    if corr.ndim != 2 or corr.shape[0] != mr.size:
        raise ShapeMismatchError(
            f"correlation {corr.shape} does not match {mr.size} reference cells")
    return kern.softmax_columns(corr, mr, float(temperature))

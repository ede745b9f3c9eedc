"""Warp, weight and pool reference feature maps onto the target.

Each reference is warped by its estimated affine, scored by the masked
feature distance to the target over their overlap, and the aligned stack is
collapsed into one coarse fill by a per-pixel softmax across frames.  Pixels
seen by no reference stay zero and are reported in a residual-hole mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .geometry import AffineParams, affine_grid, bilinear_sample, warp_mask

DIST_EPS = 1e-4        # floor on the frame distance, guards exp(1/w)
MIN_OVERLAP_NORM = 16  # floor on the overlap count used to normalize Eq-style distances


@dataclass
class AlignedStack:
    """References warped onto the target grid, with warped validity masks."""

    feats: np.ndarray   # (n, c, h, w)
    masks: np.ndarray   # (n, h, w) uint8

    def __len__(self) -> int:
        return self.feats.shape[0]


@dataclass
class TemporalWeights:
    """Per-frame alignment distances and per-pixel frame weights."""

    frame_dist: np.ndarray  # (n,) distance-derived w, +inf for zero-overlap frames
    pixel: np.ndarray       # (n, h, w) convex weights (sum 1 or all 0 per pixel)


def align_references(refs: list, masks: list, thetas: list) -> AlignedStack:
    """Warp every reference feature map and mask onto the target grid."""
    if not (len(refs) == len(masks) == len(thetas)):
        raise ShapeMismatchError(
            f"got {len(refs)} refs, {len(masks)} masks, {len(thetas)} thetas")
    if len(refs) == 0:
        raise ShapeMismatchError("need at least one reference")
    feats, wmasks = [], []
    for f, m, theta in zip(refs, masks, thetas):
        h, w = f.shape[1:]
        grid = affine_grid(theta, h, w)
        warped, _ = bilinear_sample(f, grid)
        feats.append(warped)
        wmasks.append(warp_mask(m, grid))
    return AlignedStack(np.stack(feats), np.stack(wmasks))


def alignment_weights(x_t: np.ndarray, m_t: np.ndarray,
                      stack: AlignedStack) -> TemporalWeights:
    """Score each aligned reference and spread the scores per pixel.

    The raw distance is the L2 norm of the masked feature difference over the
    target/reference overlap, normalized by sqrt(overlap count, floored at
    16) so small overlaps cannot look spuriously well aligned.  Per pixel,
    weights are a masked softmax of 1/w across the frames valid there;
    zero-overlap frames get w = +inf and are excluded everywhere.
    """
    n, c, h, w = stack.feats.shape
    if x_t.shape != (c, h, w) or m_t.shape != (h, w):
        raise ShapeMismatchError("target feature/mask shape mismatch with stack")
    mt = np.asarray(m_t) > 0
    dist = np.empty(n)
    for i in range(n):
        overlap = mt & (stack.masks[i] > 0)
        count = int(overlap.sum())
        if count == 0:
            dist[i] = np.inf
            continue
        diff = (x_t - stack.feats[i])[:, overlap]
        d = np.sqrt((diff * diff).sum()) / np.sqrt(max(count, MIN_OVERLAP_NORM))
        dist[i] = max(d, DIST_EPS)

    valid = (stack.masks > 0) & np.isfinite(dist)[:, None, None]
    scores = np.where(valid, np.where(np.isfinite(dist), 1.0 / dist, 0.0)[:, None, None],
                      -np.inf)
    smax = scores.max(axis=0)
    safe = np.where(np.isfinite(smax), smax, 0.0)
    expw = np.exp(scores - safe[None])
    expw[~valid] = 0.0
    denom = expw.sum(axis=0)
    pixel = np.where(denom > 0.0, expw / np.where(denom > 0.0, denom, 1.0), 0.0)
    return TemporalWeights(dist, pixel)


def temporal_aggregate(stack: AlignedStack, weights: TemporalWeights):
    """Convex per-pixel combination of the aligned stack.

    Returns (x_hat_r (c,h,w), union_mask (h,w)); the union mask marks pixels
    covered by at least one valid warped reference.
    """
    x_hat = np.einsum("nhw,nchw->chw", weights.pixel, stack.feats)
    union = (stack.masks.max(axis=0) > 0).astype(np.uint8)
    return x_hat, union


@dataclass
class CoarseFill:
    features: np.ndarray       # (c, h, w) coarse target prediction
    borrow_mask: np.ndarray    # (h, w) hole cells filled from references
    residual_hole: np.ndarray  # (h, w) hole cells no reference could see


def compose_coarse(x_t: np.ndarray, m_t: np.ndarray, x_hat_r: np.ndarray,
                   m_hat_union: np.ndarray) -> CoarseFill:
    """Keep visible target content, paste the aggregated fill into the hole.

    Visible cells are passed through bit-exactly; hole cells covered by the
    union mask take the aggregate, the rest stay zero and are reported as the
    residual hole.
    """
    if x_t.shape != x_hat_r.shape:
        raise ShapeMismatchError(
            f"feature shapes differ: {x_t.shape} vs {x_hat_r.shape}")
    mt = np.asarray(m_t) > 0
    union = np.asarray(m_hat_union) > 0
    borrow = (~mt) & union
    residual = (~mt) & (~union)
    features = np.where(mt[None], x_t, np.where(union[None], x_hat_r, 0.0))
    return CoarseFill(features, borrow.astype(np.uint8),
                      residual.astype(np.uint8))

"""Coordinate grids, affine warps, bilinear sampling and their derivatives.

Conventions used everywhere in the package:

* normalized coordinates put (-1, -1) on the top-left pixel *center* and
  (+1, +1) on the bottom-right pixel center, so an identity warp reproduces
  the source exactly;
* an affine transform maps target normalized coordinates to source (reference)
  normalized coordinates: sampling a reference with ``affine_grid(theta)``
  aligns it onto the target;
* samples whose interpolation taps leave the source are zero and flagged
  invalid in an explicit mask, never border-clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .errors import InvalidParameterError, ShapeMismatchError

# minimum |det| of the 2x2 linear part for a transform used to warp
MIN_DET = 1e-8

# mask survives warping only if the interpolated visibility is this high,
# i.e. no interpolation tap touched a hole
MASK_WARP_THRESHOLD = 0.999


@dataclass(frozen=True)
class AffineParams:
    """Six-parameter affine map, row-major [a11, a12, tx, a21, a22, ty]."""

    a11: float
    a12: float
    tx: float
    a21: float
    a22: float
    ty: float

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def from_array(cls, arr) -> "AffineParams":
        a = np.asarray(arr, np.float64).reshape(6)
        return cls(*(float(v) for v in a))

    def to_array(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.tx,
                         self.a21, self.a22, self.ty], np.float64)

    @property
    def matrix(self) -> np.ndarray:
        """2x3 matrix form."""
        return self.to_array().reshape(2, 3)

    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.to_array()).all())

    def compose(self, other: "AffineParams") -> "AffineParams":
        """self after other: (self . other)(p) = self(other(p))."""
        a = np.vstack([self.matrix, [0.0, 0.0, 1.0]])
        b = np.vstack([other.matrix, [0.0, 0.0, 1.0]])
        return AffineParams.from_array((a @ b)[:2])

    def inverse(self) -> "AffineParams":
        d = self.det()
        if abs(d) <= MIN_DET:
            raise InvalidParameterError(f"affine not invertible (det={d:g})")
        inv = np.array([[self.a22, -self.a12], [-self.a21, self.a11]]) / d
        t = -inv @ np.array([self.tx, self.ty])
        return AffineParams(inv[0, 0], inv[0, 1], t[0], inv[1, 0], inv[1, 1], t[1])


def base_grid(h: int, w: int) -> np.ndarray:
    """Identity mesh of normalized coordinates, shape (h, w, 2), (x, y) last."""
    if h < 2 or w < 2:
        raise InvalidParameterError(f"grid needs h,w >= 2, got {h}x{w}")
    xs = np.linspace(-1.0, 1.0, w)
    ys = np.linspace(-1.0, 1.0, h)
    grid = np.empty((h, w, 2), np.float64)
    grid[..., 0] = xs[None, :]
    grid[..., 1] = ys[:, None]
    return grid


def affine_grid(theta: AffineParams, h: int, w: int) -> np.ndarray:
    """Sampling grid produced by applying ``theta`` to the base mesh."""
    if not theta.is_finite():
        raise InvalidParameterError("affine parameters must be finite")
    base = base_grid(h, w)
    x, y = base[..., 0], base[..., 1]
    grid = np.empty_like(base)
    grid[..., 0] = theta.a11 * x + theta.a12 * y + theta.tx
    grid[..., 1] = theta.a21 * x + theta.a22 * y + theta.ty
    return grid


def _grid_to_px(grid: np.ndarray, h: int, w: int):
    """Normalized grid -> flat pixel coordinates (px, py)."""
    gx = grid[..., 0].ravel()
    gy = grid[..., 1].ravel()
    px = (gx + 1.0) * 0.5 * (w - 1)
    py = (gy + 1.0) * 0.5 * (h - 1)
    return px, py


def bilinear_sample(src: np.ndarray, grid: np.ndarray):
    """Sample ``src`` (c,h,w) at ``grid`` (H,W,2) normalized coordinates.

    Returns (out (c,H,W), valid (H,W)); out is 0 and valid is 0 wherever an
    interpolation tap would leave the source.
    """
    src = np.asarray(src, np.float64)
    if src.ndim != 3:
        raise ShapeMismatchError(f"src must be (c,h,w), got {src.shape}")
    if grid.ndim != 3 or grid.shape[-1] != 2:
        raise ShapeMismatchError(f"grid must be (H,W,2), got {grid.shape}")
    c, h, w = src.shape
    gh, gw = grid.shape[:2]
    px, py = _grid_to_px(grid, h, w)
    out, valid = kern.bilinear_sample_px(np.ascontiguousarray(src), px, py)
    return out.reshape(c, gh, gw), valid.reshape(gh, gw)


def warp_mask(m: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Warp a binary visibility mask, conservatively.

    The mask is sampled as a real field and a warped pixel stays visible only
    if the interpolated visibility is >= 0.999 *and* all taps were in bounds,
    so no partially-hole tap is ever marked valid.
    """
    m = np.asarray(m, np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"mask must be (h,w), got {m.shape}")
    sampled, valid = bilinear_sample(m[None], grid)
    return ((sampled[0] >= MASK_WARP_THRESHOLD) & (valid == 1)).astype(np.uint8)


def sample_jacobian_theta(src: np.ndarray, theta: AffineParams,
                          h: int | None = None, w: int | None = None):
    """Per-pixel Jacobian of warped intensities w.r.t. the six parameters.

    Returns (warped (c,H,W), jac (c,H,W,6), valid (H,W)): jac[...,k] is the
    derivative of the sampled value w.r.t. parameter k of
    [a11, a12, tx, a21, a22, ty].  Derivatives use the one-sided convention
    of the floor interpolation cell and are zero at invalid samples.
    """
    src = np.asarray(src, np.float64)
    c, sh, sw = src.shape
    gh = sh if h is None else h
    gw = sw if w is None else w
    grid = affine_grid(theta, gh, gw)
    px, py = _grid_to_px(grid, sh, sw)
    out, gx, gy, valid = kern.bilinear_sample_grad_px(
        np.ascontiguousarray(src), px, py)

    base = base_grid(gh, gw)
    bx = base[..., 0].ravel()
    by = base[..., 1].ravel()
    # chain rule: d px / d x_norm = (w-1)/2, x_norm = a11*bx + a12*by + tx
    sx = 0.5 * (sw - 1)
    sy = 0.5 * (sh - 1)
    jac = np.empty((c, gh * gw, 6), np.float64)
    jac[..., 0] = gx * (sx * bx)
    jac[..., 1] = gx * (sx * by)
    jac[..., 2] = gx * sx
    jac[..., 3] = gy * (sy * bx)
    jac[..., 4] = gy * (sy * by)
    jac[..., 5] = gy * sy
    return (out.reshape(c, gh, gw),
            jac.reshape(c, gh, gw, 6),
            valid.reshape(gh, gw))

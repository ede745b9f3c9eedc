"""Naive reference fillers used as evaluation baselines.

Both are intentionally simple: per-frame diffusion ignores all temporal
information, and copy-previous propagates yesterday's pixels without any
alignment.  The pipeline's acceptance margins are measured against these.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as kern

DIFFUSION_TOL = 1e-4
DIFFUSION_MAX_ITERS = 8192


def diffusion_fill_frame(frame: np.ndarray, mask: np.ndarray,
                         init: float = 0.5) -> np.ndarray:
    """Fill the hole of one frame by 8-neighbour mean diffusion."""
    planes = np.ascontiguousarray(np.asarray(frame, np.float64).transpose(2, 0, 1))
    known = np.ascontiguousarray((np.asarray(mask) > 0).astype(np.uint8))
    filled = kern.diffusion_fill(planes, known, init, DIFFUSION_TOL,
                                 DIFFUSION_MAX_ITERS)
    return filled.transpose(1, 2, 0).copy()


def diffusion_baseline(frames: list, masks: list) -> list:
    """Per-frame diffusion-only filling (no references, no recurrence)."""
    return [diffusion_fill_frame(f, m) for f, m in zip(frames, masks)]


def copy_previous_baseline(frames: list, masks: list) -> list:
    """Fill each hole with the previous output's pixels at the same location.

    The first frame (no previous) falls back to diffusion.
    """
    outs = []
    for t, (f, m) in enumerate(zip(frames, masks)):
        out = np.asarray(f, np.float64).copy()
        hole = np.asarray(m) == 0
        if t == 0:
            out = diffusion_fill_frame(out, m)
        else:
            out[hole] = outs[t - 1][hole]
        outs.append(out)
    return outs

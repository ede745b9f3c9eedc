"""Masked non-local attention over the unwarped reference stack.

Coarsely filled target cells (the borrow mask) are matched against every
visible reference cell by normalized dot product; the softmax-weighted value
sum is added back as a residual.  Cells outside the borrow mask are returned
bit-identical, and the module has no parameters: the output is a pure
function of its operands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .correspondence import normalize_channels
from .errors import InvalidParameterError, ShapeMismatchError

# attention_map_export refuses query grids above this many cells
MAX_EXPORT_QUERIES = 64 * 64

DEFAULT_TEMPERATURE = 0.07


@dataclass
class AttentionOperands:
    """Flattened query/key/value matrices plus their validity masks.

    Keys and values are the *unwarped* reference features concatenated
    frame-major; q and k are L2-normalized per column, v is raw.
    """

    q: np.ndarray           # (c, Q) normalized
    k: np.ndarray           # (c, K) normalized, K = Q * n_refs
    v: np.ndarray           # (c, K) raw values
    query_mask: np.ndarray  # (Q,) uint8, positions eligible for refinement
    key_valid: np.ndarray   # (K,) uint8, visible reference cells
    grid_shape: tuple       # (h, w) of the query grid
    n_refs: int


def build_attention_operands(x_hat_t: np.ndarray, m_hat: np.ndarray,
                             refs: list, ref_masks: list) -> AttentionOperands:
    """Flatten and normalize the operands of the non-local matching."""
    if len(refs) == 0 or len(refs) != len(ref_masks):
        raise ShapeMismatchError(
            f"got {len(refs)} references and {len(ref_masks)} masks")
    c, h, w = x_hat_t.shape
    for f, m in zip(refs, ref_masks):
        if f.shape != (c, h, w) or m.shape != (h, w):
            raise ShapeMismatchError("reference shape mismatch with target")
    q = normalize_channels(x_hat_t).reshape(c, -1)
    kmat = np.concatenate([normalize_channels(f).reshape(c, -1) for f in refs],
                          axis=1)
    vmat = np.concatenate([np.asarray(f, np.float64).reshape(c, -1)
                           for f in refs], axis=1)
    key_valid = np.concatenate([np.asarray(m).reshape(-1) > 0
                                for m in ref_masks]).astype(np.uint8)
    return AttentionOperands(np.ascontiguousarray(q),
                             np.ascontiguousarray(kmat),
                             np.ascontiguousarray(vmat),
                             np.asarray(m_hat).reshape(-1).astype(np.uint8),
                             key_valid, (h, w), len(refs))


def nonlocal_refine(ops: AttentionOperands, x_hat_t: np.ndarray,
                    temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Add the attention-retrieved residual at every refinable position.

    Positions outside the query mask (or with no valid key anywhere) pass
    through bit-identical.
    """
    if not (temperature > 0.0):
        raise InvalidParameterError(f"temperature must be positive, got {temperature}")
    c, h, w = x_hat_t.shape
    residual, refined = kern.attention_residual(
        ops.q, ops.k, ops.v, ops.key_valid, ops.query_mask, float(temperature))
    out = x_hat_t.reshape(c, -1).copy()
    sel = refined.astype(bool)
    out[:, sel] = out[:, sel] + residual[:, sel]
    return out.reshape(c, h, w)


def attention_map_export(ops: AttentionOperands,
                         temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Full (Q, K) attention weight matrix for diagnostics and decoding.

    Rows of unrefined positions are zero.  Refuses query grids larger than
    64x64 cells (the matrix grows quadratically).
    """
    if not (temperature > 0.0):
        raise InvalidParameterError(f"temperature must be positive, got {temperature}")
    nq = ops.q.shape[1]
    if nq > MAX_EXPORT_QUERIES:
        raise InvalidParameterError(
            f"refusing to export {nq} attention rows (limit {MAX_EXPORT_QUERIES})")
    return kern.attention_weights(ops.q, ops.k, ops.key_valid, ops.query_mask,
                                  float(temperature))

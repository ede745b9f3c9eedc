"""Pure-numpy kernel backend.

Reference implementation of the hot kernels.  The compiled backend in
``_fastcore.pyx`` mirrors these functions one-for-one; where a kernel feeds
integer decisions (block matching, diffusion, bilinear taps) the arithmetic
here is written with the exact same operation order as the C loops so the two
backends produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

# 8-neighbourhood in the fixed order shared with the compiled backend.
_N8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def bilinear_sample_px(src: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Sample ``src`` (c,h,w) at pixel coordinates (px, py), both (N,).

    A sample is valid iff its coordinates lie inside [0, w-1] x [0, h-1];
    the interpolation cell is the floor cell, clamped so that coordinates
    exactly on the far edge use the last interior cell.  Invalid samples
    return 0.  Returns (out (c,N) float64, valid (N,) uint8).
    """
    c, h, w = src.shape
    valid = (px >= 0.0) & (px <= w - 1.0) & (py >= 0.0) & (py <= h - 1.0)

    x0 = np.clip(np.floor(px), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(py), 0, h - 2).astype(np.intp)
    fx = np.clip(px, 0.0, w - 1.0) - x0
    fy = np.clip(py, 0.0, h - 1.0) - y0

    s00 = src[:, y0, x0]
    s01 = src[:, y0, x0 + 1]
    s10 = src[:, y0 + 1, x0]
    s11 = src[:, y0 + 1, x0 + 1]
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    out = w00 * s00 + w01 * s01 + w10 * s10 + w11 * s11
    out[:, ~valid] = 0.0
    return out, valid.astype(np.uint8)


def bilinear_sample_grad_px(src: np.ndarray, px: np.ndarray, py: np.ndarray):
    """As bilinear_sample_px, also returning the analytic spatial gradients.

    gx/gy are the derivatives of the interpolated value w.r.t. px/py using
    the one-sided convention of the (clamped) floor cell; zero on invalid
    samples.  Returns (out, gx, gy, valid).
    """
    c, h, w = src.shape
    valid = (px >= 0.0) & (px <= w - 1.0) & (py >= 0.0) & (py <= h - 1.0)

    x0 = np.clip(np.floor(px), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(py), 0, h - 2).astype(np.intp)
    fx = np.clip(px, 0.0, w - 1.0) - x0
    fy = np.clip(py, 0.0, h - 1.0) - y0

    s00 = src[:, y0, x0]
    s01 = src[:, y0, x0 + 1]
    s10 = src[:, y0 + 1, x0]
    s11 = src[:, y0 + 1, x0 + 1]
    out = (1.0 - fy) * (1.0 - fx) * s00 + (1.0 - fy) * fx * s01 \
        + fy * (1.0 - fx) * s10 + fy * fx * s11
    gx = (1.0 - fy) * (s01 - s00) + fy * (s11 - s10)
    gy = (1.0 - fx) * (s10 - s00) + fx * (s11 - s01)
    bad = ~valid
    out[:, bad] = 0.0
    gx[:, bad] = 0.0
    gy[:, bad] = 0.0
    return out, gx, gy, valid.astype(np.uint8)


def masked_correlation(fr: np.ndarray, ft: np.ndarray,
                       mr: np.ndarray, mt: np.ndarray) -> np.ndarray:
    """Dot products between feature columns, zeroed where either mask is 0.

    fr (c,N), ft (c,M), mr (N,), mt (M,) -> (N,M).
    """
    corr = fr.T @ ft
    corr *= np.outer(mr.astype(np.float64), mt.astype(np.float64))
    return corr


def softmax_columns(scores: np.ndarray, row_valid: np.ndarray,
                    temperature: float):
    """Per-column softmax over the valid rows of ``scores`` (R,C).

    Rows with row_valid == 0 get weight 0 and are excluded from the partition
    function.  Columns with no valid row come back all-zero with their
    col_valid flag cleared.  Returns (out (R,C), col_valid (C,) uint8).
    """
    r, c = scores.shape
    rv = row_valid.astype(bool)
    if not rv.any():
        return np.zeros_like(scores, dtype=np.float64), np.zeros(c, np.uint8)
    s = np.where(rv[:, None], scores / temperature, -np.inf)
    m = s.max(axis=0)
    e = np.exp(s - m)
    e[~rv, :] = 0.0
    out = e / e.sum(axis=0)
    return out, np.ones(c, np.uint8)


def attention_weights(q: np.ndarray, k: np.ndarray, key_valid: np.ndarray,
                      query_sel: np.ndarray, temperature: float) -> np.ndarray:
    """Masked softmax attention weights.

    q (c,Q), k (c,K); rows for unselected queries (query_sel == 0) are zero,
    as are all rows when no key is valid.  Returns (Q,K) float64.
    """
    cq, nq = q.shape
    nk = k.shape[1]
    out = np.zeros((nq, nk), np.float64)
    kv = key_valid.astype(bool)
    qs = query_sel.astype(bool)
    if not kv.any() or not qs.any():
        return out
    s = (q[:, qs].T @ k) / temperature
    s[:, ~kv] = -np.inf
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    e[:, ~kv] = 0.0
    out[qs, :] = e / e.sum(axis=1, keepdims=True)
    return out


def attention_residual(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                       key_valid: np.ndarray, query_sel: np.ndarray,
                       temperature: float):
    """Attention-weighted sum of value columns for the selected queries.

    Returns (residual (c,Q), refined (Q,) uint8); residual columns are zero
    and refined is 0 wherever a query was unselected or no key was valid.
    """
    weights = attention_weights(q, k, key_valid, query_sel, temperature)
    residual = v @ weights.T
    refined = query_sel.astype(bool) & np.bool_(key_valid.any())
    residual[:, ~refined] = 0.0
    return residual, refined.astype(np.uint8)


def block_match(cur: np.ndarray, prev: np.ndarray,
                base_u: np.ndarray, base_v: np.ndarray,
                radius: int, win: int, min_count: int):
    """Integer SSD block matching with a per-pixel starting displacement.

    cur, prev: (ch,h,w).  For each pixel p the win x win block around p in
    ``cur`` is compared against the block around p + base(p) + d in ``prev``
    for every residual d in [-radius, radius]^2; taps falling outside either
    frame are excluded and candidates with fewer than min_count usable taps
    cost +inf.  The mean per-tap squared difference is minimised; ties break
    toward the smallest total displacement |base + d|^2, then lowest
    candidate index (dy-major).  Returns (du, dv) int64 residuals.
    """
    ch, h, w = cur.shape
    hw = win // 2
    side = 2 * radius + 1
    ncand = side * side

    cur_pad = np.zeros((ch, h + 2 * hw, w + 2 * hw), np.float64)
    cur_pad[:, hw:hw + h, hw:hw + w] = cur
    cv_pad = np.zeros((h + 2 * hw, w + 2 * hw), bool)
    cv_pad[hw:hw + h, hw:hw + w] = True

    yy, xx = np.mgrid[0:h, 0:w]
    py0 = yy + base_v
    px0 = xx + base_u

    ssd = np.zeros((ncand, h, w), np.float64)
    cnt = np.zeros((ncand, h, w), np.int64)
    # combined offset e = d + window tap o; accumulating e-major keeps the
    # per-(pixel, candidate) summation in ascending tap order, matching the
    # compiled backend exactly
    rtot = radius + hw
    for ey in range(-rtot, rtot + 1):
        for ex in range(-rtot, rtot + 1):
            sy = py0 + ey
            sx = px0 + ex
            pv = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
            syc = np.clip(sy, 0, h - 1)
            sxc = np.clip(sx, 0, w - 1)
            ptap = prev[:, syc, sxc]
            for dy in range(max(-radius, ey - hw), min(radius, ey + hw) + 1):
                oy = ey - dy
                for dx in range(max(-radius, ex - hw), min(radius, ex + hw) + 1):
                    ox = ex - dx
                    ci = (dy + radius) * side + (dx + radius)
                    ctap = cur_pad[:, hw + oy:hw + oy + h, hw + ox:hw + ox + w]
                    ok = cv_pad[hw + oy:hw + oy + h, hw + ox:hw + ox + w] & pv
                    diff2 = (ctap[0] - ptap[0]) ** 2
                    for chan in range(1, ch):
                        diff2 = diff2 + (ctap[chan] - ptap[chan]) ** 2
                    ssd[ci] = ssd[ci] + np.where(ok, diff2, 0.0)
                    cnt[ci] = cnt[ci] + ok

    costs = np.where(cnt >= min_count, ssd / np.maximum(cnt, 1), np.inf)
    # total displacement per candidate, dy-major ordering
    tot2 = np.empty((ncand, h, w), np.int64)
    ci = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            tu = base_u + dx
            tv = base_v + dy
            tot2[ci] = tu * tu + tv * tv
            ci += 1

    best_cost = costs.min(axis=0)
    elig = costs == best_cost
    big = np.iinfo(np.int64).max
    tot2e = np.where(elig, tot2, big)
    best_tot2 = tot2e.min(axis=0)
    first = np.argmax(elig & (tot2e == best_tot2), axis=0)

    dy_of = first // side - radius
    dx_of = first % side - radius
    return dx_of.astype(np.int64), dy_of.astype(np.int64)


def diffusion_fill(values: np.ndarray, known: np.ndarray, init: float,
                   tol: float, max_iters: int) -> np.ndarray:
    """Jacobi diffusion of the 8-neighbour mean into unknown pixels.

    values (ch,h,w) holds fixed data at known pixels; unknown pixels start at
    ``init`` and are iterated until the largest per-sweep change drops below
    tol (or max_iters sweeps).  Returns the filled copy.
    """
    ch, h, w = values.shape
    kn = known.astype(bool)
    un = ~kn
    out = values.astype(np.float64).copy()
    out[:, un] = init
    if not un.any():
        return out

    # in-bounds neighbour count per pixel (8 interior, 3 at corners)
    cnt = np.zeros((h, w), np.float64)
    inb = np.zeros((h + 2, w + 2), np.float64)
    inb[1:1 + h, 1:1 + w] = 1.0
    for oy, ox in _N8:
        cnt += inb[1 + oy:1 + oy + h, 1 + ox:1 + ox + w]

    padded = np.zeros((ch, h + 2, w + 2), np.float64)
    for _ in range(max_iters):
        padded[:, 1:1 + h, 1:1 + w] = out
        acc = np.zeros((ch, h, w), np.float64)
        for oy, ox in _N8:
            acc = acc + padded[:, 1 + oy:1 + oy + h, 1 + ox:1 + ox + w]
        new = acc / cnt
        delta = np.abs(new[:, un] - out[:, un]).max()
        out[:, un] = new[:, un]
        if delta < tol:
            break
    return out

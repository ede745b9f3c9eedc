"""Recurrent propagation stream: flow, occlusion, composition and blending.

Flow is estimated by deterministic coarse-to-fine block matching: each
pyramid level refines the upsampled coarser estimate by an SSD search over a
fixed radius, ties breaking toward zero total displacement, and the final
field gets a 3x3 median filter.  The estimated backward flow warps the
previous output onto the current frame; a forward/backward consistency test
builds the occlusion mask and a photometric confidence builds the
composition mask used for the final convex blend.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels as kern
from .errors import InvalidParameterError, PyramidError, ShapeMismatchError

FLOW_MAGIC = b"FLO1"

DEFAULT_LEVELS = 3
DEFAULT_RADIUS = 4
DEFAULT_WINDOW = 5

# occlusion test thresholds (forward-backward consistency convention)
OCC_ALPHA = 0.01
OCC_BETA = 0.5

# photometric confidence scale of the composition mask
COMP_SIGMA = 0.2


def _to_planes(img: np.ndarray) -> np.ndarray:
    """(H,W,3) or (H,W) image -> contiguous (c,H,W) float64."""
    img = np.asarray(img, np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def _downsample2(planes: np.ndarray) -> np.ndarray:
    """2x block-mean downsample of (c,h,w), edge-replicating odd sizes."""
    c, h, w = planes.shape
    if h % 2:
        planes = np.concatenate([planes, planes[:, -1:, :]], axis=1)
    if w % 2:
        planes = np.concatenate([planes, planes[:, :, -1:]], axis=2)
    c, h, w = planes.shape
    return planes.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def estimate_flow(prev: np.ndarray, cur: np.ndarray,
                  levels: int = DEFAULT_LEVELS, radius: int = DEFAULT_RADIUS,
                  win: int = DEFAULT_WINDOW) -> np.ndarray:
    """Backward displacement field F with cur(p) ~ prev(p + F(p)).

    Coarse-to-fine block matching: SSD over a (2*radius+1)^2 search window of
    win x win patches, mean-normalized over usable taps, ties toward zero
    displacement; integer estimates are doubled level to level and median
    filtered (3x3) at the end.  Returns (2,H,W) float64 [u, v] in pixels.
    """
    a = _to_planes(prev)
    b = _to_planes(cur)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if levels < 1:
        raise InvalidParameterError(f"levels must be >= 1, got {levels}")
    h, w = a.shape[1:]
    if min(h, w) < (1 << (levels - 1)) * 8:
        raise PyramidError(
            f"{h}x{w} frames are too small for {levels} pyramid levels")

    pyr = [(a, b)]
    for _ in range(levels - 1):
        a = _downsample2(a)
        b = _downsample2(b)
        pyr.append((a, b))

    min_count = max(1, (win * win) // 4)
    base_u = np.zeros(pyr[-1][0].shape[1:], np.int64)
    base_v = np.zeros_like(base_u)
    for lvl in range(levels - 1, -1, -1):
        pa, pb = pyr[lvl]
        du, dv = kern.block_match(np.ascontiguousarray(pb),
                                  np.ascontiguousarray(pa), base_u, base_v,
                                  int(radius), int(win), int(min_count))
        tu = base_u + du
        tv = base_v + dv
        if lvl > 0:
            nh, nw = pyr[lvl - 1][0].shape[1:]
            base_u = np.repeat(np.repeat(2 * tu, 2, 0), 2, 1)[:nh, :nw]
            base_v = np.repeat(np.repeat(2 * tv, 2, 0), 2, 1)[:nh, :nw]

    flow = np.stack([tu, tv]).astype(np.float64)
    flow[0] = ndimage.median_filter(flow[0], size=3, mode="nearest")
    flow[1] = ndimage.median_filter(flow[1], size=3, mode="nearest")
    return flow


def backward_warp(img: np.ndarray, flow: np.ndarray):
    """Bilinear sample of img at p + flow(p).

    Returns (warped, valid); warped matches the layout of img ((H,W,3) or
    (H,W)) and is 0 with valid == 0 where the taps leave the frame.
    """
    planes = _to_planes(img)
    c, h, w = planes.shape
    if flow.shape != (2, h, w):
        raise ShapeMismatchError(f"flow {flow.shape} does not match {h}x{w} frame")
    yy, xx = np.mgrid[0:h, 0:w]
    px = (xx + flow[0]).ravel()
    py = (yy + flow[1]).ravel()
    out, valid = kern.bilinear_sample_px(planes, px, py)
    out = out.reshape(c, h, w)
    valid = valid.reshape(h, w)
    if np.asarray(img).ndim == 2:
        return out[0], valid
    return out.transpose(1, 2, 0), valid


def occlusion_mask(flow_fw: np.ndarray, flow_bw: np.ndarray,
                   alpha: float = OCC_ALPHA, beta: float = OCC_BETA) -> np.ndarray:
    """Forward-backward consistency occlusion test.

    A pixel is non-occluded (mask 1) iff
    |bw(p) + fw(p + bw(p))|^2 < alpha * (|bw(p)|^2 + |fw(p+bw(p))|^2) + beta,
    with out-of-bounds lookups counting as occluded.
    """
    if flow_fw.shape != flow_bw.shape:
        raise ShapeMismatchError("flow shapes differ")
    fw_at_bw, valid = backward_warp(flow_fw.transpose(1, 2, 0), flow_bw)
    fw_at_bw = fw_at_bw.transpose(2, 0, 1)[:2]
    gap = ((flow_bw + fw_at_bw) ** 2).sum(axis=0)
    mag = (flow_bw ** 2).sum(axis=0) + (fw_at_bw ** 2).sum(axis=0)
    ok = (gap < alpha * mag + beta) & (valid > 0)
    return ok.astype(np.uint8)


def composition_mask(prev_warped: np.ndarray, raw_out: np.ndarray,
                     warp_valid: np.ndarray, occl: np.ndarray,
                     hole: np.ndarray, sigma: float = COMP_SIGMA) -> np.ndarray:
    """Per-pixel trust in the warped previous output, in [0, 1].

    Confidence decays exponentially with the mean per-channel intensity gap
    (a gap of ``sigma`` divides trust by e) and is zero wherever the warp is
    invalid or the consistency test flagged occlusion; hole pixels without
    warped support are clamped to zero.
    """
    if prev_warped.shape != raw_out.shape:
        raise ShapeMismatchError("frame shapes differ")
    gap = np.abs(prev_warped - raw_out)
    if gap.ndim == 3:
        gap = gap.mean(axis=2)
    m = (warp_valid > 0) * (occl > 0) * np.exp(-gap / sigma)
    m = np.where((np.asarray(hole) > 0) & (warp_valid == 0), 0.0, m)
    return m


def blend_final(raw_out: np.ndarray, prev_out: np.ndarray, flow: np.ndarray,
                m_prime: np.ndarray) -> np.ndarray:
    """Convex blend of the fresh frame with the flow-warped previous output."""
    warped, _ = backward_warp(prev_out, flow)
    m = np.asarray(m_prime, np.float64)
    if raw_out.ndim == 3:
        m = m[:, :, None]
    return (1.0 - m) * raw_out + m * warped


@dataclass
class WarpingErrorResult:
    value: float
    per_frame: list          # one entry per transition t -> t-1
    empty_frames: list       # transitions whose support was empty


def warping_error(frames: list, flows: list, occl: list) -> WarpingErrorResult:
    """Mean masked L1 gap between frames after flow compensation.

    ``flows[t-1]`` carries frame t back to t-1; the gap is channel-summed L1,
    averaged over non-occluded valid pixels, then averaged over transitions.
    Transitions whose support is empty contribute 0 and are flagged.
    """
    if len(flows) != len(frames) - 1 or len(occl) != len(flows):
        raise ShapeMismatchError(
            f"need T-1 flows and occlusion masks for {len(frames)} frames, "
            f"got {len(flows)} and {len(occl)}")
    per_frame = []
    empty = []
    for t in range(1, len(frames)):
        warped, valid = backward_warp(frames[t - 1], flows[t - 1])
        support = (valid > 0) & (occl[t - 1] > 0)
        if not support.any():
            per_frame.append(0.0)
            empty.append(t)
            continue
        gap = np.abs(np.asarray(frames[t], np.float64) - warped)
        if gap.ndim == 3:
            gap = gap.sum(axis=2)
        per_frame.append(float(gap[support].mean()))
    value = float(np.mean(per_frame)) if per_frame else 0.0
    return WarpingErrorResult(value, per_frame, empty)


def write_flow(path, flow: np.ndarray) -> None:
    """Dump a flow field: b"FLO1", u32 width, u32 height, f32 u then v plane."""
    flow = np.asarray(flow, np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeMismatchError(f"flow must be (2,H,W), got {flow.shape}")
    h, w = flow.shape[1:]
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(flow[0].astype("<f4").tobytes())
        fh.write(flow[1].astype("<f4").tobytes())


def read_flow(path) -> np.ndarray:
    """Inverse of write_flow; returns (2,H,W) float64."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLOW_MAGIC:
            raise InvalidParameterError(f"{path}: bad flow magic {magic!r}")
        w, h = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(2 * 4 * h * w), dtype="<f4")
        if data.size != 2 * h * w:
            raise InvalidParameterError(f"{path}: truncated flow file")
    return data.reshape(2, h, w).astype(np.float64)

"""End-to-end inpainting: reference sampling, alignment, aggregation,
attention, pixel decoding and the recurrent temporal blend.

Frames are processed strictly left to right.  Per frame the pipeline samples
every stride-th frame as references, estimates an affine per reference from
masked feature correlation, aggregates the aligned stack into a coarse fill,
refines borrowed cells with non-local attention, realizes everything at pixel
resolution, and finally blends with the flow-warped previous output.  All
randomness derives from the config seed; reruns are bit-identical.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from . import _kernels as kern
from .aggregation import (align_references, alignment_weights, compose_coarse,
                          temporal_aggregate)
from .alignment import AlignmentParams, estimate_alignment
from .attention import attention_map_export, build_attention_operands
from .errors import (AlignmentError, FramefillError, InvalidParameterError,
                     SequenceError, ShapeMismatchError)
from .features import extract_features, pool_features, downsample_mask
from .geometry import affine_grid, bilinear_sample, warp_mask
from .rng import GENERATOR_SPEC, substream_key
from .temporal import (backward_warp, blend_final, composition_mask,
                       estimate_flow, occlusion_mask, warping_error)

FALLBACK_MODES = ("diffusion", "constant")


@dataclass
class InpaintConfig:
    """Every knob of a run; serializable and echoed into run manifests."""

    ref_stride: int = 10
    max_refs: int = 8
    feature_channels: int = 16
    feature_res: int = 32
    feature_mode: str = "convbank"
    corr_temperature: float = 0.002
    min_confidence: float = 0.1
    ransac_iters: int = 256
    ransac_thresh: float = 0.02
    refine_iters: int = 50
    refine_tol: float = 1e-6
    attention_temperature: float = 0.07
    flow_levels: int = 3
    flow_radius: int = 4
    flow_win: int = 5
    occl_alpha: float = 0.01
    occl_beta: float = 0.5
    comp_sigma: float = 0.2
    fallback: str = "diffusion"
    fallback_value: float = 0.5
    diffusion_tol: float = 1e-4
    diffusion_max_iters: int = 8192
    use_recurrence: bool = True
    seed: int = 0
    threads: int = 1
    backend: str = "auto"

    def __post_init__(self):
        if self.ref_stride < 1:
            raise InvalidParameterError("ref_stride must be >= 1")
        if self.max_refs < 1:
            raise InvalidParameterError("max_refs must be >= 1")
        if self.fallback not in FALLBACK_MODES:
            raise InvalidParameterError(
                f"fallback must be one of {FALLBACK_MODES}, got {self.fallback!r}")
        if self.threads < 1:
            raise InvalidParameterError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "InpaintConfig":
        known = {f.name: f.type for f in dc_fields(cls)}
        kwargs = {}
        for key, val in d.items():
            if key not in known:
                raise InvalidParameterError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, val, getattr(cls, key))
        return cls(**kwargs)


def _coerce(key, val, default):
    """Parse a config value (possibly a string from a config file)."""
    if isinstance(default, bool):
        if isinstance(val, bool):
            return val
        s = str(val).strip().lower()
        if s in ("true", "1", "yes", "on"):
            return True
        if s in ("false", "0", "no", "off"):
            return False
        raise InvalidParameterError(f"cannot parse boolean {key} = {val!r}")
    if isinstance(default, int):
        try:
            return int(str(val).strip(), 0)
        except ValueError as exc:
            raise InvalidParameterError(f"cannot parse integer {key} = {val!r}") from exc
    if isinstance(default, float):
        try:
            return float(val)
        except ValueError as exc:
            raise InvalidParameterError(f"cannot parse number {key} = {val!r}") from exc
    return str(val).strip()


@dataclass
class FrameState:
    """Recurrence carry-over: previous outputs, flow, residual-hole history."""

    outputs: list = field(default_factory=list)   # at most the last two
    last_flow: np.ndarray | None = None
    residual_hole_areas: list = field(default_factory=list)

    def push(self, out: np.ndarray):
        self.outputs.append(out)
        if len(self.outputs) > 2:
            self.outputs.pop(0)

    @property
    def ready(self) -> bool:
        return len(self.outputs) >= 2


def build_reference_set(frames, masks, t: int, cfg: InpaintConfig) -> list:
    """Indices of every stride-th frame (excluding t), capped to the
    max_refs nearest in time."""
    n = len(frames)
    if n == 0:
        raise SequenceError("empty video")
    if not 0 <= t < n:
        raise InvalidParameterError(f"frame index {t} outside [0, {n})")
    cand = [i for i in range(0, n, cfg.ref_stride) if i != t]
    cand.sort(key=lambda i: (abs(i - t), i))
    return sorted(cand[:cfg.max_refs])


class _FeatureCache:
    """Per-run cache of per-frame feature products.

    Stores (correlation features, their mask, pool features, pool mask,
    full-res planes, pixel mask) per frame index.
    """

    def __init__(self, frames, masks, cfg: InpaintConfig):
        self.frames = frames
        self.masks = masks
        self.cfg = cfg
        self._store = {}

    def get(self, idx: int):
        if idx not in self._store:
            cfg = self.cfg
            corr, fmask = extract_features(
                self.frames[idx], self.masks[idx], cfg.feature_res,
                cfg.feature_mode, cfg.feature_channels, cfg.seed)
            pool = pool_features(self.frames[idx], cfg.feature_res)
            pool_mask = downsample_mask(self.masks[idx], cfg.feature_res)
            planes = np.ascontiguousarray(
                np.asarray(self.frames[idx], np.float64).transpose(2, 0, 1))
            pix_mask = np.asarray(self.masks[idx]).astype(np.uint8)
            self._store[idx] = (corr, fmask, pool, pool_mask, planes, pix_mask)
        return self._store[idx]


def pixel_decode(frame, m_full, refs_full, ref_masks_full, thetas,
                 pixel_weights, attn_weights, cfg: InpaintConfig):
    """Realize feature-level assignments at pixel resolution.

    Per-frame aggregation weights are nearest-neighbor upsampled,
    renormalized against the full-resolution warped validity, and applied to
    the warped reference pixels; attention rows retrieve reference patches
    and are blended 50/50 with the coarse fill; pixels no reference ever saw
    go to the fallback fill.  Returns (image, decode_info).
    """
    h, w = frame.shape[:2]
    res = cfg.feature_res
    by, bx = h // res, w // res
    hole = np.asarray(m_full) == 0
    out = np.asarray(frame, np.float64).copy()
    info = {"covered_px": 0, "refined_px": 0, "fallback_px": 0}

    covered = np.zeros((h, w), bool)
    n = len(refs_full)
    if n:
        warped = np.empty((n, h, w, 3))
        valid = np.empty((n, h, w))
        for i in range(n):
            grid = affine_grid(thetas[i], h, w)
            planes = np.ascontiguousarray(
                np.asarray(refs_full[i], np.float64).transpose(2, 0, 1))
            wimg, _ = bilinear_sample(planes, grid)
            warped[i] = wimg.transpose(1, 2, 0)
            valid[i] = warp_mask(ref_masks_full[i], grid)
        a_up = np.repeat(np.repeat(pixel_weights, by, axis=1), bx, axis=2)
        a_eff = a_up * valid
        denom = a_eff.sum(axis=0)
        covered = denom > 1e-12
        coarse = np.einsum("nhw,nhwc->hwc", a_eff, warped)
        coarse[covered] /= denom[covered][:, None]
        sel = hole & covered
        out[sel] = coarse[sel]
        info["covered_px"] = int(sel.sum())

    refined_up = np.zeros((h, w), bool)
    if n and attn_weights is not None:
        row_active = attn_weights.sum(axis=1) > 0.5
        if row_active.any():
            patches = []
            for i in range(n):
                p = np.asarray(refs_full[i], np.float64)
                p = p.reshape(res, by, res, bx, 3).transpose(0, 2, 1, 3, 4)
                patches.append(p.reshape(res * res, by * bx * 3))
            pmat = np.concatenate(patches, axis=0)        # (K, by*bx*3)
            rows = attn_weights[row_active] @ pmat        # (q', by*bx*3)
            retrieved = np.zeros((res * res, by * bx * 3))
            retrieved[np.where(row_active)[0]] = rows
            retrieved = retrieved.reshape(res, res, by, bx, 3)
            retrieved = retrieved.transpose(0, 2, 1, 3, 4).reshape(h, w, 3)
            refined_up = np.repeat(np.repeat(row_active.reshape(res, res),
                                             by, axis=0), bx, axis=1)
            both = hole & refined_up & covered
            only_attn = hole & refined_up & ~covered
            out[both] = 0.5 * (out[both] + retrieved[both])
            out[only_attn] = retrieved[only_attn]
            info["refined_px"] = int((both | only_attn).sum())

    residual = hole & ~covered & ~refined_up
    info["fallback_px"] = int(residual.sum())
    if residual.any():
        if cfg.fallback == "constant":
            out[residual] = cfg.fallback_value
        else:
            planes = np.ascontiguousarray(out.transpose(2, 0, 1))
            known = np.ascontiguousarray((~residual).astype(np.uint8))
            filled = kern.diffusion_fill(planes, known, cfg.fallback_value,
                                         cfg.diffusion_tol,
                                         cfg.diffusion_max_iters)
            out = filled.transpose(1, 2, 0).copy()
    out[hole] = np.clip(out[hole], 0.0, 1.0)
    return out, info


def _align_one(cache: _FeatureCache, t: int, r: int, cfg: InpaintConfig):
    corr_t, mask_t, pool_t, pmask_t, planes_t, pxmask_t = cache.get(t)
    corr_r, mask_r, pool_r, pmask_r, planes_r, pxmask_r = cache.get(r)
    params = AlignmentParams(
        corr_temperature=cfg.corr_temperature,
        min_confidence=cfg.min_confidence,
        ransac_iters=cfg.ransac_iters,
        inlier_thresh=cfg.ransac_thresh,
        refine_iters=cfg.refine_iters,
        refine_tol=cfg.refine_tol,
        seed=substream_key(cfg.seed, "align", t, r)[0],
    )
    stages = [(pool_r, pmask_r, pool_t, pmask_t),
              (planes_r, pxmask_r, planes_t, pxmask_t)]
    return estimate_alignment(corr_r, mask_r, corr_t, mask_t,
                              refine_stages=stages, params=params)


def inpaint_frame(frames, masks, t: int, state: FrameState,
                  cfg: InpaintConfig, cache: _FeatureCache | None = None):
    """Inpaint one frame given the recurrence state.

    Returns (output image, diagnostics dict).  Per-reference alignment
    failures drop that reference with a note; if every reference fails the
    frame falls back to fill-only with a warning.
    """
    frame = np.asarray(frames[t], np.float64)
    m_full = np.asarray(masks[t])
    diag = {"frame": t, "refs": [], "thetas": {}, "frame_dist": {},
            "dropped": {}, "warnings": [], "residual_hole_px": 0,
            "m_prime_mean": 0.0, "blended": False}
    if (m_full > 0).all():
        diag["warnings"] = []
        return frame.copy(), diag

    cache = cache or _FeatureCache(frames, masks, cfg)
    ref_idx = build_reference_set(frames, masks, t, cfg)
    diag["refs"] = list(ref_idx)

    results = {}
    if cfg.threads > 1 and len(ref_idx) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futs = [(r, pool.submit(_align_one, cache, t, r, cfg))
                    for r in ref_idx]
            pairs = [(r, _take(f)) for r, f in futs]
    else:
        pairs = [(r, _take_call(_align_one, cache, t, r, cfg))
                 for r in ref_idx]
    for r, res in pairs:
        if isinstance(res, Exception):
            diag["dropped"][r] = str(res)
        else:
            results[r] = res

    kept = sorted(results)
    corr_t, mask_t = cache.get(t)[:2]
    attn_weights = None
    pixel_weights = np.zeros((0, cfg.feature_res, cfg.feature_res))
    thetas = []
    if kept:
        thetas = [results[r].theta for r in kept]
        for r in kept:
            diag["thetas"][r] = [round(v, 9) for v in results[r].theta.to_array()]
        ref_feats = [cache.get(r)[0] for r in kept]
        ref_fmasks = [cache.get(r)[1] for r in kept]
        stack = align_references(ref_feats, ref_fmasks, thetas)
        weights = alignment_weights(corr_t, mask_t, stack)
        for r, d in zip(kept, weights.frame_dist):
            diag["frame_dist"][r] = float(d)
        x_hat_r, union = temporal_aggregate(stack, weights)
        coarse = compose_coarse(corr_t, mask_t, x_hat_r, union)
        diag["residual_hole_px"] = int(coarse.residual_hole.sum())
        try:
            ops = build_attention_operands(coarse.features, coarse.borrow_mask,
                                           ref_feats, ref_fmasks)
            attn_weights = attention_map_export(ops, cfg.attention_temperature)
        except InvalidParameterError as exc:
            diag["warnings"].append(f"attention skipped: {exc}")
        pixel_weights = weights.pixel
    else:
        diag["warnings"].append("all references failed alignment; fallback fill only")

    refs_full = [frames[r] for r in kept]
    ref_masks_full = [masks[r] for r in kept]
    raw, decode_info = pixel_decode(frame, m_full, refs_full, ref_masks_full,
                                    thetas, pixel_weights, attn_weights, cfg)
    diag.update(decode_info)

    out = raw
    if cfg.use_recurrence and t >= 2 and state.ready:
        prev_out = state.outputs[-1]
        flow_bw = estimate_flow(prev_out, raw, cfg.flow_levels,
                                cfg.flow_radius, cfg.flow_win)
        flow_fw = estimate_flow(raw, prev_out, cfg.flow_levels,
                                cfg.flow_radius, cfg.flow_win)
        occl = occlusion_mask(flow_fw, flow_bw, cfg.occl_alpha, cfg.occl_beta)
        prev_warped, wvalid = backward_warp(prev_out, flow_bw)
        m_prime = composition_mask(prev_warped, raw, wvalid, occl,
                                   (m_full == 0).astype(np.uint8),
                                   cfg.comp_sigma)
        out = blend_final(raw, prev_out, flow_bw, m_prime)
        out = np.clip(out, 0.0, 1.0)
        diag["blended"] = True
        diag["m_prime_mean"] = float(m_prime.mean())
        diag["m_prime_max"] = float(m_prime.max())
        state.last_flow = flow_bw
    return out, diag


def _take(fut):
    try:
        return fut.result()
    except (AlignmentError, FramefillError) as exc:
        return exc


def _take_call(fn, *args):
    try:
        return fn(*args)
    except (AlignmentError, FramefillError) as exc:
        return exc


@dataclass
class RunReport:
    """Everything a run learned about itself."""

    config: dict
    backend: str
    rng_spec: str
    frame_diags: list
    warping_error: float | None
    per_frame_warp: list
    runtime_s: float
    warnings: int

    def manifest_text(self, extra: dict | None = None) -> str:
        lines = ["[framefill run manifest]"]
        for key, val in sorted((extra or {}).items()):
            lines.append(f"{key} = {val}")
        lines.append(f"backend = {self.backend}")
        lines.append(f"rng = {self.rng_spec}")
        for key in sorted(self.config):
            lines.append(f"config.{key} = {self.config[key]}")
        if self.warping_error is not None:
            lines.append(f"output_warping_error = {self.warping_error:.9f}")
        lines.append(f"warnings = {self.warnings}")
        for diag in self.frame_diags:
            t = diag["frame"]
            lines.append(f"frame.{t:05d}.refs = {diag.get('refs', [])}")
            lines.append(f"frame.{t:05d}.dropped = {sorted(diag.get('dropped', {}))}")
            lines.append(f"frame.{t:05d}.residual_hole_px = "
                         f"{diag.get('residual_hole_px', 0)}")
        lines.append(f"runtime_s = {self.runtime_s:.3f}")
        return "\n".join(lines) + "\n"


def inpaint_video(frames, masks, cfg: InpaintConfig):
    """Sequential inpainting pass over a whole sequence.

    Per-frame failures are recorded and processing continues with the input
    frame passed through.  Returns (outputs, RunReport); the report includes
    the output sequence's own flow warping error.
    """
    if len(frames) != len(masks):
        raise SequenceError(
            f"{len(frames)} frames but {len(masks)} masks")
    if not frames:
        raise SequenceError("empty video")
    for i, (f, m) in enumerate(zip(frames, masks)):
        if np.asarray(f).shape[:2] != np.asarray(m).shape:
            raise ShapeMismatchError(f"frame/mask {i} shapes differ")

    kern.use_backend(cfg.backend)
    t0 = time.perf_counter()
    state = FrameState()
    cache = _FeatureCache(frames, masks, cfg)
    outs, diags = [], []
    for t in range(len(frames)):
        try:
            out, diag = inpaint_frame(frames, masks, t, state, cfg, cache)
        except FramefillError as exc:
            out = np.asarray(frames[t], np.float64).copy()
            diag = {"frame": t, "warnings": [f"frame failed: {exc}"],
                    "refs": [], "dropped": {}, "residual_hole_px": 0}
        outs.append(out)
        state.push(out)
        state.residual_hole_areas.append(diag.get("residual_hole_px", 0))
        diags.append(diag)

    warp_val = None
    per_frame_warp = []
    if len(outs) >= 2:
        flows, occls = [], []
        for t in range(1, len(outs)):
            bw = estimate_flow(outs[t - 1], outs[t], cfg.flow_levels,
                               cfg.flow_radius, cfg.flow_win)
            fw = estimate_flow(outs[t], outs[t - 1], cfg.flow_levels,
                               cfg.flow_radius, cfg.flow_win)
            flows.append(bw)
            occls.append(occlusion_mask(fw, bw, cfg.occl_alpha, cfg.occl_beta))
        res = warping_error(outs, flows, occls)
        warp_val = res.value
        per_frame_warp = res.per_frame

    runtime = time.perf_counter() - t0
    n_warn = sum(len(d.get("warnings", [])) for d in diags)
    report = RunReport(cfg.to_dict(), kern.active_backend(), GENERATOR_SPEC,
                       diags, warp_val, per_frame_warp, runtime, n_warn)
    return outs, report

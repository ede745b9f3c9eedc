"""Synthetic fixtures: procedural textures, affine pairs, irregular masks.

Every generator draws from a seeded substream and is deterministic; the mask
rasterizers use integer arithmetic only (no trig, no float rounding) so the
produced masks are bit-identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidParameterError, ShapeMismatchError
from .geometry import AffineParams, affine_grid, base_grid, bilinear_sample, warp_mask
from .rng import substream

# 16 integer step directions for stroke random walks (no trigonometry)
_DIRS = ((4, 0), (4, 2), (3, 3), (2, 4), (0, 4), (-2, 4), (-3, 3), (-4, 2),
         (-4, 0), (-4, -2), (-3, -3), (-2, -4), (0, -4), (2, -4), (3, -3),
         (4, -2))


@dataclass
class AffineRange:
    """Sampling bounds for synthetic transforms (normalized units)."""

    max_translation: float = 0.25
    max_rotation_deg: float = 15.0
    scale_lo: float = 0.8
    scale_hi: float = 1.25
    max_shear: float = 0.1


@dataclass
class MaskGenParams:
    """Knobs of the irregular hole generator."""

    seed: int = 0
    stroke_count: tuple = (2, 6)
    stroke_width: tuple = (3, 9)
    blob_count: tuple = (1, 4)
    dilation_radius: int = 0


def _disk_offsets(radius: int):
    """Integer offsets with dy^2 + dx^2 <= radius^2."""
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dy * dy + dx * dx <= r * r
    return dy[keep], dx[keep]


def disk_footprint(radius: int) -> np.ndarray:
    """Boolean disk structuring element of the given radius."""
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return dy * dy + dx * dx <= r * r


def make_value_noise(h: int, w: int, seed: int, octaves: int = 5,
                     channels: int = 3, rolloff: float = 0.7) -> np.ndarray:
    """Multi-octave bilinear value noise in [0,1], shape (h,w,channels).

    ``rolloff`` scales each octave's amplitude; values near 1 keep more
    high-frequency energy (rougher texture).
    """
    gen = substream(seed, "value-noise")
    total = np.zeros((h, w, channels))
    amp_sum = 0.0
    for o in range(octaves):
        gh = gw = 4 << o
        amp = rolloff ** o
        coarse = gen.uniform(size=(channels, gh, gw))
        up, _ = bilinear_sample(coarse, base_grid(h, w))
        total += amp * up.transpose(1, 2, 0)
        amp_sum += amp
    return total / amp_sum


def make_texture(h: int, w: int, seed: int, shapes: int = 6) -> np.ndarray:
    """Value noise with a few stamped rectangles and disks, in [0.02, 0.98]."""
    img = make_value_noise(h, w, seed)
    gen = substream(seed, "texture-shapes")
    for _ in range(shapes):
        color = gen.uniform(0.1, 0.9, size=3)
        kind = int(gen.integers(0, 2))
        cy = int(gen.integers(0, h))
        cx = int(gen.integers(0, w))
        size = int(gen.integers(max(3, min(h, w) // 24), max(4, min(h, w) // 6)))
        if kind == 0:
            y0, y1 = max(0, cy - size), min(h, cy + size)
            x0, x1 = max(0, cx - size), min(w, cx + size)
            img[y0:y1, x0:x1] = 0.5 * img[y0:y1, x0:x1] + 0.5 * color
        else:
            dy, dx = _disk_offsets(size)
            yy = np.clip(cy + dy, 0, h - 1)
            xx = np.clip(cx + dx, 0, w - 1)
            img[yy, xx] = 0.5 * img[yy, xx] + 0.5 * color
    return np.clip(img, 0.02, 0.98)


def sample_affine(rng_or_seed, rng_range: AffineRange) -> AffineParams:
    """Draw a random transform: rotation * shear * scale plus translation."""
    gen = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) \
        else substream(rng_or_seed, "affine-sample")
    ang = np.deg2rad(gen.uniform(-rng_range.max_rotation_deg,
                                 rng_range.max_rotation_deg))
    scale = gen.uniform(rng_range.scale_lo, rng_range.scale_hi)
    shear = gen.uniform(-rng_range.max_shear, rng_range.max_shear)
    tx = gen.uniform(-rng_range.max_translation, rng_range.max_translation)
    ty = gen.uniform(-rng_range.max_translation, rng_range.max_translation)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    lin = rot @ sh * scale
    return AffineParams(lin[0, 0], lin[0, 1], tx, lin[1, 0], lin[1, 1], ty)


def gen_affine_pair(img: np.ndarray, theta_range: AffineRange | None = None,
                    seed: int = 0):
    """Image pair related by a random affine, plus the ground-truth transform.

    img_B samples img_A on the grid of the drawn transform (zeros where the
    warp leaves the frame; recover the validity mask with
    warp_mask(ones, affine_grid(theta_star))).  Returns (img_A, img_B,
    theta_star).
    """
    rng_range = theta_range or AffineRange()
    theta = sample_affine(substream(seed, "affine-pair"), rng_range)
    h, w = img.shape[:2]
    planes = np.ascontiguousarray(np.asarray(img, np.float64).transpose(2, 0, 1))
    warped, _ = bilinear_sample(planes, affine_grid(theta, h, w))
    return np.asarray(img, np.float64), warped.transpose(1, 2, 0), theta


def _bresenham(y0: int, x0: int, y1: int, x1: int):
    """Integer line rasterization; returns (ys, xs) arrays."""
    points = []
    dy = abs(y1 - y0)
    dx = abs(x1 - x0)
    sy = 1 if y1 >= y0 else -1
    sx = 1 if x1 >= x0 else -1
    err = dx - dy
    y, x = y0, x0
    while True:
        points.append((y, x))
        if y == y1 and x == x1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    ys, xs = zip(*points)
    return np.array(ys), np.array(xs)


def _stamp_disk(hole: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int):
    h, w = hole.shape
    dy, dx = _disk_offsets(radius)
    for oy, ox in zip(dy, dx):
        yy = np.clip(ys + oy, 0, h - 1)
        xx = np.clip(xs + ox, 0, w - 1)
        hole[yy, xx] = 1


def gen_irregular_mask(h: int, w: int, params: MaskGenParams):
    """Random streaks and blobs, integer-rasterized.

    Returns (mask, hole_fraction) with mask in the internal convention
    (1 = visible, 0 = hole).
    """
    if params.stroke_count[0] > params.stroke_count[1] or \
       params.stroke_width[0] > params.stroke_width[1] or \
       params.blob_count[0] > params.blob_count[1]:
        raise InvalidParameterError("mask generator ranges must be nonempty")
    gen = substream(params.seed, "irregular-mask", h, w)
    hole = np.zeros((h, w), np.uint8)

    n_strokes = int(gen.integers(params.stroke_count[0],
                                 params.stroke_count[1] + 1))
    for _ in range(n_strokes):
        width = int(gen.integers(params.stroke_width[0],
                                 params.stroke_width[1] + 1))
        y = int(gen.integers(0, h))
        x = int(gen.integers(0, w))
        d = int(gen.integers(0, len(_DIRS)))
        for _seg in range(int(gen.integers(3, 9))):
            step = int(gen.integers(2, 7))
            ny = y + _DIRS[d][0] * step
            nx = x + _DIRS[d][1] * step
            ys, xs = _bresenham(y, x, ny, nx)
            _stamp_disk(hole, ys, xs, max(1, width // 2))
            y = min(max(ny, 0), h - 1)
            x = min(max(nx, 0), w - 1)
            d = (d + int(gen.integers(-2, 3))) % len(_DIRS)

    n_blobs = int(gen.integers(params.blob_count[0], params.blob_count[1] + 1))
    for _ in range(n_blobs):
        cy = int(gen.integers(0, h))
        cx = int(gen.integers(0, w))
        a = int(gen.integers(2, max(3, h // 8)))
        b = int(gen.integers(2, max(3, w // 8)))
        yy, xx = np.mgrid[max(0, cy - a):min(h, cy + a + 1),
                          max(0, cx - b):min(w, cx + b + 1)]
        inside = ((yy - cy).astype(np.int64) ** 2 * b * b
                  + (xx - cx).astype(np.int64) ** 2 * a * a) <= a * a * b * b
        hole[yy[inside], xx[inside]] = 1

    if params.dilation_radius > 0:
        hole = ndimage.binary_dilation(
            hole, structure=disk_footprint(params.dilation_radius)).astype(np.uint8)
    mask = (1 - hole).astype(np.uint8)
    return mask, float(hole.mean())


def random_affine_mask(m: np.ndarray, theta_range: AffineRange | None = None,
                       seed: int = 0) -> np.ndarray:
    """Warp a visibility mask by a random in-range affine, hole-conservative."""
    rng_range = theta_range or AffineRange()
    theta = sample_affine(substream(seed, "mask-affine"), rng_range)
    h, w = m.shape
    return warp_mask(m, affine_grid(theta, h, w))


def dilate_mask(m: np.ndarray, radius: int) -> np.ndarray:
    """Grow the hole of a visibility mask with a disk structuring element."""
    if radius < 0:
        raise InvalidParameterError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return np.asarray(m).astype(np.uint8)
    hole = np.asarray(m) == 0
    grown = ndimage.binary_dilation(hole, structure=disk_footprint(radius))
    return (~grown).astype(np.uint8)


def _reflect_tile(seq: list, length: int) -> list:
    """Extend a sequence to ``length`` by reflection without endpoint repeats."""
    if len(seq) >= length:
        return list(seq[:length])
    if len(seq) == 1:
        return [seq[0]] * length
    idx = list(range(len(seq))) + list(range(len(seq) - 2, 0, -1))
    return [seq[idx[i % len(idx)]] for i in range(length)]


def composite_eval_video(frames: list, fg_masks: list,
                         dilation_radius: int = 4):
    """Overlay foreground masks as holes onto clean frames.

    fg_masks are binary foreground indicators (nonzero = foreground); the
    hole is the dilated foreground and the clean frames are returned
    untouched as ground truth.  Returns (frames, masks) with masks in the
    internal 1 = visible convention.
    """
    if not frames or not fg_masks:
        raise ShapeMismatchError("composite_eval_video needs nonempty inputs")
    fg = _reflect_tile(fg_masks, len(frames))
    masks = []
    for i, f in enumerate(frames):
        if fg[i].shape != f.shape[:2]:
            raise ShapeMismatchError(
                f"fg mask {i} shape {fg[i].shape} != frame {f.shape[:2]}")
        vis = dilate_mask((fg[i] == 0).astype(np.uint8), dilation_radius)
        masks.append(vis)
    return list(frames), masks


def make_benchmark_video(seed: int = 7, n_frames: int = 24, size: int = 128,
                         hole_size: int = 48, hole_speed: int = 2,
                         tex_speed: tuple = (2, 1)):
    """Translating-texture sequence with a moving square hole.

    The camera window slides over a larger static texture by ``tex_speed``
    (dx, dy) pixels per frame; the hole moves ``hole_speed`` px/frame to the
    right.  Returns (degraded, masks, clean): hole content is zeroed in the
    degraded frames and masks use the 1 = visible convention.
    """
    dx, dy = tex_speed
    big_h = size + abs(dy) * (n_frames - 1)
    big_w = size + abs(dx) * (n_frames - 1)
    big = make_texture(big_h, big_w, seed)
    y0 = 0 if dy >= 0 else abs(dy) * (n_frames - 1)
    x0 = 0 if dx >= 0 else abs(dx) * (n_frames - 1)
    hy = (size - hole_size) // 2
    hx0 = max(0, size // 12)

    clean, masks, degraded = [], [], []
    for t in range(n_frames):
        oy = y0 + dy * t
        ox = x0 + dx * t
        frame = big[oy:oy + size, ox:ox + size].copy()
        m = np.ones((size, size), np.uint8)
        hx = min(hx0 + hole_speed * t, size - hole_size)
        m[hy:hy + hole_size, hx:hx + hole_size] = 0
        deg = frame.copy()
        deg[m == 0] = 0.0
        clean.append(frame)
        masks.append(m)
        degraded.append(deg)
    return degraded, masks, clean

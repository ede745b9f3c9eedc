"""Frame/mask sequence I/O.

Layout on disk: ``frames/%05d.png`` with a parallel ``masks/%05d.png``
directory and a ``sequence.txt`` manifest listing counts and dimensions.
Mask files are grayscale with nonzero = hole; in memory the package uses the
opposite convention (1 = visible), so loaders invert.  Images are 8-bit and
saved with round-half-up quantization, making save/load round trips exact to
1/510 per channel.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import SequenceError

_FRAME_EXTS = (".png", ".ppm")


@dataclass
class SequenceSpec:
    """Locations of a numbered frame directory and optional mask directory."""

    frames_dir: Path
    masks_dir: Path | None = None


def save_image(path, img: np.ndarray) -> None:
    """Write an RGB image in [0,1] as 8-bit with round-half-up quantization."""
    arr = np.floor(np.clip(np.asarray(img), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), np.float64)
    except (OSError, ValueError) as exc:
        raise SequenceError(f"{path}: cannot decode image ({exc})") from exc
    return arr / 255.0


def save_mask(path, m: np.ndarray) -> None:
    """Write a visibility mask as a hole-convention grayscale PNG."""
    hole = ((np.asarray(m) == 0) * 255).astype(np.uint8)
    Image.fromarray(hole, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise SequenceError(f"{path}: cannot decode mask ({exc})") from exc
    return (arr == 0).astype(np.uint8)


def _numbered_files(directory: Path) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise SequenceError(f"{directory}: not a directory")
    files = [p for p in sorted(directory.iterdir())
             if p.suffix.lower() in _FRAME_EXTS
             and re.fullmatch(r"\d+", p.stem)]
    if not files:
        raise SequenceError(f"{directory}: no numbered frame files found")
    return files


def load_sequence(spec: SequenceSpec):
    """Load a frame sequence plus masks (all-visible when no mask dir).

    Returns (frames, masks): lists of (H,W,3) float arrays in [0,1] and
    (H,W) uint8 visibility masks.
    """
    frame_files = _numbered_files(spec.frames_dir)
    frames = [load_image(p) for p in frame_files]
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise SequenceError(
                f"frame {i} has shape {f.shape[:2]}, expected {shape[:2]}")
    if spec.masks_dir is None:
        masks = [np.ones(shape[:2], np.uint8) for _ in frames]
        return frames, masks
    mask_files = _numbered_files(spec.masks_dir)
    if len(mask_files) != len(frame_files):
        raise SequenceError(
            f"{len(frame_files)} frames but {len(mask_files)} masks")
    masks = [load_mask(p) for p in mask_files]
    for i, m in enumerate(masks):
        if m.shape != shape[:2]:
            raise SequenceError(
                f"mask {i} has shape {m.shape}, expected {shape[:2]}")
    return frames, masks


def save_sequence(frames: list, directory) -> None:
    """Write frames as zero-padded numbered PNGs into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_image(directory / f"{i:05d}.png", f)


def save_masks(masks: list, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks):
        save_mask(directory / f"{i:05d}.png", m)


def write_sequence_manifest(root, count: int, h: int, w: int) -> None:
    Path(root, "sequence.txt").write_text(
        f"count = {count}\nheight = {h}\nwidth = {w}\n")


def save_video_bundle(root, frames: list, masks: list | None = None,
                      clean: list | None = None) -> None:
    """Write the standard directory layout (frames/, masks/, optional gt/)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_sequence(frames, root / "frames")
    if masks is not None:
        save_masks(masks, root / "masks")
    if clean is not None:
        save_sequence(clean, root / "gt")
    h, w = frames[0].shape[:2]
    write_sequence_manifest(root, len(frames), h, w)

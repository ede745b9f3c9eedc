"""Kernel backend selection.

Two interchangeable backends implement the hot kernels: a Cython extension
(``_fastcore``) and a pure-numpy reference (``_numpy_impl``).  The compiled
one is picked at import time when present; ``use_backend`` switches at
runtime (the benchmark and the cross-backend tests rely on this).
"""

from __future__ import annotations

from . import _numpy_impl

_BACKENDS = {"numpy": _numpy_impl}

try:
    from . import _fastcore  # type: ignore[attr-defined]
    _BACKENDS["compiled"] = _fastcore
    _active_name = "compiled"
except ImportError:
    _active_name = "numpy"

_active = _BACKENDS[_active_name]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def active_backend() -> str:
    return _active_name


def use_backend(name: str) -> None:
    """Switch the active backend ("numpy", "compiled", or "auto")."""
    global _active, _active_name
    if name == "auto":
        name = "compiled" if "compiled" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    _active_name = name
    _active = _BACKENDS[name]


def bilinear_sample_px(src, px, py):
    return _active.bilinear_sample_px(src, px, py)


def bilinear_sample_grad_px(src, px, py):
    return _active.bilinear_sample_grad_px(src, px, py)


def masked_correlation(fr, ft, mr, mt):
    return _active.masked_correlation(fr, ft, mr, mt)


def softmax_columns(scores, row_valid, temperature):
    return _active.softmax_columns(scores, row_valid, temperature)


def attention_weights(q, k, key_valid, query_sel, temperature):
    return _active.attention_weights(q, k, key_valid, query_sel, temperature)


def attention_residual(q, k, v, key_valid, query_sel, temperature):
    return _active.attention_residual(q, k, v, key_valid, query_sel, temperature)


def block_match(cur, prev, base_u, base_v, radius, win, min_count):
    return _active.block_match(cur, prev, base_u, base_v, radius, win, min_count)


def diffusion_fill(values, known, init, tol, max_iters):
    return _active.diffusion_fill(values, known, init, tol, max_iters)

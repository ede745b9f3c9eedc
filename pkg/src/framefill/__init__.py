"""framefill: deterministic align-and-attend video inpainting.

Fills spatial-temporal holes in a frame sequence by aligning sampled
reference frames with estimated affine transforms, aggregating visible
content with temporal softmax weighting, refining borrowed regions with
masked non-local patch attention, and enforcing temporal consistency with a
recurrent flow-compositing stream.  Entirely deterministic: no learned
components, all randomness flows from a single seed.
"""

from ._kernels import active_backend, available_backends, use_backend
from .geometry import AffineParams, affine_grid, bilinear_sample, warp_mask
from .pipeline import InpaintConfig, inpaint_frame, inpaint_video

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "InpaintConfig",
    "active_backend",
    "affine_grid",
    "available_backends",
    "bilinear_sample",
    "inpaint_frame",
    "inpaint_video",
    "use_backend",
    "warp_mask",
    "__version__",
]

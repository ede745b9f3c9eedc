import numpy as np
import pytest

from framefill.rng import substream


@pytest.fixture
def rng():
    return substream(12345, "tests")


def smooth_map(seed: int, c: int = 2, h: int = 16, w: int = 16,
               coarse: int = 4) -> np.ndarray:
    """Band-limited random feature map (bilinear upsample of a coarse grid)."""
    from framefill.geometry import base_grid, bilinear_sample
    gen = substream(seed, "smooth-map")
    grid = gen.uniform(size=(c, coarse, coarse))
    up, _ = bilinear_sample(grid, base_grid(h, w))
    return up

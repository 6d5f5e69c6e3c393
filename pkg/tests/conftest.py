import numpy as np
import pytest

from mbtrack.imaging import GrayImage
from mbtrack.synthlab import make_preset


@pytest.fixture(scope="session")
def two_body_seq():
    return make_preset("two-body", seed=1)


@pytest.fixture(scope="session")
def checkerboard_seq():
    return make_preset("checkerboard", seed=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def smooth_image(rng):
    """Band-limited random image, differentiable enough for Taylor tests."""
    h = w = 64
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.full((h, w), 0.5)
    for _ in range(6):
        fx, fy = rng.uniform(-0.08, 0.08, 2)
        ph = rng.uniform(0, 2 * np.pi)
        img += 0.07 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    return GrayImage(np.clip(img, 0.0, 1.0))

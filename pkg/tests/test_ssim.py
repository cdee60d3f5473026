import numpy as np
import pytest

from oracles import ssim_oracle
from semicycle.errors import DimensionError
from semicycle.ssim import SsimParams, ssim, ssim_map, window_weights


def gaussian_window():
    g = np.array([np.exp(-((i - 5) ** 2) / 4.5) for i in range(11)])
    w = np.outer(g, g)
    return w / w.sum()


def test_identity_is_one(rng):
    x = rng.uniform(-1, 1, (3, 20, 20))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("window", ["gaussian", "uniform"])
def test_matches_naive_oracle(rng, window):
    a = rng.uniform(-1, 1, (2, 16, 18))
    b = np.clip(a + 0.3 * rng.standard_normal(a.shape), -1, 1)
    w = gaussian_window() if window == "gaussian" else np.full((8, 8), 1 / 64)
    assert ssim(a, b, SsimParams(window)) == pytest.approx(ssim_oracle(a, b, w), abs=1e-8)


def test_window_weights_independent_construction():
    np.testing.assert_allclose(window_weights("gaussian"), gaussian_window(), atol=1e-15)
    with pytest.raises(ValueError):
        window_weights("box")


def test_symmetric_and_bounded(rng):
    a = rng.uniform(-1, 1, (12, 12))
    b = rng.uniform(-1, 1, (12, 12))
    assert ssim(a, b) == pytest.approx(ssim(b, a))
    m = ssim_map(a, b)
    assert m.shape == (2, 2) and np.all(m <= 1 + 1e-12) and np.all(m >= -1 - 1e-12)


def test_degraded_is_lower(rng):
    a = rng.uniform(-1, 1, (16, 16))
    small = ssim(a, a + 0.05 * rng.standard_normal(a.shape))
    large = ssim(a, a + 0.5 * rng.standard_normal(a.shape))
    assert 1 > small > large


def test_shape_errors(rng):
    with pytest.raises(DimensionError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(DimensionError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))

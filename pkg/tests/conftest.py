import numpy as np
import pytest


def random_ball_points(rng, n, d, c, max_radius=0.9):
    """Uniform directions with radii up to max_radius/sqrt(c)."""
    x = rng.normal(size=(n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = rng.uniform(0.0, max_radius / np.sqrt(c), size=(n, 1))
    return x * r


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

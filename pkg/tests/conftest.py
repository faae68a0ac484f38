import numpy as np
import pytest

from ltvm.core import CompositeScan, Config, SensorModel


def scan_from_points(points, origin=(0.0, 0.0), deployment_id=0):
    """Composite scan whose returns land exactly on ``points``, all seen from ``origin``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points - np.asarray(origin, dtype=float)
    rho = np.hypot(d[:, 0], d[:, 1])
    alpha = np.arctan2(d[:, 1], d[:, 0])
    n = len(points)
    return CompositeScan(rho, alpha, np.full(n, origin[0]), np.full(n, origin[1]), np.zeros(n), deployment_id)


def wall_points(a, b, n, noise=0.0, rng=None):
    a, b = np.asarray(a, float), np.asarray(b, float)
    t = np.linspace(0.0, 1.0, n)
    pts = a + t[:, None] * (b - a)
    if noise:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return pts


@pytest.fixture
def config():
    return Config()


@pytest.fixture
def sensor():
    return SensorModel()

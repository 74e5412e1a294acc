import numpy as np
import pytest

from cycleflow.core import PointCloud, ScenePair


def linear_scan_nearest(points, query):
    """Brute-force oracle: (index, squared distance), ties to the lowest index."""
    best, best_d2 = -1, float("inf")
    for i, p in enumerate(points):
        dx, dy, dz = p[0] - query[0], p[1] - query[1], p[2] - query[2]
        d2 = dx * dx + dy * dy + dz * dz
        if d2 < best_d2:
            best, best_d2 = i, d2
    return best, best_d2


def linear_scan_count(points, query, radius):
    n = 0
    for p in points:
        dx, dy, dz = p[0] - query[0], p[1] - query[1], p[2] - query[2]
        if dx * dx + dy * dy + dz * dz <= radius * radius:
            n += 1
    return n


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cloud(*points):
    return PointCloud(np.array(points, dtype=float))


def pair_of(source, target, **kw):
    return ScenePair(cloud(*source), cloud(*target), **kw)

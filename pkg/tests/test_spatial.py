import numpy as np
import pytest

from cycleflow.core import ContractError, PointCloud
from cycleflow.spatial import build_index, count_within_radius, nearest

from conftest import linear_scan_count, linear_scan_nearest


def test_single_point_cloud():
    idx = build_index(PointCloud([[3.0, -1.0, 2.0]]))
    assert nearest(idx, [100.0, 5.0, -7.0])[0] == 0


def test_duplicate_points_tie_to_lowest_index():
    idx = build_index(PointCloud([[0, 0, 0], [0, 0, 0]]))
    assert nearest(idx, [0, 0, 0]) == (0, 0.0)


def test_nearest_examples():
    pts = [[0, 0, 0], [2, 0, 0]]
    i, d2 = nearest(build_index(PointCloud(pts)), [0.4, 0, 0])
    assert (i, d2) == linear_scan_nearest(pts, [0.4, 0, 0])
    assert i == 0 and d2 == pytest.approx(0.16)
    assert nearest(build_index(PointCloud([[1, 1, 1]])), [1, 1, 1]) == (0, 0.0)
    assert nearest(build_index(PointCloud([[0, 0, 0], [1, 0, 0]])), [0.5, 0, 0]) == (0, 0.25)


def test_uniform_cloud_matches_linear_scan(rng):
    pts = rng.uniform(0, 10, size=(1000, 3))
    idx = build_index(PointCloud(pts))
    for q in rng.uniform(-1, 11, size=(200, 3)):
        assert nearest(idx, q) == linear_scan_nearest(pts, q)


def test_ties_on_lattice(rng):
    # lattice points and midpoints give many exact ties
    g = np.arange(4.0)
    pts = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    pts = pts[rng.permutation(len(pts))]
    idx = build_index(PointCloud(pts))
    for q in np.array(np.meshgrid(g + 0.5, g, g - 0.5)).reshape(3, -1).T:
        assert nearest(idx, q) == linear_scan_nearest(pts, q)


def test_count_examples():
    pts = [[0, 0, 0], [0.05, 0, 0], [1, 0, 0]]
    idx = build_index(PointCloud(pts))
    assert count_within_radius(idx, [0, 0, 0], 0.1) == 2 == linear_scan_count(pts, [0, 0, 0], 0.1)
    assert count_within_radius(idx, [1, 0, 0], 0.0) == 1


def test_count_full_containment(rng):
    pts = rng.uniform(-0.1, 0.1, size=(50, 3))
    assert count_within_radius(build_index(PointCloud(pts)), [0, 0, 0], 1.0) == 50


def test_count_boundary_inclusive():
    idx = build_index(PointCloud([[0, 0, 0], [0.5, 0, 0], [0.5000001, 0, 0]]))
    assert count_within_radius(idx, [0, 0, 0], 0.5) == 2


def test_errors():
    with pytest.raises(ContractError):
        build_index(PointCloud(np.zeros((0, 3))))
    idx = build_index(PointCloud([[0, 0, 0]]))
    with pytest.raises(ContractError):
        nearest(idx, [np.nan, 0, 0])
    with pytest.raises(ContractError):
        count_within_radius(idx, [0, 0, 0], -0.1)


def test_squared_distance_consistent(rng):
    pts = rng.normal(size=(300, 3))
    idx = build_index(PointCloud(pts))
    for q in rng.normal(size=(50, 3)):
        i, d2 = nearest(idx, q)
        assert d2 >= 0
        assert d2 == pytest.approx(float(np.sum((pts[i] - q) ** 2)), rel=1e-12, abs=1e-300)

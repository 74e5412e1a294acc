import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cycleflow.core import ContractError, FlowField, PointCloud
from cycleflow.metrics import (
    bin_by_density, bin_by_flow_magnitude, bin_values, error_histogram, evaluate, local_density,
    log_edges, point_errors, pooled_summary, relative_errors,
)
from conftest import linear_scan_count


def test_evaluate_identical():
    d = FlowField([[0.1, 0.2, 0.3], [0, 0, 0]])
    s = evaluate(d, d)
    assert (s.epe_mean, s.acc_strict, s.acc_relax, s.n_points) == (0.0, 1.0, 1.0, 2)


def test_evaluate_single_point_between_thresholds():
    s = evaluate([[1.08, 0, 0]], [[1.0, 0, 0]])
    assert s.epe_mean == pytest.approx(0.08)
    assert s.acc_strict == 0.0 and s.acc_relax == 1.0


def test_evaluate_two_points():
    s = evaluate([[1.04, 0, 0], [0, 1.2, 0]], [[1, 0, 0], [0, 1, 0]])
    assert s.epe_mean == pytest.approx(0.12)
    assert s.acc_strict == 0.5 and s.acc_relax == 0.5


def test_thresholds_are_strict():
    # EPE exactly 0.25 on a 5 m vector: relative 5% is not < 5%, and 0.25 m is not < 0.05 m
    s = evaluate([[5.25, 0, 0]], [[5.0, 0, 0]])
    assert s.acc_strict == 0.0
    s = evaluate([[0.5, 0, 0]], [[0.0, 0, 0]])  # e > 0 on zero motion: relative is infinite
    assert s.acc_relax == 0.0


def test_relative_error_conventions():
    rel = relative_errors(np.array([0.0, 0.5, 0.2]), [[0, 0, 0], [0, 0, 0], [0, 2, 0]])
    assert rel[0] == 0.0 and rel[1] == np.inf and rel[2] == pytest.approx(0.1)


def test_evaluate_errors():
    with pytest.raises(ContractError):
        evaluate(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ContractError):
        evaluate(np.zeros((0, 3)), np.zeros((0, 3)))


flows = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-3, 3), min_size=3 * n, max_size=3 * n),
    st.lists(st.floats(-3, 3), min_size=3 * n, max_size=3 * n),
    st.randoms(use_true_random=False),
))


@given(flows)
@settings(max_examples=60, deadline=None)
def test_evaluate_properties(data):
    a, b, rnd = data
    a, b = np.reshape(a, (-1, 3)), np.reshape(b, (-1, 3))
    s = evaluate(a, b)
    assert 0 <= s.acc_strict <= s.acc_relax <= 1
    assert evaluate(a, a).epe_mean == 0.0
    perm = list(range(len(a)))
    rnd.shuffle(perm)
    assert evaluate(a[perm], b[perm]).epe_mean == pytest.approx(s.epe_mean, rel=1e-12)


def test_magnitude_bins():
    r = bin_by_flow_magnitude([0.1, 0.2, 0.3], [[0.5, 0, 0]] * 3, [0, 1])
    assert r.counts == (3,) and r.means[0] == pytest.approx(0.2)

    r = bin_by_flow_magnitude([0.1, 0.3], [[0.5, 0, 0], [0, 1.5, 0]], [0, 1, 2])
    assert r.counts == (1, 1)
    assert r.means == pytest.approx((0.1, 0.3))
    assert r.half_widths == (0.0, 0.0)

    r = bin_by_flow_magnitude([0.7], [[1.0, 0, 0]], [0, 1, 2])
    assert r.counts == (0, 1) and r.means[0] is None


def test_confidence_half_width():
    r = bin_values([1.0, 2.0, 3.0, 4.0], [0.5] * 4, [0, 1])
    s = np.std([1.0, 2.0, 3.0, 4.0], ddof=1)
    assert r.half_widths[0] == pytest.approx(1.96 * s / 2.0)


def test_bin_errors():
    with pytest.raises(ContractError):
        bin_values([1.0], [0.5], [1, 0])
    with pytest.raises(ContractError):
        bin_values([1.0], [0.5], [0])
    with pytest.raises(ContractError):
        bin_values([1.0, 2.0], [0.5], [0, 1])
    r = bin_values([1.0, 2.0, 3.0], [-1, 0.5, 7], [0, 1])
    assert (r.underflow, r.counts, r.overflow, r.total) == (1, (1,), 1, 3)


def test_density_three_points():
    cloud = PointCloud([[0, 0, 0], [0.05, 0, 0], [1, 0, 0]])
    np.testing.assert_array_equal(local_density(cloud, 0.1), [2, 2, 1])
    expected = [linear_scan_count(cloud.positions, q, 0.1) for q in cloud.positions]
    assert list(local_density(cloud)) == expected
    r = bin_by_density([0.1, 0.3, 0.5], cloud, 0.1, edges=[0, 1, 2, 3, 4])
    assert r.counts == (0, 1, 2, 0)
    assert r.means[0] is None and r.means[3] is None
    assert r.means[1] == 0.5 and r.means[2] == pytest.approx(0.2)
    with pytest.raises(ContractError):
        local_density(cloud, 0.0)


def test_density_grid_interior():
    g = np.arange(10) * 0.08
    cloud = PointCloud(np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3))
    dens = local_density(cloud, 0.1)
    interior = np.all((cloud.positions > 0.01) & (cloud.positions < 0.7), axis=1)
    assert len(set(dens[interior])) == 1 and dens[interior][0] == 7
    r = bin_by_density(np.ones(len(cloud)), cloud)
    assert r.total == len(cloud)


def test_histogram_examples():
    assert error_histogram([0.001], 10, 0.01).underflow == 1
    r = error_histogram([0.01, 0.1, 1.0], 1, 0.01)
    assert r.counts[:3] == (1, 1, 1) and sum(r.counts) == 3
    assert r.bin_edges[:3] == pytest.approx((0.01, 0.1, 1.0))
    np.testing.assert_allclose(log_edges(1e-3, 10, 1.0)[:11], 1e-3 * 10 ** (np.arange(11) / 10))
    with pytest.raises(ContractError):
        error_histogram([-0.1])


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=200), st.integers(1, 20))
@settings(max_examples=60, deadline=None)
def test_histogram_conserves_count(errors, bpd):
    assert error_histogram(errors, bpd).total == len(errors)


def test_point_errors_and_pooling():
    np.testing.assert_allclose(point_errors([[3, 4, 0]], [[0, 0, 0]]), [5.0])
    a = evaluate([[0, 0, 0]], [[1, 0, 0]])
    b = evaluate([[0, 0, 0]] * 3, [[0, 0, 0]] * 3)
    pooled = pooled_summary([a, b])
    assert pooled.n_points == 4 and pooled.epe_mean == 0.25 and pooled.acc_strict == 0.75
    assert pooled_summary([]) is None

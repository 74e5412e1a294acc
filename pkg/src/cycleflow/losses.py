"""Supervised, nearest-neighbor and anchored cycle-consistency losses.

Every loss returns its value together with analytic gradients with respect to
the flow variables. Nearest-neighbor assignments are held fixed while
differentiating, so the gradients are exact for the piecewise-quadratic
surface the assignment selects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import ContractError, FlowField, LossReport, PointCloud
from .spatial import NeighborIndex, squared_distances


class SupervisedResult(NamedTuple):
    loss: float
    grad: np.ndarray


class NNResult(NamedTuple):
    loss: float
    grad: np.ndarray
    nn_indices: np.ndarray
    residuals: np.ndarray  # per-point squared distance to the assigned neighbor


class CycleResult(NamedTuple):
    loss: float
    grad_forward: np.ndarray
    grad_reverse: np.ndarray
    residuals: np.ndarray  # per-point squared cycle error


class CombinedResult(NamedTuple):
    report: LossReport
    grad_forward: np.ndarray
    grad_reverse: np.ndarray
    anchored: "AnchoredState"


@dataclass(frozen=True)
class AnchoredState:
    predicted: PointCloud
    nn_indices: np.ndarray
    anchors: PointCloud
    lam: float


def _as_array(flow) -> np.ndarray:
    return flow.displacements if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)


def supervised_loss(predicted, gt) -> SupervisedResult:
    """Mean squared distance between predicted and true displacements."""
    d_hat, d_star = _as_array(predicted), _as_array(gt)
    if d_hat.shape != d_star.shape:
        raise ContractError(f"predicted length {len(d_hat)} != ground truth length {len(d_star)}")
    n = len(d_hat)
    if n == 0:
        raise ContractError("supervised loss needs at least one point")
    diff = d_hat - d_star
    loss = float(np.sum(squared_distances(diff, 0.0)) / n)
    return SupervisedResult(loss, (2.0 / n) * diff)


def nn_loss(
    source: PointCloud,
    flow,
    target_index: NeighborIndex,
    nn_indices: Optional[np.ndarray] = None,
) -> NNResult:
    """Mean squared distance from each flowed source point to its nearest target point.

    Passing ``nn_indices`` skips the search and evaluates the loss under that
    fixed assignment (used by finite-difference checks).
    """
    d = _as_array(flow)
    n = len(source)
    if d.shape != (n, 3):
        raise ContractError(f"flow length {len(d)} != source point count {n}")
    moved = source.positions + d
    if nn_indices is None:
        nn_indices, _ = target_index.nearest_many(moved)
    else:
        nn_indices = np.asarray(nn_indices, dtype=np.int64)
    diff = moved - target_index.points[nn_indices]
    residuals = squared_distances(diff, 0.0)
    loss = float(np.sum(residuals) / n)
    return NNResult(loss, (2.0 / n) * diff, nn_indices, residuals)


def anchor_points(predicted, target: PointCloud, nn_indices, lam: float) -> AnchoredState:
    """Blend each predicted point with its nearest target point: lam * p + (1 - lam) * y."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda must be in [0, 1], got {lam}")
    if not isinstance(predicted, PointCloud):
        predicted = PointCloud(predicted)
    nn_indices = np.asarray(nn_indices, dtype=np.int64)
    if nn_indices.shape != (len(predicted),):
        raise ContractError("nn_indices must hold one index per predicted point")
    if len(nn_indices) and (nn_indices.min() < 0 or nn_indices.max() >= len(target)):
        raise ContractError("nn_indices out of range for target")
    anchors = lam * predicted.positions + (1.0 - lam) * target.positions[nn_indices]
    return AnchoredState(predicted, nn_indices, PointCloud(anchors), float(lam))


def cycle_loss(source: PointCloud, anchored: AnchoredState, reverse_flow) -> CycleResult:
    """Mean squared distance between anchors carried back by the reverse flow and the source.

    ``grad_forward`` is the gradient reaching the forward flow through the
    anchors (scaled by lambda); a reverse estimator that depends on its input
    positions must add its own input-gradient term on top.
    """
    r_flow = _as_array(reverse_flow)
    n = len(source)
    if len(anchored.anchors) != n or r_flow.shape != (n, 3):
        raise ContractError(
            f"cycle inputs disagree: source {n}, anchors {len(anchored.anchors)}, reverse {len(r_flow)}"
        )
    returned = anchored.anchors.positions + r_flow
    resid = returned - source.positions
    per_point = squared_distances(resid, 0.0)
    loss = float(np.sum(per_point) / n)
    grad_reverse = (2.0 / n) * resid
    return CycleResult(loss, anchored.lam * grad_reverse, grad_reverse, per_point)


def combined_loss(
    source: PointCloud,
    flow,
    target_index: NeighborIndex,
    reverse_flow,
    lam: float,
    *,
    use_nn: bool = True,
    use_cycle: bool = True,
    nn_indices: Optional[np.ndarray] = None,
    gt_flow=None,
) -> CombinedResult:
    """NN loss, anchoring and cycle loss in sequence; returns the summed report and gradients.

    Disabled terms contribute zero loss and zero gradient. The NN search still
    runs when only the cycle term is enabled because the anchors need it.
    """
    nn = nn_loss(source, flow, target_index, nn_indices)
    predicted = PointCloud(source.positions + _as_array(flow))
    anchored = anchor_points(predicted, target_index.cloud, nn.nn_indices, lam)
    cyc = cycle_loss(source, anchored, reverse_flow)
    n = len(source)

    nn_value = nn.loss if use_nn else 0.0
    cyc_value = cyc.loss if use_cycle else 0.0
    grad_f = np.zeros((n, 3))
    grad_r = np.zeros((n, 3))
    if use_nn:
        grad_f = grad_f + nn.grad
    if use_cycle:
        grad_f = grad_f + cyc.grad_forward
        grad_r = grad_r + cyc.grad_reverse
    supervised = None
    if gt_flow is not None:
        supervised = supervised_loss(flow, gt_flow).loss
    report = LossReport(
        nn_loss=nn_value,
        cycle_loss=cyc_value,
        combined=nn_value + cyc_value,
        supervised=supervised,
        per_point_nn_residual=nn.residuals,
        per_point_cycle_residual=cyc.residuals,
    )
    return CombinedResult(report, grad_f, grad_r, anchored)

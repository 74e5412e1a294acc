"""Domain types: point clouds, flow fields, scene pairs, solver settings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called with inputs that break its preconditions."""


def _frozen_array(values, width: Optional[int], name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, width or 0)
    if arr.ndim != 2 or (width is not None and arr.shape[1] != width):
        want = f"(n, {width})" if width is not None else "(n, c)"
        raise ContractError(f"{name} must have shape {want}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered 3D points in meters, with optional per-point feature channels.

    Shapes are enforced on construction. Finiteness and non-emptiness are
    reported by :func:`validate_scene_pair` and enforced by the operations
    that need them, so malformed clouds can still be inspected.
    """

    positions: np.ndarray
    features: Optional[np.ndarray] = None
    frame_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen_array(self.positions, 3, "positions"))
        if self.features is not None:
            feats = _frozen_array(self.features, None, "features")
            if feats.shape[0] != self.positions.shape[0]:
                raise ContractError(
                    f"feature count {feats.shape[0]} != position count {self.positions.shape[0]}"
                )
            object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.positions).all())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        if self.frame_id != other.frame_id:
            return False
        if not np.array_equal(self.positions, other.positions):
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)


@dataclass(frozen=True, eq=False)
class FlowField:
    """One displacement vector (meters) per point of a source cloud."""

    displacements: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "displacements", _frozen_array(self.displacements, 3, "displacements")
        )

    def __len__(self) -> int:
        return self.displacements.shape[0]

    def __neg__(self) -> "FlowField":
        return FlowField(-self.displacements)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.displacements, other.displacements)

    @classmethod
    def zeros(cls, n: int) -> "FlowField":
        return cls(np.zeros((n, 3)))


@dataclass(frozen=True)
class ScenePair:
    """Source cloud at time t, target cloud at t+1, optional ground truth.

    ``gt_flow`` is defined over the source points; ``gt_reverse_flow`` over the
    target points. Source and target sizes may differ.
    """

    source: PointCloud
    target: PointCloud
    gt_flow: Optional[FlowField] = None
    gt_reverse_flow: Optional[FlowField] = None
    scene_id: str = ""


@dataclass(frozen=True)
class SolverConfig:
    lambda_anchor: float = 0.5
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_iterations: int = 10000
    flip_augmentation: bool = False
    estimator_kind: str = "direct"
    mlp_hidden_sizes: tuple = (32, 32)
    rng_seed: int = 0
    convergence_tolerance: float = 1e-9
    convergence_window: int = 50
    # ablation toggles; use_anchor=False means lambda is forced to 1
    use_nn_loss: bool = True
    use_cycle_loss: bool = True
    use_anchor: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lambda_anchor <= 1.0:
            raise ContractError(f"lambda_anchor must be in [0, 1], got {self.lambda_anchor}")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ContractError(f"{name} must be in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ContractError("adam_epsilon must be > 0")
        if int(self.max_iterations) < 1:
            raise ContractError("max_iterations must be a positive integer")
        if self.estimator_kind not in ("direct", "mlp"):
            raise ContractError(f"unknown estimator_kind {self.estimator_kind!r}")
        object.__setattr__(self, "mlp_hidden_sizes", tuple(int(h) for h in self.mlp_hidden_sizes))
        if any(h < 1 for h in self.mlp_hidden_sizes):
            raise ContractError("mlp_hidden_sizes must be positive")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ContractError("rng_seed must fit in an unsigned 64-bit integer")
        if self.convergence_tolerance < 0:
            raise ContractError("convergence_tolerance must be >= 0")
        if self.use_anchor and not self.use_cycle_loss:
            raise ContractError("anchoring requires the cycle loss")

    @property
    def effective_lambda(self) -> float:
        return self.lambda_anchor if self.use_anchor else 1.0


@dataclass
class LossReport:
    nn_loss: float
    cycle_loss: float
    combined: float
    supervised: Optional[float] = None
    per_point_nn_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    per_point_cycle_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def same_as(self, other: "LossReport") -> bool:
        """Bit-level equality, used by determinism checks."""
        return (
            self.nn_loss == other.nn_loss
            and self.cycle_loss == other.cycle_loss
            and self.combined == other.combined
            and self.supervised == other.supervised
            and np.array_equal(self.per_point_nn_residual, other.per_point_nn_residual)
            and np.array_equal(self.per_point_cycle_residual, other.per_point_cycle_residual)
        )


def apply_flow(cloud: PointCloud, flow: FlowField) -> PointCloud:
    """Displace every point of ``cloud`` by the matching vector of ``flow``."""
    if len(flow) != len(cloud):
        raise ContractError(
            f"flow length {len(flow)} does not match cloud point count {len(cloud)}"
        )
    return PointCloud(cloud.positions + flow.displacements, cloud.features, cloud.frame_id)


def validate_scene_pair(pair: ScenePair) -> list[str]:
    """Return a list of violations; an empty list means the pair is well formed."""
    problems = []
    for role, cloud in (("source", pair.source), ("target", pair.target)):
        if len(cloud) == 0:
            problems.append(f"empty cloud: {role}")
        elif not cloud.is_finite():
            problems.append(f"non-finite position in {role}")
        if cloud.features is not None and not np.isfinite(cloud.features).all():
            problems.append(f"non-finite feature in {role}")
    for name, flow, cloud in (
        ("gt_flow", pair.gt_flow, pair.source),
        ("gt_reverse_flow", pair.gt_reverse_flow, pair.target),
    ):
        if flow is None:
            continue
        if len(flow) != len(cloud):
            problems.append(f"{name} length {len(flow)} != point count {len(cloud)}")
        if not np.isfinite(flow.displacements).all():
            problems.append(f"non-finite displacement in {name}")
    return problems

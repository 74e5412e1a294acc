"""Flow estimators and the forward/anchor/reverse cycle they are trained through.

Two parameterizations are provided. ``direct`` keeps one free displacement per
point; ``mlp`` is a small tanh network from position to displacement with a
hand-written backward pass. Both keep separate parameters for the forward and
reverse directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Protocol

import numpy as np

from .core import ContractError, FlowField, LossReport, ScenePair
from .losses import AnchoredState, anchor_points, combined_loss
from .spatial import NeighborIndex

DIRECTIONS = ("forward", "reverse")


def _check_direction(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ContractError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return direction


# --------------------------------------------------------------------------
# direct parameterization

@dataclass
class DirectFlowParams:
    forward: np.ndarray
    reverse: np.ndarray

    def __post_init__(self):
        self.forward = np.array(self.forward, dtype=np.float64).reshape(-1, 3)
        self.reverse = np.array(self.reverse, dtype=np.float64).reshape(-1, 3)
        if self.forward.shape != self.reverse.shape:
            raise ContractError(
                f"forward ({len(self.forward)}) and reverse ({len(self.reverse)}) lengths differ"
            )

    @classmethod
    def zeros(cls, n: int) -> "DirectFlowParams":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)))

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"forward": self.forward, "reverse": self.reverse}


def predict_direct(params: DirectFlowParams, direction: str) -> FlowField:
    return FlowField(getattr(params, _check_direction(direction)))


# --------------------------------------------------------------------------
# coordinate MLP

@dataclass
class MlpParams:
    """Weights ``W`` (fan_out x fan_in) and biases per layer, one stack per direction."""

    forward: list
    reverse: list

    def __post_init__(self):
        for direction in DIRECTIONS:
            layers = [
                (np.array(w, dtype=np.float64), np.array(b, dtype=np.float64))
                for w, b in getattr(self, direction)
            ]
            width = 3
            for k, (w, b) in enumerate(layers):
                if w.ndim != 2 or w.shape[1] != width or b.shape != (w.shape[0],):
                    raise ContractError(
                        f"{direction} layer {k}: weight {w.shape} / bias {b.shape} do not chain from width {width}"
                    )
                width = w.shape[0]
            if not layers or width != 3:
                raise ContractError(f"{direction} network must end in 3 outputs")
            setattr(self, direction, layers)

    @classmethod
    def initialize(cls, hidden_sizes, rng: np.random.Generator) -> "MlpParams":
        """Glorot-uniform weights, zero biases; forward stack drawn before reverse."""
        sizes = [3, *hidden_sizes, 3]
        stacks = {}
        for direction in DIRECTIONS:
            layers = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                a = np.sqrt(6.0 / (fan_in + fan_out))
                layers.append((rng.uniform(-a, a, size=(fan_out, fan_in)), np.zeros(fan_out)))
            stacks[direction] = layers
        return cls(stacks["forward"], stacks["reverse"])

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for direction in DIRECTIONS:
            for k, (w, b) in enumerate(getattr(self, direction)):
                out[f"{direction}.W{k}"] = w
                out[f"{direction}.b{k}"] = b
        return out


@dataclass
class ActivationRecord:
    direction: str
    inputs: np.ndarray
    pre: list          # pre-activations of every layer
    post: list         # tanh outputs of hidden layers
    weights: list = field(repr=False, default_factory=list)  # snapshot for staleness checks


def mlp_forward(params: MlpParams, positions, direction: str):
    """Evaluate one direction's network on every position.

    Returns the flow and an :class:`ActivationRecord` for :func:`mlp_backward`.
    """
    layers = getattr(params, _check_direction(direction))
    x = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    h = x
    pre, post = [], []
    for k, (w, b) in enumerate(layers):
        z = h @ w.T + b
        pre.append(z)
        if k < len(layers) - 1:
            h = np.tanh(z)
            post.append(h)
        else:
            h = z
    record = ActivationRecord(direction, x, pre, post, [w.copy() for w, _ in layers])
    return FlowField(h), record


def mlp_backward(params: MlpParams, record: ActivationRecord, upstream):
    """Reverse-mode gradients of ``sum_i <upstream_i, output_i>``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is keyed like
    :meth:`MlpParams.named_arrays` (only this record's direction) and
    ``input_grad`` is the gradient with respect to the input positions.
    """
    layers = getattr(params, record.direction)
    if len(layers) != len(record.weights) or any(
        w.shape != w0.shape or not np.array_equal(w, w0) for (w, _), w0 in zip(layers, record.weights)
    ):
        raise ContractError("activation record does not match the current parameters")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != record.pre[-1].shape:
        raise ContractError(f"upstream shape {g.shape} != output shape {record.pre[-1].shape}")
    grads = {}
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        below = record.post[k - 1] if k > 0 else record.inputs
        grads[f"{record.direction}.W{k}"] = g.T @ below
        grads[f"{record.direction}.b{k}"] = g.sum(axis=0)
        g = g @ w
        if k > 0:
            g = g * (1.0 - record.post[k - 1] ** 2)
    return grads, g


# --------------------------------------------------------------------------
# estimator interface

class FlowEstimator(Protocol):
    kind: str

    def init_params(self, n_source: int, rng: np.random.Generator): ...

    def predict(self, params, positions: np.ndarray, direction: str): ...

    def backward(self, params, record, upstream: np.ndarray): ...

    def parameter_count(self, params) -> int: ...


class DirectEstimator:
    kind = "direct"

    def init_params(self, n_source: int, rng=None) -> DirectFlowParams:
        return DirectFlowParams.zeros(n_source)

    def predict(self, params: DirectFlowParams, positions, direction):
        flow = getattr(params, _check_direction(direction))
        if len(positions) != len(flow):
            raise ContractError(f"{len(positions)} points but {len(flow)} {direction} flow vectors")
        return flow, direction

    def backward(self, params, record, upstream):
        return {record: np.asarray(upstream, dtype=np.float64)}, None

    def parameter_count(self, params) -> int:
        return sum(a.size for a in params.named_arrays().values())


class MlpEstimator:
    kind = "mlp"

    def __init__(self, hidden_sizes=(32, 32)):
        self.hidden_sizes = tuple(hidden_sizes)

    def init_params(self, n_source: int, rng: np.random.Generator) -> MlpParams:
        return MlpParams.initialize(self.hidden_sizes, rng)

    def predict(self, params, positions, direction):
        flow, record = mlp_forward(params, positions, direction)
        return flow.displacements, record

    def backward(self, params, record, upstream):
        return mlp_backward(params, record, upstream)

    def parameter_count(self, params) -> int:
        return sum(a.size for a in params.named_arrays().values())


def make_estimator(kind: str, hidden_sizes=(32, 32)) -> FlowEstimator:
    if kind == "direct":
        return DirectEstimator()
    if kind == "mlp":
        return MlpEstimator(hidden_sizes)
    raise ContractError(f"unknown estimator kind {kind!r}")


class CycleRun(NamedTuple):
    forward_flow: FlowField
    anchored: AnchoredState
    reverse_flow: FlowField
    report: LossReport
    grads: dict


def run_cycle(
    estimator: FlowEstimator,
    params,
    pair: ScenePair,
    target_index: NeighborIndex,
    lam: float,
    *,
    swap: bool = False,
    use_nn: bool = True,
    use_cycle: bool = True,
    nn_indices: Optional[np.ndarray] = None,
) -> CycleRun:
    """One forward / anchor / reverse pass with gradients for every parameter.

    ``swap`` runs the reverse-direction parameters as the forward leg and vice
    versa, which is how a time-flipped pair reuses a shared MLP.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda must be in [0, 1], got {lam}")
    fwd_dir, rev_dir = ("reverse", "forward") if swap else ("forward", "reverse")
    source = pair.source
    d_fwd, rec_fwd = estimator.predict(params, source.positions, fwd_dir)
    if len(d_fwd) != len(source):
        raise ContractError(f"estimator produced {len(d_fwd)} vectors for {len(source)} points")
    # the reverse pass runs at the anchors, which need the NN assignment first
    if nn_indices is None:
        nn_indices, _ = target_index.nearest_many(source.positions + d_fwd)
    anchors = anchor_points(source.positions + d_fwd, target_index.cloud, nn_indices, lam)
    d_rev, rec_rev = estimator.predict(params, anchors.anchors.positions, rev_dir)
    result = combined_loss(
        source, d_fwd, target_index, d_rev, lam,
        use_nn=use_nn, use_cycle=use_cycle, nn_indices=nn_indices, gt_flow=pair.gt_flow,
    )

    rev_grads, anchor_grad = estimator.backward(params, rec_rev, result.grad_reverse)
    upstream_fwd = result.grad_forward
    if anchor_grad is not None and use_cycle:
        upstream_fwd = upstream_fwd + lam * anchor_grad
    fwd_grads, _ = estimator.backward(params, rec_fwd, upstream_fwd)

    grads = {name: np.zeros_like(a) for name, a in params.named_arrays().items()}
    for part in (fwd_grads, rev_grads):
        for name, g in part.items():
            grads[name] = grads[name] + g
    return CycleRun(FlowField(d_fwd), result.anchored, FlowField(d_rev), result.report, grads)

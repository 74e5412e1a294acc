"""Adam, the per-scene-pair fitting loop, and temporal flip augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import ContractError, FlowField, ScenePair, SolverConfig, validate_scene_pair
from .model import DirectEstimator, make_estimator, run_cycle
from .spatial import build_index

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.parameter = name


@dataclass
class AdamState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(state: AdamState, params: dict, grads: dict, config: SolverConfig):
    """Bias-corrected Adam update, applied in place to ``params``.

    ``params`` and ``grads`` map names to arrays. Every gradient is checked
    before anything is modified, so a rejected step leaves state untouched.
    """
    for name, g in grads.items():
        if name not in params or np.shape(g) != params[name].shape:
            raise ContractError(f"gradient {name!r} does not match any parameter shape")
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, g in grads.items():
        m = state.first_moment.setdefault(name, np.zeros_like(params[name]))
        v = state.second_moment.setdefault(name, np.zeros_like(params[name]))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        params[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return state, params


def flip_pair(pair: ScenePair) -> ScenePair:
    """Swap source and target, reversing time; ground-truth fields swap with them."""
    return ScenePair(
        source=pair.target,
        target=pair.source,
        gt_flow=pair.gt_reverse_flow,
        gt_reverse_flow=pair.gt_flow,
        scene_id=pair.scene_id,
    )


class TraceRecord(NamedTuple):
    iteration: int
    leg: int  # 0 = original pair, 1 = flipped pair
    nn_loss: float
    cycle_loss: float
    combined: float


@dataclass
class FitTrace:
    records: list
    flow: FlowField
    iterations_run: int
    converged: bool
    failure: Optional[str] = None

    def combined(self) -> np.ndarray:
        return np.array([r.combined for r in self.records])

    def same_as(self, other: "FitTrace") -> bool:
        return (
            self.records == other.records
            and self.flow == other.flow
            and self.iterations_run == other.iterations_run
            and self.converged == other.converged
            and self.failure == other.failure
        )


class _Leg(NamedTuple):
    pair: ScenePair
    index: object
    params: object
    state: AdamState
    swap: bool


def fit_scene_pair(pair: ScenePair, config: SolverConfig = SolverConfig()) -> FitTrace:
    """Optimize the self-supervised objective on one scene pair.

    With flip augmentation, even iterations use the pair and odd iterations
    its time reversal. The MLP estimator shares its two networks between the
    legs (the flipped leg's forward network is the original reverse network);
    the direct estimator cannot share per-point variables across clouds of
    different sizes and keeps one independent parameter set per leg.
    """
    problems = validate_scene_pair(pair)
    if problems:
        raise ContractError("invalid scene pair: " + "; ".join(problems))
    rng = np.random.default_rng(config.rng_seed)
    estimator = make_estimator(config.estimator_kind, config.mlp_hidden_sizes)
    lam = config.effective_lambda

    params = estimator.init_params(len(pair.source), rng)
    legs = [_Leg(pair, build_index(pair.target), params, AdamState.for_params(params.named_arrays()), False)]
    if config.flip_augmentation:
        flipped = flip_pair(pair)
        flip_index = build_index(flipped.target)
        if isinstance(estimator, DirectEstimator):
            flip_params = estimator.init_params(len(flipped.source), rng)
            legs.append(_Leg(flipped, flip_index, flip_params,
                             AdamState.for_params(flip_params.named_arrays()), False))
        else:
            legs.append(_Leg(flipped, flip_index, params, legs[0].state, True))

    records = []
    converged = False
    failure = None
    window = config.convergence_window
    for it in range(config.max_iterations):
        leg_id = it % len(legs)
        leg = legs[leg_id]
        run = run_cycle(
            estimator, leg.params, leg.pair, leg.index, lam, swap=leg.swap,
            use_nn=config.use_nn_loss, use_cycle=config.use_cycle_loss,
        )
        rep = run.report
        if not np.isfinite(rep.combined):
            failure = f"non-finite loss at iteration {it}"
            break
        records.append(TraceRecord(it, leg_id, rep.nn_loss, rep.cycle_loss, rep.combined))
        if len(records) > window and records[-1 - window].combined - rep.combined < config.convergence_tolerance:
            converged = True
            break
        try:
            adam_step(leg.state, leg.params.named_arrays(), run.grads, config)
        except NonFiniteGradientError as exc:
            failure = f"{exc} at iteration {it}"
            break
    if failure:
        log.warning("fit of scene %r aborted: %s", pair.scene_id, failure)

    legs0 = legs[0]
    final_flow, _ = estimator.predict(legs0.params, pair.source.positions, "forward")
    return FitTrace(records, FlowField(final_flow), len(records), converged, failure)

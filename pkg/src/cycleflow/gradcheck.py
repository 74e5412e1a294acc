"""Central finite-difference checks of every analytic gradient in the package.

Nearest-neighbor assignments are computed once at the unperturbed point and
held fixed for all perturbed evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import PointCloud, ScenePair
from .losses import anchor_points, combined_loss, cycle_loss, nn_loss, supervised_loss
from .model import DirectEstimator, MlpEstimator, MlpParams, mlp_backward, mlp_forward, run_cycle
from .spatial import build_index

COMPONENTS = ("supervised", "nn", "cycle", "anchor_chain", "mlp", "run_cycle_direct", "run_cycle_mlp")


@dataclass
class ComponentResult:
    worst_relative: float = 0.0
    worst_absolute: float = 0.0
    checked: int = 0
    failures: int = 0


@dataclass
class GradcheckReport:
    results: dict = field(default_factory=lambda: {c: ComponentResult() for c in COMPONENTS})
    rel_tol: float = 1e-4
    abs_tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return all(r.failures == 0 for r in self.results.values())

    def failing(self) -> list[str]:
        return [c for c, r in self.results.items() if r.failures]


def finite_difference(fn, x: np.ndarray, step: float) -> np.ndarray:
    """Central differences of scalar ``fn`` with respect to every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = fn()
        flat[k] = orig - step
        lo = fn()
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * step)
    return grad


def _compare(report: GradcheckReport, component: str, analytic, numeric) -> None:
    res = report.results[component]
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    f = np.asarray(numeric, dtype=np.float64).reshape(-1)
    diff = np.abs(a - f)
    scale = np.maximum(np.abs(a), np.abs(f))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0)
    bad = (diff > report.abs_tol) & (rel > report.rel_tol)
    res.checked += a.size
    res.failures += int(bad.sum())
    res.worst_absolute = max(res.worst_absolute, float(diff.max(initial=0.0)))
    significant = diff > report.abs_tol
    if significant.any():
        res.worst_relative = max(res.worst_relative, float(rel[significant].max()))


def random_scene(rng: np.random.Generator, max_points: int = 20) -> ScenePair:
    n = int(rng.integers(1, max_points + 1))
    m = int(rng.integers(1, max_points + 1))
    src = rng.uniform(-1.0, 1.0, size=(n, 3))
    tgt = rng.uniform(-1.0, 1.0, size=(m, 3)) + rng.uniform(-0.5, 0.5, size=3)
    return ScenePair(PointCloud(src), PointCloud(tgt))


def check_scene(report, pair, rng, step=1e-5, hidden=(8, 8), corrupt=None) -> None:
    """Run every component check on one scene, accumulating into ``report``."""
    def maybe_corrupt(name, g):
        return g * 1.01 + 1e-3 if name == corrupt else g

    n = len(pair.source)
    index = build_index(pair.target)
    lam = float(rng.uniform(0.0, 1.0))
    flow = rng.normal(scale=0.3, size=(n, 3))
    reverse = rng.normal(scale=0.3, size=(n, 3))
    gt = rng.normal(scale=0.3, size=(n, 3))

    g = supervised_loss(flow, gt).grad
    _compare(report, "supervised", maybe_corrupt("supervised", g),
             finite_difference(lambda: supervised_loss(flow, gt).loss, flow, step))

    nn = nn_loss(pair.source, flow, index)
    frozen = nn.nn_indices
    _compare(report, "nn", maybe_corrupt("nn", nn.grad),
             finite_difference(lambda: nn_loss(pair.source, flow, index, frozen).loss, flow, step))

    def cycle_value():
        st = anchor_points(pair.source.positions + flow, pair.target, frozen, lam)
        return cycle_loss(pair.source, st, reverse).loss

    st = anchor_points(pair.source.positions + flow, pair.target, frozen, lam)
    cyc = cycle_loss(pair.source, st, reverse)
    _compare(report, "cycle", maybe_corrupt("cycle", cyc.grad_reverse),
             finite_difference(cycle_value, reverse, step))

    def combined_value():
        return combined_loss(pair.source, flow, index, reverse, lam, nn_indices=frozen).report.combined

    comb = combined_loss(pair.source, flow, index, reverse, lam, nn_indices=frozen)
    _compare(report, "anchor_chain", maybe_corrupt("anchor_chain", comb.grad_forward),
             finite_difference(combined_value, flow, step))

    # standalone network: gradient of <upstream, output>
    mlp = MlpParams.initialize(hidden, rng)
    upstream = rng.normal(size=(n, 3))
    direction = ("forward", "reverse")[int(rng.integers(2))]
    out, record = mlp_forward(mlp, pair.source.positions, direction)
    grads, input_grad = mlp_backward(mlp, record, upstream)
    arrays = mlp.named_arrays()
    for name, g in grads.items():
        num = finite_difference(
            lambda: float(np.sum(upstream * mlp_forward(mlp, pair.source.positions, direction)[0].displacements)),
            arrays[name], step,
        )
        _compare(report, "mlp", maybe_corrupt("mlp", g), num)
    positions = pair.source.positions.copy()
    num = finite_difference(
        lambda: float(np.sum(upstream * mlp_forward(mlp, positions, direction)[0].displacements)),
        positions, step,
    )
    _compare(report, "mlp", maybe_corrupt("mlp", input_grad), num)

    # whole cycle, both estimators
    for component, estimator, params in (
        ("run_cycle_direct", DirectEstimator(), None),
        ("run_cycle_mlp", MlpEstimator(hidden), MlpParams.initialize(hidden, rng)),
    ):
        if params is None:
            params = estimator.init_params(n)
            params.forward[:] = flow
            params.reverse[:] = reverse
        base = run_cycle(estimator, params, pair, index, lam)
        frozen_cycle = base.anchored.nn_indices
        arrays = params.named_arrays()
        for name, arr in arrays.items():
            num = finite_difference(
                lambda: run_cycle(estimator, params, pair, index, lam, nn_indices=frozen_cycle).report.combined,
                arr, step,
            )
            _compare(report, component, maybe_corrupt(component, base.grads[name]), num)


def run_gradcheck(scenes=50, seed=0, max_points=20, step=1e-5, rel_tol=1e-4, abs_tol=1e-8,
                  hidden=(8, 8), corrupt=None) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    report = GradcheckReport(rel_tol=rel_tol, abs_tol=abs_tol)
    for _ in range(scenes):
        check_scene(report, random_scene(rng, max_points), rng, step, hidden, corrupt)
    return report

"""End-point error, threshold accuracies, and binned error analyses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ContractError, FlowField, PointCloud
from .spatial import build_index

STRICT_ABS, STRICT_REL = 0.05, 0.05
RELAX_ABS, RELAX_REL = 0.1, 0.1
Z_95 = 1.96


@dataclass(frozen=True)
class EvalSummary:
    epe_mean: float
    acc_strict: float
    acc_relax: float
    n_points: int


@dataclass(frozen=True)
class BinnedReport:
    """Per-bin statistics over half-open bins ``[edges[k], edges[k+1])``.

    ``means`` holds ``None`` for empty bins. Values below the first edge or at
    or above the last one are tallied in ``underflow`` / ``overflow``.
    """

    bin_edges: tuple
    counts: tuple
    means: tuple
    half_widths: tuple
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts) + self.underflow + self.overflow

    def rows(self):
        for k, (n, m, h) in enumerate(zip(self.counts, self.means, self.half_widths)):
            yield self.bin_edges[k], self.bin_edges[k + 1], n, m, h


def _vectors(flow) -> np.ndarray:
    return flow.displacements if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64).reshape(-1, 3)


def point_errors(predicted, gt) -> np.ndarray:
    """Per-point end-point error ``||d_hat - d*||`` in meters."""
    a, b = _vectors(predicted), _vectors(gt)
    if a.shape != b.shape:
        raise ContractError(f"predicted length {len(a)} != ground truth length {len(b)}")
    return np.linalg.norm(a - b, axis=1)


def relative_errors(errors: np.ndarray, gt) -> np.ndarray:
    """Error over ground-truth magnitude; 0/0 counts as 0 and e/0 as infinity."""
    mag = np.linalg.norm(_vectors(gt), axis=1)
    rel = np.full_like(errors, np.inf)
    nz = mag > 0
    rel[nz] = errors[nz] / mag[nz]
    rel[~nz & (errors == 0)] = 0.0
    return rel


def evaluate(predicted, gt) -> EvalSummary:
    e = point_errors(predicted, gt)
    if len(e) == 0:
        raise ContractError("cannot evaluate an empty flow")
    rel = relative_errors(e, gt)
    strict = (e < STRICT_ABS) | (rel < STRICT_REL)
    relax = (e < RELAX_ABS) | (rel < RELAX_REL)
    n = len(e)
    return EvalSummary(float(e.mean()), float(strict.sum() / n), float(relax.sum() / n), n)


def bin_values(values, keys, edges) -> BinnedReport:
    """Group ``values`` by ``keys`` into half-open bins and summarize each bin."""
    values = np.asarray(values, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2:
        raise ContractError("need at least two bin edges")
    if not np.all(np.diff(edges) > 0):
        raise ContractError("bin edges must be strictly increasing")
    if len(values) != len(keys):
        raise ContractError(f"{len(values)} values but {len(keys)} binning keys")
    slot = np.searchsorted(edges, keys, side="right") - 1
    nbins = len(edges) - 1
    counts, means, halves = [], [], []
    for k in range(nbins):
        v = values[slot == k]
        counts.append(int(len(v)))
        if len(v) == 0:
            means.append(None)
            halves.append(0.0)
            continue
        means.append(float(v.mean()))
        halves.append(float(Z_95 * v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0)
    return BinnedReport(
        tuple(float(x) for x in edges), tuple(counts), tuple(means), tuple(halves),
        underflow=int(np.count_nonzero(slot < 0)),
        overflow=int(np.count_nonzero(slot >= nbins)),
    )


def bin_by_flow_magnitude(errors, gt, edges) -> BinnedReport:
    """Mean error and 95% interval per bin of ground-truth flow magnitude."""
    errors = np.asarray(errors, dtype=np.float64)
    return bin_values(errors, np.linalg.norm(_vectors(gt), axis=1), edges)


def local_density(source: PointCloud, radius: float = 0.1) -> np.ndarray:
    """Number of source points within ``radius`` of each source point, itself included."""
    if not radius > 0:
        raise ContractError(f"density radius must be > 0, got {radius}")
    return build_index(source).count_within_many(source.positions, radius)


def bin_by_density(errors, source: PointCloud, radius: float = 0.1, edges=None) -> BinnedReport:
    """Mean error per bin of local point density (neighbor count within ``radius``).

    Without ``edges``, one unit-wide bin per observed count is used.
    """
    errors = np.asarray(errors, dtype=np.float64)
    density = local_density(source, radius)
    if edges is None:
        edges = np.arange(density.min(), density.max() + 2)
    return bin_values(errors, density.astype(np.float64), edges)


def log_edges(min_edge: float, bins_per_decade: int, upper: float) -> np.ndarray:
    """Edges ``min_edge * 10**(k / bins_per_decade)`` until one exceeds ``upper``."""
    if not min_edge > 0:
        raise ContractError("min_edge must be > 0")
    if int(bins_per_decade) < 1:
        raise ContractError("bins_per_decade must be >= 1")
    edges = [min_edge]
    k = 0
    while edges[-1] <= upper or len(edges) < 2:
        k += 1
        edges.append(min_edge * 10.0 ** (k / bins_per_decade))
    return np.array(edges)


def error_histogram(errors, bins_per_decade: int = 10, min_edge: float = 1e-3) -> BinnedReport:
    """Log-binned histogram of errors; errors under ``min_edge`` go to the underflow bin."""
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if np.any(errors < 0) or not np.isfinite(errors).all():
        raise ContractError("errors must be finite and non-negative")
    top = float(errors.max()) if len(errors) else min_edge
    edges = log_edges(min_edge, bins_per_decade, top)
    return bin_values(errors, errors, edges)


def pooled_summary(summaries) -> Optional[EvalSummary]:
    """Point-count-weighted combination of per-scene summaries."""
    summaries = list(summaries)
    n = sum(s.n_points for s in summaries)
    if n == 0:
        return None
    return EvalSummary(
        sum(s.epe_mean * s.n_points for s in summaries) / n,
        sum(s.acc_strict * s.n_points for s in summaries) / n,
        sum(s.acc_relax * s.n_points for s in summaries) / n,
        n,
    )

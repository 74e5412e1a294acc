"""Command-line entry point: synth, estimate, eval, ablate, gradcheck, bench.

Exit codes: 0 success, 1 partial failure, 2 invalid invocation.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as cio
from .core import ContractError, FlowField, ScenePair, SolverConfig
from .gradcheck import COMPONENTS, run_gradcheck
from .metrics import (
    bin_values,
    error_histogram,
    evaluate,
    local_density,
    point_errors,
    pooled_summary,
)
from .optim import fit_scene_pair
from .synth import SceneSpec, generate_scene

log = logging.getLogger("cycleflow")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
FLOW_SUFFIX = ".flow.pcf"
BIN_KINDS = ("magnitude", "density", "histogram")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config handling

def load_config(path: Optional[Path], seed: Optional[int] = None, **overrides) -> SolverConfig:
    doc = cio.load_json(path) if path else {}
    known = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    doc.update(overrides)
    if seed is not None:
        doc["rng_seed"] = seed
    try:
        return SolverConfig(**doc)
    except (ContractError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def load_scene(entry: cio.SceneEntry, fmt: str, ground_threshold: Optional[float], with_gt: bool) -> ScenePair:
    """Read one manifest scene, applying ground removal to both clouds when configured."""
    source = cio.load_cloud(entry.source_path, fmt)
    target = cio.load_cloud(entry.target_path, fmt)
    gt = cio.load_flow(entry.gt_flow_path) if with_gt and entry.gt_flow_path else None
    if gt is not None and len(gt) != len(source):
        raise cio.LoadError(f"scene {entry.scene_id!r}: gt flow has {len(gt)} vectors for {len(source)} points")
    if ground_threshold is not None:
        keep = cio.ground_mask(source, ground_threshold)
        source, _ = cio.remove_ground(source, ground_threshold)
        target, _ = cio.remove_ground(target, ground_threshold)
        if gt is not None:
            gt = FlowField(gt.displacements[keep])
    return ScenePair(source, target, gt, scene_id=entry.scene_id)


# --------------------------------------------------------------------------
# synth

def cmd_synth(spec_path: Path, out_dir: Path, seed: Optional[int] = None, fmt: Optional[str] = None) -> int:
    """Generate scenes described by a JSON dataset spec and write them with a manifest."""
    doc = cio.load_json(spec_path)
    base_seed = seed if seed is not None else int(doc.get("seed", 0))
    fmt = fmt or doc.get("format", "f32bin")
    if fmt not in cio.FORMATS:
        raise UsageError(f"unknown format {fmt!r}")
    ext = ".csv" if fmt == "csv" else ".pcf"
    out_dir.mkdir(parents=True, exist_ok=True)

    seeds = np.random.SeedSequence(base_seed)
    entries = []
    ordinal = 0
    for group_no, group in enumerate(doc.get("scenes", [])):
        group = dict(group)
        count = int(group.pop("count", 1))
        prefix = str(group.pop("scene_id", f"scene{group_no:03d}"))
        fixed_seed = group.pop("rng_seed", None)
        for k in range(count):
            child = seeds.spawn(1)[0]
            scene_seed = int(fixed_seed) + k if fixed_seed is not None else int(child.generate_state(1, np.uint64)[0])
            try:
                spec = SceneSpec(rng_seed=scene_seed, **group)
            except (ContractError, TypeError) as exc:
                raise UsageError(f"scene group {group_no}: {exc}") from None
            scene_id = prefix if count == 1 else f"{prefix}-{k:03d}"
            pair = generate_scene(spec, scene_id)
            scene_dir = out_dir / scene_id
            scene_dir.mkdir(exist_ok=True)
            src, tgt = scene_dir / f"source{ext}", scene_dir / f"target{ext}"
            gt_path = scene_dir / "gt_flow.pcf"
            cio.save_cloud(src, pair.source, fmt)
            cio.save_cloud(tgt, pair.target, fmt)
            cio.save_flow(gt_path, pair.gt_flow)
            cio.save_flow(scene_dir / "gt_reverse_flow.pcf", pair.gt_reverse_flow)
            entries.append(cio.SceneEntry(scene_id, src, tgt, gt_path))
            ordinal += 1
    manifest = cio.DatasetManifest(entries, doc.get("ground_threshold"), fmt, out_dir)
    cio.save_manifest(out_dir / "manifest.json", manifest)
    print(f"{ordinal} scenes written to {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# estimate

@dataclass
class FitOutcome:
    scene_id: str
    flow: Optional[FlowField]
    records: list
    iterations: int
    converged: bool
    error: Optional[str]


def _fit_job(job) -> FitOutcome:
    entry, fmt, ground, config = job
    try:
        pair = load_scene(entry, fmt, ground, with_gt=False)
        trace = fit_scene_pair(pair, config)
    except (cio.LoadError, cio.EmptyResultError, ContractError, OSError) as exc:
        return FitOutcome(entry.scene_id, None, [], 0, False, str(exc))
    return FitOutcome(entry.scene_id, trace.flow, trace.records, trace.iterations_run,
                      trace.converged, trace.failure)


def run_fits(manifest: cio.DatasetManifest, config: SolverConfig, jobs: int) -> list[FitOutcome]:
    work = [(e, manifest.format, manifest.ground_threshold, config) for e in manifest.scenes]
    if jobs <= 1 or len(work) <= 1:
        return [_fit_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fit_job, work))


def cmd_estimate(manifest_path: Path, config_path: Optional[Path], out_dir: Path,
                 seed: Optional[int] = None, jobs: int = 8) -> int:
    manifest = cio.load_manifest(manifest_path)
    config = load_config(config_path, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = run_fits(manifest, config, jobs)

    trace_rows, fit_rows = [], []
    failed = 0
    for o in outcomes:
        if o.flow is not None and o.error is None:
            cio.save_flow(out_dir / f"{o.scene_id}{FLOW_SUFFIX}", o.flow)
        else:
            failed += 1
            log.error("scene %s failed: %s", o.scene_id, o.error)
        for r in o.records:
            trace_rows.append((o.scene_id, r.leg, r.iteration, r.nn_loss, r.cycle_loss, r.combined))
        final = o.records[-1].combined if o.records else None
        fit_rows.append((o.scene_id, o.iterations, o.converged, final, o.error or "ok"))
    cio.write_tsv(out_dir / "traces.tsv", ("scene_id", "leg", "iteration", "nn_loss", "cycle_loss", "combined"), trace_rows)
    header = ("scene_id", "iterations", "converged", "final_combined", "status")
    cio.write_tsv(out_dir / "fits.tsv", header, fit_rows)
    sys.stdout.write(cio.render_tsv(header, fit_rows))
    return EXIT_PARTIAL if failed else EXIT_OK


# --------------------------------------------------------------------------
# eval

EVAL_HEADER = ("scene_id", "n_points", "epe", "acc_0.05", "acc_0.1")
BIN_HEADER = ("bin_low", "bin_high", "count", "mean_epe", "ci95_half_width")


def _binned_rows(report):
    rows = [("-inf", report.bin_edges[0], report.underflow, None, None)]
    rows += list(report.rows())
    rows.append((report.bin_edges[-1], "inf", report.overflow, None, None))
    return rows


def magnitude_edges(magnitudes: np.ndarray, width: float = 0.1) -> np.ndarray:
    top = float(magnitudes.max(initial=0.0))
    return np.arange(0.0, np.floor(top / width) * width + 2 * width, width)


def cmd_eval(manifest_path: Path, flow_dir: Path, bins: Optional[str] = None,
             out_dir: Optional[Path] = None) -> int:
    if bins is not None and bins not in BIN_KINDS:
        raise UsageError(f"--bins must be one of {BIN_KINDS}")
    manifest = cio.load_manifest(manifest_path)
    rows, summaries = [], []
    errors, magnitudes, densities = [], [], []
    missing = 0
    for entry in manifest.scenes:
        if entry.gt_flow_path is None:
            log.error("scene %s has no ground-truth flow", entry.scene_id)
            missing += 1
            continue
        flow_path = flow_dir / f"{entry.scene_id}{FLOW_SUFFIX}"
        if not flow_path.is_file():
            log.error("missing flow file for scene %s: %s", entry.scene_id, flow_path)
            missing += 1
            continue
        pair = load_scene(entry, manifest.format, manifest.ground_threshold, with_gt=True)
        predicted = cio.load_flow(flow_path)
        summary = evaluate(predicted, pair.gt_flow)
        summaries.append(summary)
        rows.append((entry.scene_id, summary.n_points, summary.epe_mean, summary.acc_strict, summary.acc_relax))
        if bins:
            errors.append(point_errors(predicted, pair.gt_flow))
            magnitudes.append(np.linalg.norm(pair.gt_flow.displacements, axis=1))
            if bins == "density":
                densities.append(local_density(pair.source, 0.1))
    pooled = pooled_summary(summaries)
    if pooled is not None:
        rows.append(("ALL", pooled.n_points, pooled.epe_mean, pooled.acc_strict, pooled.acc_relax))
    text = cio.render_tsv(EVAL_HEADER, rows)
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval.tsv").write_text(text, encoding="utf-8")

    if bins and errors:
        e = np.concatenate(errors)
        if bins == "magnitude":
            mags = np.concatenate(magnitudes)
            report = bin_values(e, mags, magnitude_edges(mags))
        elif bins == "density":
            dens = np.concatenate(densities)
            report = bin_values(e, dens, np.arange(dens.min(), dens.max() + 2))
        else:
            report = error_histogram(e, bins_per_decade=10, min_edge=1e-3)
        btext = cio.render_tsv(BIN_HEADER, _binned_rows(report))
        sys.stdout.write(f"\n# bins: {bins}\n" + btext)
        if out_dir is not None:
            (out_dir / f"bins_{bins}.tsv").write_text(btext, encoding="utf-8")
    return EXIT_PARTIAL if missing else EXIT_OK


# --------------------------------------------------------------------------
# ablate

@dataclass(frozen=True)
class AblationSpec:
    rows: tuple = ()
    lambdas: tuple = ()

    def __post_init__(self):
        for k, row in enumerate(self.rows):
            extra = set(row) - {"use_nn_loss", "use_cycle_loss", "use_anchor", "use_flip"}
            if extra:
                raise UsageError(f"ablation row {k}: unknown toggles {sorted(extra)}")
            if row.get("use_anchor", True) and not row.get("use_cycle_loss", True):
                raise UsageError(f"ablation row {k}: anchoring requires the cycle loss")
        for lam in self.lambdas:
            if not 0.0 <= float(lam) <= 1.0:
                raise UsageError(f"lambda {lam} outside [0, 1]")

    def configs(self, base: SolverConfig):
        """Yield one config per toggle row, then one per lambda with every component on."""
        for row in self.rows:
            cfg = dataclasses.replace(
                base,
                use_nn_loss=row.get("use_nn_loss", True),
                use_cycle_loss=row.get("use_cycle_loss", True),
                use_anchor=row.get("use_anchor", True),
                flip_augmentation=row.get("use_flip", base.flip_augmentation),
            )
            yield cfg
        for lam in self.lambdas:
            yield dataclasses.replace(base, lambda_anchor=float(lam), use_nn_loss=True,
                                      use_cycle_loss=True, use_anchor=True)


ABLATION_HEADER = ("nn_loss", "cycle_loss", "anchor", "flip", "lambda", "epe", "acc_0.05", "acc_0.1")


def run_ablation(pairs, spec: AblationSpec, base: SolverConfig):
    """Fit every scene under every configuration; one pooled-metric row per configuration."""
    return [_ablation_row(cfg, _ablation_job((pairs, cfg))) for cfg in spec.configs(base)]


def _ablation_row(cfg: SolverConfig, summaries):
    pooled = pooled_summary(summaries)
    return (cfg.use_nn_loss, cfg.use_cycle_loss, cfg.use_anchor, cfg.flip_augmentation,
            cfg.effective_lambda, pooled.epe_mean, pooled.acc_strict, pooled.acc_relax)


def _ablation_job(job):
    pairs, cfg = job
    return [evaluate(fit_scene_pair(p, cfg).flow, p.gt_flow) for p in pairs]


def load_ablation_spec(path: Path) -> AblationSpec:
    doc = cio.load_json(path)
    return AblationSpec(tuple(doc.get("rows", [])), tuple(float(x) for x in doc.get("lambdas", [])))


def cmd_ablate(manifest_path: Path, spec_path: Path, config_path: Optional[Path] = None,
               out_dir: Optional[Path] = None, seed: Optional[int] = None, jobs: int = 8) -> int:
    spec = load_ablation_spec(spec_path)  # reject bad toggles before any work
    base = load_config(config_path, seed)
    manifest = cio.load_manifest(manifest_path)
    pairs = []
    for entry in manifest.scenes:
        if entry.gt_flow_path is None:
            raise UsageError(f"scene {entry.scene_id!r} has no ground truth; ablation needs it")
        pairs.append(load_scene(entry, manifest.format, manifest.ground_threshold, with_gt=True))
    configs = list(spec.configs(base))
    work = [([p], cfg) for cfg in configs for p in pairs]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablation_job, work))
    else:
        results = [_ablation_job(w) for w in work]
    n = len(pairs)
    rows = [
        _ablation_row(cfg, [s for r in results[k * n:(k + 1) * n] for s in r])
        for k, cfg in enumerate(configs)
    ]
    text = cio.render_tsv(ABLATION_HEADER, rows)
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.tsv").write_text(text, encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck / bench

def cmd_gradcheck(config_path: Optional[Path] = None, seed: Optional[int] = None,
                  scenes: int = 50, corrupt: Optional[str] = None) -> int:
    doc = cio.load_json(config_path) if config_path else {}
    cfg = load_config(config_path, seed)
    # small networks keep the finite-difference sweep fast unless the config names a size
    hidden = tuple(cfg.mlp_hidden_sizes) if "mlp_hidden_sizes" in doc else (8, 8)
    report = run_gradcheck(scenes=scenes, seed=cfg.rng_seed, hidden=hidden, corrupt=corrupt)
    rows = [
        (name, r.checked, r.worst_relative, r.worst_absolute, "pass" if r.failures == 0 else "FAIL")
        for name, r in report.results.items()
    ]
    sys.stdout.write(cio.render_tsv(("component", "checked", "worst_rel", "worst_abs", "status"), rows))
    return EXIT_OK if report.passed else EXIT_PARTIAL


def cmd_bench(config_path: Optional[Path] = None, seed: Optional[int] = None,
              scenes: int = 5, points: int = 600) -> int:
    """Fit a seeded rigid-translation suite and report timing and pooled metrics."""
    from .suites import generate, rigid_translation_specs

    config = load_config(config_path, seed)
    pairs = generate(rigid_translation_specs(scenes, seed=config.rng_seed, points=points))
    t0 = time.perf_counter()
    summaries = [evaluate(fit_scene_pair(p, config).flow, p.gt_flow) for p in pairs]
    elapsed = time.perf_counter() - t0
    pooled = pooled_summary(summaries)
    sys.stdout.write(cio.render_tsv(
        ("scenes", "points", "estimator", "seconds", "epe", "acc_0.05", "acc_0.1"),
        [(scenes, points, config.estimator_kind, round(elapsed, 3), pooled.epe_mean,
          pooled.acc_strict, pooled.acc_relax)],
    ))
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycleflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=cio.FORMATS)

    p = sub.add_parser("estimate", help="fit flow for every scene of a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=8)

    p = sub.add_parser("eval", help="score predicted flows against ground truth")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--flows", type=Path, required=True)
    p.add_argument("--bins", choices=BIN_KINDS)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("ablate", help="run loss/augmentation toggles and a lambda sweep")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=8)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--corrupt", choices=COMPONENTS, help=argparse.SUPPRESS)

    p = sub.add_parser("bench", help="time the solver on a seeded translation suite")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--scenes", type=int, default=5)
    p.add_argument("--points", type=int, default=600)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 after --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        if args.command == "synth":
            return cmd_synth(args.spec, args.out, args.seed, args.format)
        if args.command == "estimate":
            return cmd_estimate(args.manifest, args.config, args.out, args.seed, args.jobs)
        if args.command == "eval":
            return cmd_eval(args.manifest, args.flows, args.bins, args.out)
        if args.command == "ablate":
            return cmd_ablate(args.manifest, args.spec, args.config, args.out, args.seed, args.jobs)
        if args.command == "gradcheck":
            return cmd_gradcheck(args.config, args.seed, args.scenes, args.corrupt)
        if args.command == "bench":
            return cmd_bench(args.config, args.seed, args.scenes, args.points)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (cio.LoadError, cio.EmptyResultError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

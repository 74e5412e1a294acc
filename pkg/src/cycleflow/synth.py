"""Synthetic scene pairs with exact ground-truth flow."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import ContractError, FlowField, PointCloud, ScenePair

PRIMITIVES = ("box", "sphere", "plane")


def rotation_matrix(axis_angle) -> np.ndarray:
    """Rodrigues' formula; the vector's norm is the angle in radians."""
    w = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(w))
    if theta == 0.0:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


@dataclass(frozen=True)
class ObjectSpec:
    """One rigid object: a sampled primitive surface and its motion.

    ``extent`` is the full box size, the sphere diameter (first component) or
    the plane's x/y size. ``center`` places the object; the motion rotates
    about the world origin, then translates.
    """

    primitive: str = "box"
    extent: tuple = (1.0, 1.0, 1.0)
    points_per_object: int = 500
    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise ContractError(f"unknown primitive {self.primitive!r}")
        if int(self.points_per_object) < 1:
            raise ContractError("points_per_object must be >= 1")
        for name in ("extent", "rotation", "translation", "center"):
            vec = tuple(float(v) for v in getattr(self, name))
            if len(vec) != 3:
                raise ContractError(f"{name} must have 3 components")
            object.__setattr__(self, name, vec)
        if min(self.extent) < 0:
            raise ContractError("extent must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple = field(default_factory=tuple)
    global_noise_sigma: float = 0.0
    target_dropout_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "objects",
            tuple(o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects),
        )
        if not self.objects:
            raise ContractError("a scene needs at least one object")
        if self.global_noise_sigma < 0:
            raise ContractError("noise sigma must be >= 0")
        if not 0.0 <= self.target_dropout_fraction < 1.0:
            raise ContractError("dropout fraction must be in [0, 1)")


def sample_surface(obj: ObjectSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples over the primitive's surface, centered on ``obj.center``."""
    n = int(obj.points_per_object)
    ex = np.asarray(obj.extent)
    if obj.primitive == "sphere":
        v = rng.normal(size=(n, 3))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        pts = 0.5 * ex[0] * v / norms
    elif obj.primitive == "plane":
        pts = np.column_stack([(rng.random(n) - 0.5) * ex[0], (rng.random(n) - 0.5) * ex[1], np.zeros(n)])
    else:
        # six faces weighted by area: pairs normal to x, y, z
        areas = np.array([ex[1] * ex[2], ex[0] * ex[2], ex[0] * ex[1]])
        total = areas.sum()
        probs = np.repeat(areas / total if total > 0 else np.full(3, 1 / 3), 2) / 2
        face = rng.choice(6, size=n, p=probs)
        pts = (rng.random((n, 3)) - 0.5) * ex
        axis = face // 2
        sign = np.where(face % 2 == 0, -0.5, 0.5)
        pts[np.arange(n), axis] = sign * ex[axis]
    return pts + np.asarray(obj.center)


class GeneratedScene(NamedTuple):
    pair: ScenePair
    clean_target: np.ndarray        # moved surviving points before noise
    target_source_index: np.ndarray  # source point each target point came from


def generate_scene_detailed(spec: SceneSpec, scene_id: str = "") -> GeneratedScene:
    rng = np.random.default_rng(spec.rng_seed)
    src_parts, flow_parts = [], []
    for obj in spec.objects:
        pts = sample_surface(obj, rng)
        rot = rotation_matrix(obj.rotation)
        t = np.asarray(obj.translation)
        src_parts.append(pts)
        # (R - I) x + t is exact for pure translations
        flow_parts.append((pts @ rot.T - pts) + t)
    source = np.concatenate(src_parts)
    gt = np.concatenate(flow_parts)
    moved = source + gt

    noisy = moved
    if spec.global_noise_sigma > 0:
        noisy = moved + rng.normal(scale=spec.global_noise_sigma, size=moved.shape)
    keep = rng.random(len(moved)) >= spec.target_dropout_fraction
    if not keep.any():
        keep[rng.integers(len(moved))] = True
    kept = np.flatnonzero(keep)

    # reverse ground truth carries each surviving (possibly noisy) target point
    # back to the source point it came from
    target = noisy[kept]
    reverse = source[kept] - target

    pair = ScenePair(
        source=PointCloud(source, frame_id="t"),
        target=PointCloud(target, frame_id="t+1"),
        gt_flow=FlowField(gt),
        gt_reverse_flow=FlowField(reverse),
        scene_id=scene_id,
    )
    return GeneratedScene(pair, moved[kept], kept)


def generate_scene(spec: SceneSpec, scene_id: str = "") -> ScenePair:
    """Sample objects, move them rigidly, perturb and thin the target.

    Ground truth maps each source point to its noiseless moved position.
    Deterministic for a given ``spec.rng_seed``.
    """
    return generate_scene_detailed(spec, scene_id).pair


def make_degenerate_pairs() -> list[ScenePair]:
    """Fixtures for the two degenerate minimizers.

    (a) a 1 m x 1 m plane grid at z = 0 and the same grid shifted by 0.5 m in x;
    (b) a 100-point source and a single-point target.
    """
    g = np.linspace(0.0, 1.0, 11)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    plane = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    shift = np.array([0.5, 0.0, 0.0])
    plane_pair = ScenePair(
        PointCloud(plane), PointCloud(plane + shift),
        FlowField(np.tile(shift, (len(plane), 1))), FlowField(np.tile(-shift, (len(plane), 1))),
        scene_id="degenerate-zero-flow",
    )

    rng = np.random.default_rng(7)
    # a dyadic grid keeps target - source and source + flow exact in float64
    blob = np.round(rng.uniform(-1.0, 1.0, size=(100, 3)) * 1024.0) / 1024.0
    collapse_pair = ScenePair(
        PointCloud(blob), PointCloud([[0.25, -0.5, 2.0]]), scene_id="degenerate-collapse",
    )
    return [plane_pair, collapse_pair]


def collapse_flow(pair: ScenePair, target_point: int = 0) -> FlowField:
    """Flow sending every source point onto one target point."""
    return FlowField(pair.target.positions[target_point] - pair.source.positions)

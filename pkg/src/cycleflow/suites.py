"""Seeded scene collections used by the acceptance runs and the ``bench`` command."""

from __future__ import annotations

import numpy as np

from .synth import ObjectSpec, SceneSpec, generate_scene


def _unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def rigid_translation_specs(count=20, seed=0, points=600, max_rotation_deg=0.0) -> list[SceneSpec]:
    """Single box or sphere, translation magnitude uniform in [0.2, 1.0] m.

    Zero noise, target dropout uniform in [0, 0.2]. A nonzero
    ``max_rotation_deg`` adds a rotation about the vertical axis.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for k in range(count):
        translation = rng.uniform(0.2, 1.0) * _unit(rng)
        angle = np.deg2rad(rng.uniform(-max_rotation_deg, max_rotation_deg)) if max_rotation_deg else 0.0
        size = rng.uniform(1.5, 2.5)
        obj = ObjectSpec(
            primitive=("box", "sphere")[k % 2],
            extent=(size, size * rng.uniform(0.7, 1.0), size * rng.uniform(0.7, 1.0)),
            points_per_object=points,
            rotation=(0.0, 0.0, angle),
            translation=tuple(translation),
        )
        specs.append(SceneSpec((obj,), 0.0, float(rng.uniform(0.0, 0.2)), int(rng.integers(2**63))))
    return specs


def ablation_specs(count=20, seed=0, points=300) -> list[SceneSpec]:
    """Two independently moving objects per scene with half the target dropped.

    Sparse targets next to a second object make many-to-one assignments
    cheap for the nearest-neighbor loss alone.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        objects = []
        for primitive in ("box", "sphere"):
            center = rng.uniform(-2.0, 2.0, 3)
            center[2] = 0.0
            translation = rng.uniform(-0.6, 0.6, 3)
            translation[2] *= 0.2
            objects.append(ObjectSpec(
                primitive=primitive,
                extent=tuple(rng.uniform(0.6, 1.5, 3)),
                points_per_object=points,
                rotation=(0.0, 0.0, float(rng.uniform(-0.2, 0.2))),
                translation=tuple(translation),
                center=tuple(center),
            ))
        specs.append(SceneSpec(tuple(objects), 0.0, 0.5, int(rng.integers(2**63))))
    return specs


def generate(specs, prefix="scene"):
    return [generate_scene(s, f"{prefix}-{k:03d}") for k, s in enumerate(specs)]

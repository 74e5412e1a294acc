"""Scene flow between two point clouds from nearest-neighbor and anchored cycle-consistency losses."""

from .core import (
    ContractError,
    FlowField,
    LossReport,
    PointCloud,
    ScenePair,
    SolverConfig,
    apply_flow,
    validate_scene_pair,
)
from .metrics import EvalSummary, evaluate
from .optim import FitTrace, fit_scene_pair, flip_pair
from .spatial import NeighborIndex, build_index, count_within_radius, nearest
from .synth import ObjectSpec, SceneSpec, generate_scene, make_degenerate_pairs

__all__ = [
    "ContractError", "FlowField", "LossReport", "PointCloud", "ScenePair", "SolverConfig",
    "apply_flow", "validate_scene_pair", "EvalSummary", "evaluate", "FitTrace",
    "fit_scene_pair", "flip_pair", "NeighborIndex", "build_index", "count_within_radius",
    "nearest", "ObjectSpec", "SceneSpec", "generate_scene", "make_degenerate_pairs",
]

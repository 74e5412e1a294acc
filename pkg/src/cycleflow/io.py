"""Cloud and flow files, ground removal, dataset manifests, tab-separated reports.

Binary container ("PCF1"), little endian::

    bytes 0-3    b"PCF1"
    bytes 4-7    uint32 point count
    bytes 8-11   uint32 channel count (>= 3; exactly 3 for flow files)
    bytes 12-15  reserved, zero
    then count * channels float32 values, row major
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ContractError, FlowField, PointCloud

MAGIC = b"PCF1"
HEADER = struct.Struct("<4sIII")
FORMATS = ("csv", "f32bin")


class LoadError(ValueError):
    pass


class EmptyResultError(ValueError):
    pass


def _guess_format(path: Path) -> str:
    return "csv" if path.suffix.lower() in (".csv", ".txt") else "f32bin"


def _read_f32bin(path: Path, min_channels: int) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise LoadError(f"{path}: truncated header ({len(data)} bytes, need {HEADER.size})")
    magic, count, channels, reserved = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise LoadError(f"{path}: bad magic {magic!r} at byte offset 0")
    if channels < min_channels:
        raise LoadError(f"{path}: channel count {channels} at byte offset 8 is below {min_channels}")
    if reserved != 0:
        raise LoadError(f"{path}: reserved field at byte offset 12 is not zero")
    if count == 0:
        raise LoadError(f"{path}: point count at byte offset 4 is zero")
    expected = HEADER.size + 4 * count * channels
    if len(data) != expected:
        raise LoadError(
            f"{path}: payload is {len(data) - HEADER.size} bytes but header declares "
            f"{count} x {channels} float32 ({expected - HEADER.size} bytes)"
        )
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(count, channels)
    bad = np.flatnonzero(~np.isfinite(values).ravel())
    if len(bad):
        raise LoadError(f"{path}: non-finite value at byte offset {HEADER.size + 4 * int(bad[0])}")
    return values.astype(np.float64)


def _write_f32bin(path: Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    count, channels = values.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, count, channels, 0))
        fh.write(np.ascontiguousarray(values).tobytes())


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                raise LoadError(f"{path}: line {lineno}: not a list of numbers") from None
            if len(vals) < 3:
                raise LoadError(f"{path}: line {lineno}: need at least 3 columns, got {len(vals)}")
            if width is not None and len(vals) != width:
                raise LoadError(f"{path}: line {lineno}: {len(vals)} columns, expected {width}")
            if not all(math.isfinite(v) for v in vals):
                raise LoadError(f"{path}: line {lineno}: non-finite value")
            width = len(vals)
            rows.append(vals)
    if not rows:
        raise LoadError(f"{path}: no points")
    return np.array(rows, dtype=np.float64)


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt not in FORMATS:
        raise ContractError(f"unknown cloud format {fmt!r}")
    values = _read_csv(path) if fmt == "csv" else _read_f32bin(path, 3)
    features = values[:, 3:] if values.shape[1] > 3 else None
    return PointCloud(values[:, :3], features, frame_id=path.stem)


def save_cloud(path, cloud: PointCloud, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = format or _guess_format(path)
    if len(cloud) == 0:
        raise ContractError(f"{path}: refusing to write an empty cloud")
    values = cloud.positions
    if cloud.features is not None:
        values = np.hstack([values, cloud.features])
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt == "f32bin":
        _write_f32bin(path, values)
    else:
        raise ContractError(f"unknown cloud format {fmt!r}")


def save_flow(path, flow: FlowField) -> None:
    if len(flow) == 0:
        raise ContractError(f"{path}: refusing to write an empty flow")
    _write_f32bin(Path(path), flow.displacements)


def load_flow(path) -> FlowField:
    path = Path(path)
    values = _read_f32bin(path, 3)
    if values.shape[1] != 3:
        raise LoadError(f"{path}: flow files carry exactly 3 channels, got {values.shape[1]}")
    return FlowField(values)


def ground_mask(cloud: PointCloud, z_threshold: float) -> np.ndarray:
    return cloud.positions[:, 2] > z_threshold


def remove_ground(cloud: PointCloud, z_threshold: float) -> tuple[PointCloud, int]:
    """Keep points strictly above ``z_threshold``, preserving their order."""
    keep = ground_mask(cloud, z_threshold)
    if not keep.any():
        raise EmptyResultError(f"all {len(cloud)} points are at or below z = {z_threshold}")
    feats = cloud.features[keep] if cloud.features is not None else None
    return PointCloud(cloud.positions[keep], feats, cloud.frame_id), int(len(cloud) - keep.sum())


# --------------------------------------------------------------------------
# manifests and configs (JSON)

@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    source_path: Path
    target_path: Path
    gt_flow_path: Optional[Path] = None


@dataclass
class DatasetManifest:
    scenes: list = field(default_factory=list)
    ground_threshold: Optional[float] = None
    format: str = "f32bin"
    root: Path = Path(".")

    def __post_init__(self):
        ids = [s.scene_id for s in self.scenes]
        if len(set(ids)) != len(ids):
            raise ContractError("scene ids in a manifest must be unique")

    def check_files(self) -> None:
        for s in self.scenes:
            for p in (s.source_path, s.target_path, s.gt_flow_path):
                if p is not None and not p.is_file():
                    raise LoadError(f"scene {s.scene_id!r}: missing file {p}")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    root = path.parent

    def resolve(p):
        return None if p is None else (root / p)

    scenes = [
        SceneEntry(
            str(s["scene_id"]),
            resolve(s["source_path"]),
            resolve(s["target_path"]),
            resolve(s.get("gt_flow_path")),
        )
        for s in doc.get("scenes", [])
    ]
    manifest = DatasetManifest(
        scenes, doc.get("ground_threshold"), doc.get("format", "f32bin"), root
    )
    if check_files:
        manifest.check_files()
    return manifest


def save_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)

    def rel(p):
        if p is None:
            return None
        try:
            return str(Path(p).relative_to(path.parent))
        except ValueError:
            return str(p)

    doc = {
        "format": manifest.format,
        "ground_threshold": manifest.ground_threshold,
        "scenes": [
            {
                "scene_id": s.scene_id,
                "source_path": rel(s.source_path),
                "target_path": rel(s.target_path),
                "gt_flow_path": rel(s.gt_flow_path),
            }
            for s in manifest.scenes
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: line {exc.lineno}: {exc.msg}") from None


# --------------------------------------------------------------------------
# reports

def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_tsv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_tsv(header, rows))


def render_tsv(header, rows) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(format_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def read_tsv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))

import json
import struct

import numpy as np
import pytest

from cycleflow.core import ContractError, FlowField, PointCloud
from cycleflow.io import (
    HEADER, DatasetManifest, EmptyResultError, LoadError, SceneEntry, load_cloud, load_flow,
    load_manifest, read_tsv, remove_ground, render_tsv, save_cloud, save_flow, save_manifest,
)


def to_f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def test_csv_example(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("0,0,0\n1,0,0")
    c = load_cloud(p)
    assert len(c) == 2 and c.features is None
    np.testing.assert_array_equal(c.positions, [[0, 0, 0], [1, 0, 0]])


def test_binary_example(tmp_path):
    p = tmp_path / "c.pcf"
    p.write_bytes(struct.pack("<4sIII4f", b"PCF1", 1, 4, 0, 1.0, 2.0, 3.0, 0.5))
    c = load_cloud(p)
    np.testing.assert_array_equal(c.positions, [[1, 2, 3]])
    np.testing.assert_array_equal(c.features, [[0.5]])


@pytest.mark.parametrize("suffix", [".pcf", ".csv"])
def test_cloud_round_trip(tmp_path, rng, suffix):
    pos = rng.normal(scale=30, size=(500, 3))
    feats = rng.uniform(size=(500, 2))
    p = tmp_path / f"c{suffix}"
    save_cloud(p, PointCloud(pos, feats))
    back = load_cloud(p)
    if suffix == ".pcf":
        assert back.positions.tobytes() == to_f32(pos).tobytes()
        assert back.features.tobytes() == to_f32(feats).tobytes()
    else:
        assert back.positions.tobytes() == pos.tobytes()
    # a second pass through 32-bit storage is a fixed point
    save_cloud(p, back)
    assert load_cloud(p) == back


def test_flow_round_trip(tmp_path, rng):
    p = tmp_path / "f.flow.pcf"
    save_flow(p, FlowField([[1, 0, 0]]))
    np.testing.assert_array_equal(load_flow(p).displacements, [[1, 0, 0]])
    vecs = rng.normal(size=(10_000, 3))
    save_flow(p, FlowField(vecs))
    assert load_flow(p).displacements.tobytes() == to_f32(vecs).tobytes()
    with pytest.raises(ContractError):
        save_flow(p, FlowField(np.zeros((0, 3))))


def raw(tmp_path, data):
    p = tmp_path / "bad.pcf"
    p.write_bytes(data)
    return p


@pytest.mark.parametrize("data,needle", [
    (b"PCF", "truncated header"),
    (struct.pack("<4sIII", b"XXXX", 1, 3, 0) + b"\0" * 12, "byte offset 0"),
    (struct.pack("<4sIII", b"PCF1", 2, 3, 0) + b"\0" * 12, "declares"),
    (struct.pack("<4sIII", b"PCF1", 1, 3, 0) + b"\0" * 16, "declares"),
    (struct.pack("<4sIII3f", b"PCF1", 1, 3, 0, 0.0, float("nan"), 0.0), "byte offset 20"),
    (struct.pack("<4sIII2f", b"PCF1", 1, 2, 0, 0.0, 0.0), "byte offset 8"),
    (struct.pack("<4sIII3f", b"PCF1", 1, 3, 9, 0.0, 0.0, 0.0), "byte offset 12"),
])
def test_binary_errors(tmp_path, data, needle):
    with pytest.raises(LoadError, match=needle):
        load_cloud(raw(tmp_path, data))


def test_flow_rejects_extra_channels(tmp_path):
    p = raw(tmp_path, struct.pack("<4sIII4f", b"PCF1", 1, 4, 0, 0, 0, 0, 0))
    with pytest.raises(LoadError, match="3 channels"):
        load_flow(p)


@pytest.mark.parametrize("text,needle", [
    ("0,0,0\n1,x,0\n", "line 2"),
    ("0,0\n", "line 1"),
    ("0,0,0\n0,0,0,1\n", "line 2"),
    ("0,0,0\n\n0,inf,0\n", "line 3"),
    ("", "no points"),
])
def test_csv_errors(tmp_path, text, needle):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(LoadError, match=needle):
        load_cloud(p)


def test_remove_ground():
    cloud = PointCloud([[0, 0, -2.0], [1, 0, 0.0], [2, 0, 1.0]], [[1.0], [2.0], [3.0]])
    kept, removed = remove_ground(cloud, -1.5)
    assert (len(kept), removed) == (2, 1)
    np.testing.assert_array_equal(kept.features, [[2.0], [3.0]])
    again, removed2 = remove_ground(kept, -1.5)
    assert again == kept and removed2 == 0
    same, removed = remove_ground(cloud, -5.0)
    assert same == cloud and removed == 0
    with pytest.raises(EmptyResultError):
        remove_ground(cloud, 1.0)


def test_manifest_round_trip(tmp_path):
    for name in ("a.pcf", "b.pcf"):
        (tmp_path / name).write_bytes(b"")
    m = DatasetManifest([SceneEntry("s0", tmp_path / "a.pcf", tmp_path / "b.pcf")], ground_threshold=-1.4)
    save_manifest(tmp_path / "m.json", m)
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["scenes"][0]["source_path"] == "a.pcf"
    back = load_manifest(tmp_path / "m.json")
    assert back.scenes == m.scenes and back.ground_threshold == -1.4


def test_manifest_errors(tmp_path):
    with pytest.raises(ContractError):
        DatasetManifest([SceneEntry("s", tmp_path, tmp_path)] * 2)
    (tmp_path / "m.json").write_text(json.dumps(
        {"scenes": [{"scene_id": "s", "source_path": "x.pcf", "target_path": "y.pcf"}]}))
    with pytest.raises(LoadError, match="missing file"):
        load_manifest(tmp_path / "m.json")
    assert load_manifest(tmp_path / "m.json", check_files=False).ground_threshold is None
    (tmp_path / "bad.json").write_text("{\n  oops")
    with pytest.raises(LoadError, match="line 2"):
        load_manifest(tmp_path / "bad.json")


def test_tsv(tmp_path):
    text = render_tsv(("a", "b", "c"), [(1, 0.5, None), ("x", True, 2.25)])
    assert text == "a\tb\tc\n1\t0.5\t\nx\t1\t2.25\n"
    (tmp_path / "t.tsv").write_text(text)
    assert read_tsv(tmp_path / "t.tsv")[1] == {"a": "x", "b": "1", "c": "2.25"}
    assert HEADER.size == 16

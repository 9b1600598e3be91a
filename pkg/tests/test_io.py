import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scanreg.errors import IoError, ParseError, UnsupportedFormat
from scanreg.geometry import RigidTransform, random_transform
from scanreg.io import (
    TransformRecord,
    infer_format,
    load_cloud,
    load_transforms,
    save_cloud,
    save_json,
    save_transforms,
)

ASCII_PLY = """ply
format ascii 1.0
comment three vertices with colour
element vertex 3
property float x
property float y
property float z
property uchar red
element face 1
property list uchar int vertex_indices
end_header
0.5 1 -2 255
3.25 4 5 0
-1e3 0 7.125 12
3 0 1 2
"""


def test_ascii_ply_fixture(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(ASCII_PLY)
    assert load_cloud(path).tolist() == [[0.5, 1, -2], [3.25, 4, 5], [-1000, 0, 7.125]]


def test_xyz_with_comments_and_blanks(tmp_path):
    path = tmp_path / "pts.xyz"
    path.write_text("# header\n\n1 2 3\n  4,5,6   # trailing\n\n7 8 9 0.5\n")
    assert load_cloud(path).tolist() == [[1, 2, 3], [4, 5, 6], [7, 8, 9]]


def test_binary_ply_roundtrip(tmp_path, rng):
    cloud = rng.normal(size=(500, 3)) * 1e3
    save_cloud(cloud, tmp_path / "c.ply")
    assert np.array_equal(load_cloud(tmp_path / "c.ply"), cloud)


def test_ascii_roundtrips_and_digits(tmp_path, rng):
    cloud = rng.normal(size=(50, 3)) / 7
    for fmt, name in (("ply-ascii", "c.ply"), ("xyz", "c.xyz")):
        save_cloud(cloud, tmp_path / name, fmt)
        assert np.array_equal(load_cloud(tmp_path / name), cloud)
    body = (tmp_path / "c.xyz").read_text().split()
    for token in body:
        mantissa = token.lower().split("e")[0].lstrip("-").replace(".", "").lstrip("0")
        assert len(mantissa) >= 9


def test_empty_cloud(tmp_path):
    save_cloud(np.zeros((0, 3)), tmp_path / "e.ply")
    assert b"element vertex 0" in (tmp_path / "e.ply").read_bytes()
    assert load_cloud(tmp_path / "e.ply").shape == (0, 3)


def test_binary_ply_with_extra_properties(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty float f\n"
        "element vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
        "property float confidence\nend_header\n"
    ).encode()
    body = struct.pack("<f", 9.0) + struct.pack("<4f", 1, 2, 3, 0.5) + struct.pack("<4f", 4, 5, 6, 0.25)
    (tmp_path / "b.ply").write_bytes(header + body)
    assert load_cloud(tmp_path / "b.ply").tolist() == [[1, 2, 3], [4, 5, 6]]


@pytest.mark.parametrize(
    "text",
    [
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        "ply\nformat ascii 1.0\nelement vertex two\nend_header\n",
        "ply\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n",
        "not a ply file",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 a 3\n",
    ],
)
def test_malformed_ply(tmp_path, text):
    (tmp_path / "bad.ply").write_text(text)
    with pytest.raises(ParseError):
        load_cloud(tmp_path / "bad.ply")


def test_truncated_binary(tmp_path):
    save_cloud(np.ones((10, 3)), tmp_path / "c.ply")
    raw = (tmp_path / "c.ply").read_bytes()
    (tmp_path / "c.ply").write_bytes(raw[:-8])
    with pytest.raises(ParseError):
        load_cloud(tmp_path / "c.ply")


def test_unsupported_formats(tmp_path):
    (tmp_path / "big.ply").write_text(
        "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with pytest.raises(UnsupportedFormat):
        load_cloud(tmp_path / "big.ply")
    with pytest.raises(UnsupportedFormat):
        infer_format("mesh.obj")
    with pytest.raises(UnsupportedFormat):
        save_cloud(np.zeros((1, 3)), tmp_path / "x.ply", "stl")


def test_bad_xyz_rows(tmp_path):
    (tmp_path / "a.xyz").write_text("1 2\n")
    with pytest.raises(ParseError):
        load_cloud(tmp_path / "a.xyz")
    (tmp_path / "b.xyz").write_text("1 2 x\n")
    with pytest.raises(ParseError):
        load_cloud(tmp_path / "b.xyz")


def test_io_errors(tmp_path):
    with pytest.raises(IoError):
        load_cloud(tmp_path / "missing.ply")
    with pytest.raises(IoError):
        save_cloud(np.zeros((1, 3)), tmp_path / "no" / "such" / "dir.ply")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    save_cloud(np.zeros((3, 3)), tmp_path / "a.ply")
    save_transforms([TransformRecord("s", RigidTransform.identity())], tmp_path / "t.json")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.ply", "t.json"]


# --- transforms ------------------------------------------------------------------


def test_identity_record_roundtrip(tmp_path):
    save_transforms([TransformRecord("scan_0", RigidTransform.identity())], tmp_path / "t.json")
    (rec,) = load_transforms(tmp_path / "t.json")
    assert rec.scan == "scan_0" and np.array_equal(rec.transform.R, np.eye(3))
    assert np.array_equal(rec.transform.t, np.zeros(3))


def test_one_record_per_line(tmp_path, rng):
    recs = [TransformRecord(i, random_transform(rng), 0.1 * i, i) for i in range(4)]
    save_transforms(recs, tmp_path / "t.json")
    lines = (tmp_path / "t.json").read_text().splitlines()
    assert sum('"rotation"' in line for line in lines) == 4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_transform_roundtrip(tmp_path_factory, seed, n):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("t") / "t.json"
    recs = [TransformRecord(f"s{i}", random_transform(rng, np.pi, 1e3), rng.random(), i) for i in range(n)]
    save_transforms(recs, path)
    for a, b in zip(recs, load_transforms(path)):
        assert np.max(np.abs(a.transform.R - b.transform.R)) <= 1e-12
        assert np.max(np.abs(a.transform.t - b.transform.t)) <= 1e-12
        assert (a.scan, a.tmse, a.pass_index) == (b.scan, b.tmse, b.pass_index)


@pytest.mark.parametrize("field", ["scan", "rotation", "translation", "tmse", "pass"])
def test_missing_field_is_named(tmp_path, field):
    rec = TransformRecord("s", RigidTransform.identity()).as_dict()
    del rec[field]
    (tmp_path / "t.json").write_text(json.dumps({"transforms": [rec]}))
    with pytest.raises(ParseError, match=repr(field)):
        load_transforms(tmp_path / "t.json")


def test_invalid_rotation_rejected(tmp_path):
    rec = TransformRecord("s", RigidTransform.identity()).as_dict()
    rec["rotation"] = [1, 0, 0, 0, 1, 0, 0, 0, 2]
    (tmp_path / "t.json").write_text(json.dumps({"transforms": [rec]}))
    with pytest.raises(ParseError, match="rotation"):
        load_transforms(tmp_path / "t.json")


def test_malformed_transform_documents(tmp_path):
    for text in ("{", "[]", '{"transforms": 3}', '{"transforms": [1]}'):
        (tmp_path / "t.json").write_text(text)
        with pytest.raises(ParseError):
            load_transforms(tmp_path / "t.json")


def test_save_json(tmp_path):
    save_json({"b": 1, "a": [1, 2]}, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": [1, 2], "b": 1}

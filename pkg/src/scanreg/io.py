"""Reading and writing point clouds and transform files.

Clouds: PLY (ascii and binary little endian, vertex positions only) and
whitespace-separated XYZ with ``#`` comments. Transforms: a JSON document
with one record per scan. Every write goes to a temporary file in the
target directory first and is then renamed into place.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoError, ParseError, UnsupportedFormat
from .geometry import RigidTransform
from .spatial import as_cloud

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}  # fmt: skip

FORMATS = ("ply", "ply-ascii", "xyz")


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err


def infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return "ply"
    if suffix in (".xyz", ".txt", ".pts"):
        return "xyz"
    raise UnsupportedFormat(f"cannot infer cloud format from {Path(path).name!r}")


@dataclass
class _Element:
    name: str
    count: int
    properties: list  # (name, dtype) or (name, count dtype, item dtype) for lists

    @property
    def has_list(self) -> bool:
        return any(len(p) == 3 for p in self.properties)


def _parse_header(raw: bytes) -> tuple[str, list[_Element], int]:
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing magic or end_header)")
    body_start = raw.index(b"\n", end) + 1 if b"\n" in raw[end:] else len(raw)
    lines = raw[:end].decode("ascii", errors="replace").splitlines()[1:]
    fmt = None
    elements: list[_Element] = []
    for line in lines:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise ParseError(f"malformed format line: {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"malformed element line: {line!r}")
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count: {line!r}") from None
            if count < 0:
                raise ParseError(f"negative element count: {line!r}")
            elements.append(_Element(tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element")
            try:
                if tok[1] == "list":
                    elements[-1].properties.append((tok[4], PLY_TYPES[tok[2]], PLY_TYPES[tok[3]]))
                else:
                    elements[-1].properties.append((tok[2], PLY_TYPES[tok[1]]))
            except (IndexError, KeyError):
                raise ParseError(f"malformed property line: {line!r}") from None
        else:
            raise ParseError(f"unexpected header line: {line!r}")
    if fmt is None:
        raise ParseError("PLY header has no format line")
    return fmt, elements, body_start


def _vertex_columns(element: _Element) -> list[str]:
    names = [p[0] for p in element.properties]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}")
    return names


def _load_ply(raw: bytes) -> np.ndarray:
    fmt, elements, start = _parse_header(raw)
    vertex_pos = next((i for i, e in enumerate(elements) if e.name == "vertex"), None)
    if vertex_pos is None:
        raise ParseError("PLY file has no vertex element")
    vertex = elements[vertex_pos]
    names = _vertex_columns(vertex)

    if fmt == "ascii":
        lines = raw[start:].decode("ascii", errors="replace").splitlines()
        skip = 0
        for e in elements[:vertex_pos]:
            skip += e.count
        rows = lines[skip : skip + vertex.count]
        if len(rows) < vertex.count:
            raise ParseError(f"expected {vertex.count} vertices, found {len(rows)}")
        if vertex.count == 0:
            return np.zeros((0, 3))
        cols = [names.index(a) for a in "xyz"]
        try:
            table = [row.split() for row in rows]
            return np.array([[float(r[c]) for c in cols] for r in table], dtype=float)
        except (ValueError, IndexError):
            raise ParseError("malformed vertex row") from None

    if fmt == "binary_little_endian":
        offset = start
        for e in elements[:vertex_pos]:
            if e.has_list:
                raise UnsupportedFormat(f"binary element {e.name!r} with list properties precedes the vertices")
            offset += e.count * np.dtype([(p[0], "<" + p[1]) for p in e.properties]).itemsize
        if vertex.has_list:
            raise UnsupportedFormat("binary vertex element with list properties")
        dtype = np.dtype([(p[0], "<" + p[1]) for p in vertex.properties])
        need = offset + vertex.count * dtype.itemsize
        if len(raw) < need:
            raise ParseError(f"expected {vertex.count} vertices, file is truncated")
        data = np.frombuffer(raw, dtype=dtype, count=vertex.count, offset=offset)
        return np.column_stack([data[a].astype(float) for a in "xyz"]).reshape(-1, 3)

    raise UnsupportedFormat(f"PLY format {fmt!r} is not supported")


def _load_xyz(raw: bytes) -> np.ndarray:
    rows = []
    for n, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.replace(",", " ").split()
        if len(tok) < 3:
            raise ParseError(f"line {n}: expected three coordinates")
        try:
            rows.append([float(t) for t in tok[:3]])
        except ValueError:
            raise ParseError(f"line {n}: non-numeric coordinate") from None
    return np.array(rows, dtype=float).reshape(-1, 3)


def load_cloud(path, fmt: str | None = None) -> np.ndarray:
    """Vertex positions from a PLY or XYZ file, in stored order."""
    fmt = fmt or infer_format(path)
    raw = _read_bytes(path)
    if fmt in ("ply", "ply-ascii"):
        return _load_ply(raw)
    if fmt == "xyz":
        return _load_xyz(raw)
    raise UnsupportedFormat(f"unknown cloud format {fmt!r}")


def _format_rows(cloud: np.ndarray) -> str:
    return "".join(f"{x:.16e} {y:.16e} {z:.16e}\n" for x, y, z in cloud.tolist())


def save_cloud(cloud, path, fmt: str | None = None) -> None:
    """Write a cloud. ``ply`` is binary little endian, ``ply-ascii`` text.

    Text formats print 17 significant digits per coordinate, which reads
    back exactly.
    """
    cloud = as_cloud(cloud)
    fmt = fmt or infer_format(path)
    if fmt == "xyz":
        _atomic_write(path, _format_rows(cloud).encode())
        return
    if fmt not in ("ply", "ply-ascii"):
        raise UnsupportedFormat(f"unknown cloud format {fmt!r}")
    binary = fmt == "ply"
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(cloud)}\n"
        f"property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    ).encode()
    body = cloud.astype("<f8").tobytes() if binary else _format_rows(cloud).encode()
    _atomic_write(path, header + body)


@dataclass
class TransformRecord:
    scan: str | int
    transform: RigidTransform
    tmse: float = 0.0
    pass_index: int = 0

    def as_dict(self) -> dict:
        return {
            "scan": self.scan,
            "rotation": self.transform.R.ravel().tolist(),
            "translation": self.transform.t.tolist(),
            "tmse": float(self.tmse),
            "pass": int(self.pass_index),
        }


_FIELDS = ("scan", "rotation", "translation", "tmse", "pass")


def _record_from_dict(entry: dict, n: int) -> TransformRecord:
    if not isinstance(entry, dict):
        raise ParseError(f"record {n} is not an object")
    for name in _FIELDS:
        if name not in entry:
            raise ParseError(f"record {n} is missing field {name!r}")
    try:
        R = np.array(entry["rotation"], dtype=float)
        t = np.array(entry["translation"], dtype=float)
        tmse, pass_index = float(entry["tmse"]), int(entry["pass"])
    except (TypeError, ValueError):
        raise ParseError(f"record {n} has a non-numeric field") from None
    if R.shape != (9,):
        raise ParseError(f"record {n}: field 'rotation' needs 9 entries")
    if t.shape != (3,):
        raise ParseError(f"record {n}: field 'translation' needs 3 entries")
    T = RigidTransform(R.reshape(3, 3), t)
    if not T.is_valid(1e-6):
        raise ParseError(f"record {n}: field 'rotation' is not a rotation matrix")
    return TransformRecord(entry["scan"], T, tmse, pass_index)


def save_transforms(records, path) -> None:
    lines = ",\n".join("  " + json.dumps(r.as_dict()) for r in records)
    text = '{"transforms": [\n' + lines + "\n]}\n" if records else '{"transforms": []}\n'
    _atomic_write(path, text.encode())


def load_transforms(path) -> list[TransformRecord]:
    try:
        doc = json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ParseError(f"{path}: {err}") from err
    if not isinstance(doc, dict) or "transforms" not in doc:
        raise ParseError(f"{path}: missing field 'transforms'")
    if not isinstance(doc["transforms"], list):
        raise ParseError(f"{path}: field 'transforms' must be a list")
    return [_record_from_dict(e, n) for n, e in enumerate(doc["transforms"])]


def save_json(obj, path) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())

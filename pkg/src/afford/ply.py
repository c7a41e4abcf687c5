"""PLY point-cloud reader and writer (ASCII and binary little-endian).

Vertex x,y,z (float or double) are required; nx,ny,nz and uchar red,green,blue
are recognized. Other elements and properties are skipped. Binary output uses
double precision so a save/load round trip preserves coordinates exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyCloud, IoFailure, MalformedFile, NonFiniteData
from .geometry import PointCloud
from .jsonio import format_float

_SCALAR_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Property:
    name: str
    dtype: Optional[str]          # None for list properties
    count_dtype: Optional[str] = None
    item_dtype: Optional[str] = None

    @property
    def is_list(self) -> bool:
        return self.dtype is None


@dataclass
class _Element:
    name: str
    count: int
    properties: list[_Property] = field(default_factory=list)


def _parse_header(raw: bytes) -> tuple[list[_Element], str, int]:
    """Returns (elements, format, payload offset)."""
    end = raw.find(b"end_header")
    if end < 0:
        raise MalformedFile("missing end_header")
    nl = raw.find(b"\n", end)
    if nl < 0:
        raise MalformedFile("header not terminated by newline")
    header = raw[:nl].decode("ascii", errors="replace")
    lines = [ln.strip() for ln in header.splitlines() if ln.strip()]
    if not lines or lines[0] != "ply":
        raise MalformedFile("not a PLY file (missing 'ply' magic)")

    fmt = None
    elements: list[_Element] = []
    for line in lines[1:]:
        parts = line.split()
        kw = parts[0]
        if kw == "format":
            if len(parts) < 2:
                raise MalformedFile("malformed format line")
            fmt = parts[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise MalformedFile(f"unsupported PLY format {fmt!r}")
        elif kw == "element":
            if len(parts) != 3:
                raise MalformedFile(f"malformed element line: {line!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise MalformedFile(f"bad element count in {line!r}") from None
            if count < 0:
                raise MalformedFile(f"negative element count in {line!r}")
            elements.append(_Element(parts[1], count))
        elif kw == "property":
            if not elements:
                raise MalformedFile("property before any element")
            if len(parts) >= 5 and parts[1] == "list":
                if parts[2] not in _SCALAR_DTYPES or parts[3] not in _SCALAR_DTYPES:
                    raise MalformedFile(f"unknown list property types in {line!r}")
                elements[-1].properties.append(
                    _Property(parts[4], None, _SCALAR_DTYPES[parts[2]],
                              _SCALAR_DTYPES[parts[3]])
                )
            elif len(parts) == 3:
                if parts[1] not in _SCALAR_DTYPES:
                    raise MalformedFile(f"unknown property type in {line!r}")
                elements[-1].properties.append(_Property(parts[2], _SCALAR_DTYPES[parts[1]]))
            else:
                raise MalformedFile(f"malformed property line: {line!r}")
        elif kw == "comment" or kw == "obj_info":
            continue
        elif kw == "end_header":
            break
        else:
            raise MalformedFile(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise MalformedFile("missing format line")
    return elements, fmt, nl + 1


def _vertex_dtype(elem: _Element) -> np.dtype:
    if any(p.is_list for p in elem.properties):
        raise MalformedFile("list properties on vertex element are not supported")
    return np.dtype([(p.name, "<" + p.dtype) for p in elem.properties])


def _read_binary(elem: _Element, body: bytes, offset: int) -> tuple[np.ndarray, int]:
    dt = _vertex_dtype(elem)
    nbytes = dt.itemsize * elem.count
    if offset + nbytes > len(body):
        raise MalformedFile(
            f"element {elem.name!r} declares {elem.count} rows but payload is truncated"
        )
    rows = np.frombuffer(body, dtype=dt, count=elem.count, offset=offset)
    return rows, offset + nbytes


def _skip_binary(elem: _Element, body: bytes, offset: int) -> int:
    lists = [p for p in elem.properties if p.is_list]
    if not lists:
        row = sum(np.dtype(p.dtype).itemsize for p in elem.properties)
        end = offset + row * elem.count
        if end > len(body):
            raise MalformedFile(f"element {elem.name!r} payload is truncated")
        return end
    for _ in range(elem.count):
        for p in elem.properties:
            if p.is_list:
                cdt = np.dtype("<" + p.count_dtype)
                if offset + cdt.itemsize > len(body):
                    raise MalformedFile(f"element {elem.name!r} payload is truncated")
                n = int(np.frombuffer(body, cdt, 1, offset)[0])
                offset += cdt.itemsize + n * np.dtype(p.item_dtype).itemsize
            else:
                offset += np.dtype(p.dtype).itemsize
        if offset > len(body):
            raise MalformedFile(f"element {elem.name!r} payload is truncated")
    return offset


def _read_ascii_rows(lines: list[str], pos: int, elem: _Element) -> tuple[np.ndarray, int]:
    dt = _vertex_dtype(elem)
    ncols = len(elem.properties)
    if pos + elem.count > len(lines):
        raise MalformedFile(
            f"element {elem.name!r} declares {elem.count} rows but file has fewer"
        )
    out = np.empty(elem.count, dtype=dt)
    names = dt.names
    for r in range(elem.count):
        parts = lines[pos + r].split()
        if len(parts) < ncols:
            raise MalformedFile(f"short row in element {elem.name!r}: {lines[pos + r]!r}")
        try:
            for c, name in enumerate(names):
                out[name][r] = float(parts[c])
        except ValueError:
            raise MalformedFile(f"non-numeric value in row {lines[pos + r]!r}") from None
    return out, pos + elem.count


def load_ply(path) -> PointCloud:
    """Load a PLY file into a PointCloud.

    Normals are attached when nx,ny,nz properties are present. Unknown
    elements are skipped with a warning.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    elements, fmt, payload_off = _parse_header(raw)

    vertex_rows = None
    if fmt == "binary_little_endian":
        offset = payload_off
        for elem in elements:
            if elem.name == "vertex" and vertex_rows is None:
                vertex_rows, offset = _read_binary(elem, raw, offset)
            else:
                warnings.warn(f"skipping PLY element {elem.name!r} in {path.name}")
                offset = _skip_binary(elem, raw, offset)
    else:
        text = raw[payload_off:].decode("ascii", errors="replace")
        lines = [ln for ln in text.splitlines() if ln.strip()]
        pos = 0
        for elem in elements:
            if elem.name == "vertex" and vertex_rows is None:
                vertex_rows, pos = _read_ascii_rows(lines, pos, elem)
            else:
                warnings.warn(f"skipping PLY element {elem.name!r} in {path.name}")
                pos += elem.count  # one line per row regardless of property kinds
                if pos > len(lines):
                    raise MalformedFile(f"element {elem.name!r} payload is truncated")

    if vertex_rows is None:
        raise MalformedFile("no vertex element in file")
    if len(vertex_rows) == 0:
        raise EmptyCloud(f"{path} contains zero vertices")

    names = vertex_rows.dtype.names
    for need in ("x", "y", "z"):
        if need not in names:
            raise MalformedFile(f"vertex element lacks property {need!r}")
    pts = np.stack(
        [vertex_rows["x"], vertex_rows["y"], vertex_rows["z"]], axis=1
    ).astype(np.float64)
    if not np.isfinite(pts).all():
        raise NonFiniteData(f"{path} contains non-finite coordinates")

    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.stack(
            [vertex_rows["nx"], vertex_rows["ny"], vertex_rows["nz"]], axis=1
        ).astype(np.float64)
        if not np.isfinite(normals).all():
            raise NonFiniteData(f"{path} contains non-finite normals")
        lengths = np.linalg.norm(normals, axis=1)
        if not np.allclose(lengths, 1.0, atol=1e-6, rtol=0.0):
            raise MalformedFile(f"{path} normals are not unit length")
    return PointCloud(pts, normals)


def save_ply(
    cloud: PointCloud,
    path,
    format: str = "binary",
    colors: Optional[np.ndarray] = None,
) -> None:
    """Write a cloud as PLY. `format` is 'ascii' or 'binary'.

    `colors`, when given, must be (N, 3) uint8 RGB. Binary files store
    double-precision coordinates, so round trips are bit exact.
    """
    if cloud.is_empty:
        raise EmptyCloud("refusing to write an empty cloud")
    if format not in ("ascii", "binary"):
        raise ValueError(f"format must be 'ascii' or 'binary', got {format!r}")
    n = len(cloud)
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != (n, 3):
            raise ValueError(f"colors must have shape ({n}, 3), got {colors.shape}")
        colors = colors.astype(np.uint8)

    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    header = [
        "ply",
        "format ascii 1.0" if format == "ascii" else "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if cloud.normals is not None:
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
        header += ["property double nx", "property double ny", "property double nz"]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    rows = np.empty(n, dtype=np.dtype(fields))
    rows["x"], rows["y"], rows["z"] = cloud.points.T
    if cloud.normals is not None:
        rows["nx"], rows["ny"], rows["nz"] = cloud.normals.T
    if colors is not None:
        rows["red"], rows["green"], rows["blue"] = colors.T

    try:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            if format == "binary":
                f.write(rows.tobytes())
            else:
                float_cols = [name for name, dt in fields if dt == "<f8"]
                byte_cols = [name for name, dt in fields if dt == "u1"]
                for r in rows:
                    cells = [format_float(r[c]) for c in float_cols]
                    cells += [str(int(r[c])) for c in byte_cols]
                    f.write((" ".join(cells) + "\n").encode("ascii"))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e

"""File formats: text scans, JSON vector maps, binary SDF grids, run manifests.

Floats are written with ``repr`` (shortest round-tripping form), so text
round trips are bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .core import CONFIG_FIELDS, CompositeScan, Config
from .extract import LineFeature
from .mapupdate import VectorMap
from .sdf import SdfGrid

MAP_FORMAT = "ltvm-map"
MAP_VERSION = 1
SDF_MAGIC = b"LTSD"
SDF_VERSION = 1
# magic, version, float width, normalized, origin x/y, resolution, width, height, deployments
_SDF_HEADER = struct.Struct("<4sIBB2xdddIIQ")
_LINE_KEYS = ("p1", "p2", "q1", "q2", "centroid", "mass", "scatter")
_SHAPES = {"p1": (2,), "p2": (2,), "centroid": (2,), "q1": (2, 2), "q2": (2, 2), "scatter": (2, 2)}
LABEL_CODES = {"LTF": 0, "STF": 1, "DF": 2}


class FormatError(ValueError):
    """Malformed or incompatible file; ``location`` names where it went wrong."""

    def __init__(self, path, location: str, message: str):
        super().__init__(f"{path}: {location}: {message}")
        self.path = str(path)
        self.location = location


class VersionError(FormatError):
    pass


# ---------------------------------------------------------------- scans


def format_scan(scan: CompositeScan) -> str:
    out = ["# rho alpha x y theta"]
    for row in zip(scan.rho.tolist(), scan.alpha.tolist(), scan.x.tolist(),
                   scan.y.tolist(), scan.theta.tolist()):
        out.append(" ".join(repr(v) for v in row))
    return "\n".join(out) + "\n"


def write_scan(path, scan: CompositeScan) -> None:
    Path(path).write_text(format_scan(scan))


def parse_scan(text: str, source="<string>", deployment_id: int = 0) -> CompositeScan:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(source, f"line {lineno}", f"expected 5 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise FormatError(source, f"line {lineno}", f"non-numeric field in {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise FormatError(source, f"line {lineno}", "non-finite value")
        if not vals[0] > 0.0:
            raise FormatError(source, f"line {lineno}", f"range must be positive, got {vals[0]!r}")
        rows.append(vals)
    if not rows:
        return CompositeScan.empty(deployment_id)
    a = np.array(rows)
    return CompositeScan(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4], deployment_id)


def read_scan(path, deployment_id: int = 0) -> CompositeScan:
    path = Path(path)
    return parse_scan(path.read_text(), path, deployment_id)


def write_labels(path, labels) -> None:
    names = {v: k for k, v in LABEL_CODES.items()}
    Path(path).write_text("# one label per scan record\n" + "".join(f"{names[int(l)]}\n" for l in labels))


def read_labels(path) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line not in LABEL_CODES:
            raise FormatError(path, f"line {lineno}", f"unknown label {line!r}")
        out.append(LABEL_CODES[line])
    return np.array(out, dtype=np.int8)


# ---------------------------------------------------------------- maps


def _line_record(line: LineFeature) -> dict:
    return {k: (float(getattr(line, k)) if k == "mass" else np.asarray(getattr(line, k)).tolist())
            for k in _LINE_KEYS}


def format_map(vmap: VectorMap) -> str:
    head = {"format": MAP_FORMAT, "format_version": MAP_VERSION,
            "deployment_count": vmap.deployment_count, "config": vmap.config_snapshot.as_dict()}
    body = ",\n".join(json.dumps(_line_record(l), separators=(",", ":"), allow_nan=False)
                      for l in vmap.lines)
    head_txt = json.dumps(head, separators=(",", ":"), allow_nan=False)
    return head_txt[:-1] + ',"lines":[\n' + body + ("\n" if body else "") + "]}\n"


def write_map(path, vmap: VectorMap) -> None:
    Path(path).write_text(format_map(vmap))


def _line_from_record(rec, path, i) -> LineFeature:
    where = f"lines[{i}]"
    if not isinstance(rec, dict):
        raise FormatError(path, where, "expected an object")
    if set(rec) != set(_LINE_KEYS):
        extra, missing = set(rec) - set(_LINE_KEYS), set(_LINE_KEYS) - set(rec)
        raise FormatError(path, where, f"unknown fields {sorted(extra)}, missing {sorted(missing)}")
    vals = {}
    for k in _LINE_KEYS:
        if k == "mass":
            if not isinstance(rec[k], (int, float)) or isinstance(rec[k], bool):
                raise FormatError(path, f"{where}.mass", "expected a number")
            vals[k] = float(rec[k])
            continue
        try:
            arr = np.array(rec[k], dtype=float)
        except (TypeError, ValueError):
            raise FormatError(path, f"{where}.{k}", "expected numbers") from None
        if arr.shape != _SHAPES[k]:
            raise FormatError(path, f"{where}.{k}", f"expected shape {_SHAPES[k]}, got {arr.shape}")
        vals[k] = arr
    try:
        return LineFeature(**vals)
    except ValueError as exc:
        raise FormatError(path, where, str(exc)) from None


def parse_map(text: str, source="<string>") -> VectorMap:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode())
        raise FormatError(source, f"byte {offset}", exc.msg) from None
    if not isinstance(doc, dict):
        raise FormatError(source, "byte 0", "expected a JSON object")
    if doc.get("format") != MAP_FORMAT:
        raise FormatError(source, "format", f"not a vector map file ({doc.get('format')!r})")
    version = doc.get("format_version")
    if version != MAP_VERSION:
        raise VersionError(source, "format_version", f"unsupported version {version!r}, expected {MAP_VERSION}")
    expected = {"format", "format_version", "deployment_count", "config", "lines"}
    if set(doc) != expected:
        raise FormatError(source, "top level", f"unknown fields {sorted(set(doc) - expected)}, "
                                               f"missing {sorted(expected - set(doc))}")
    cfg = doc["config"]
    if not isinstance(cfg, dict) or set(cfg) != set(CONFIG_FIELDS):
        raise FormatError(source, "config", "config snapshot must list exactly the configuration fields")
    try:
        config = Config(**cfg)
    except (TypeError, ValueError) as exc:
        raise FormatError(source, "config", str(exc)) from None
    count = doc["deployment_count"]
    if not isinstance(count, int) or isinstance(count, bool) or count < 0:
        raise FormatError(source, "deployment_count", "expected a non-negative integer")
    if not isinstance(doc["lines"], list):
        raise FormatError(source, "lines", "expected a list")
    lines = tuple(_line_from_record(r, source, i) for i, r in enumerate(doc["lines"]))
    return VectorMap(lines, count, config)


def read_map(path) -> VectorMap:
    path = Path(path)
    return parse_map(path.read_text(), path)


# ---------------------------------------------------------------- SDF grids


def sdf_to_bytes(grid: SdfGrid, dtype=np.float64) -> bytes:
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("SDF planes are stored as float32 or float64")
    head = _SDF_HEADER.pack(SDF_MAGIC, SDF_VERSION, dtype.itemsize, int(grid.normalized),
                            float(grid.origin[0]), float(grid.origin[1]), float(grid.resolution),
                            grid.width, grid.height, int(grid.deployment_count))
    le = dtype.newbyteorder("<")
    planes = b"".join(np.ascontiguousarray(p, dtype=le).tobytes()
                      for p in (grid.values, grid.weights, grid.counts))
    return head + planes


def write_sdf(path, grid: SdfGrid, dtype=np.float64) -> None:
    Path(path).write_bytes(sdf_to_bytes(grid, dtype))


def sdf_from_bytes(data: bytes, source="<bytes>") -> SdfGrid:
    if len(data) < _SDF_HEADER.size:
        raise FormatError(source, f"byte {len(data)}", f"truncated header ({_SDF_HEADER.size} bytes needed)")
    magic, version, width_bytes, normalized, ox, oy, q, w, h, deployments = _SDF_HEADER.unpack_from(data)
    if magic != SDF_MAGIC:
        raise FormatError(source, "byte 0", "not an SDF grid file")
    if version != SDF_VERSION:
        raise VersionError(source, "byte 4", f"unsupported version {version}, expected {SDF_VERSION}")
    if width_bytes not in (4, 8):
        raise FormatError(source, "byte 8", f"bad float width {width_bytes}")
    dtype = np.dtype("<f4" if width_bytes == 4 else "<f8")
    plane = w * h * width_bytes
    need = _SDF_HEADER.size + 3 * plane
    if len(data) != need:
        raise FormatError(source, f"byte {min(len(data), need)}",
                          f"expected {need} bytes for a {h}x{w} grid, found {len(data)}")
    planes = [np.frombuffer(data, dtype=dtype, count=w * h, offset=_SDF_HEADER.size + k * plane)
              .astype(np.float64).reshape(h, w) for k in range(3)]
    return SdfGrid((ox, oy), q, planes[0], planes[1], planes[2], bool(normalized), int(deployments))


def read_sdf(path) -> SdfGrid:
    path = Path(path)
    return sdf_from_bytes(path.read_bytes(), path)


def sdf_plane_image(grid: SdfGrid, field: str = "weights") -> np.ndarray:
    """8-bit grayscale image of a plane, north up.

    Weights map [0, 1] to black..white; values map [-delta, delta] using
    the largest magnitude present.
    """
    if field == "weights":
        plane = np.clip(grid.weights, 0.0, 1.0)
    elif field == "values":
        span = float(np.abs(grid.values).max()) or 1.0
        plane = (grid.values / span + 1.0) / 2.0
    else:
        raise ValueError(f"unknown field {field!r}")
    return np.flipud(np.round(plane * 255.0).astype(np.uint8))


def write_sdf_png(path, grid: SdfGrid, field: str = "weights") -> None:
    from PIL import Image
    Image.fromarray(sdf_plane_image(grid, field)).save(path)


# ---------------------------------------------------------------- manifests


def read_manifest(path) -> list[Path]:
    """Deployment scan files in order; relative entries resolve against the manifest's folder."""
    path = Path(path)
    out = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            p = Path(line)
            out.append(p if p.is_absolute() else path.parent / p)
    if not out:
        raise FormatError(path, "line 1", "manifest lists no deployments")
    return out


def write_manifest(path, scans) -> None:
    path = Path(path)
    lines = []
    for s in scans:
        s = Path(s)
        try:
            s = s.resolve().relative_to(path.parent.resolve())
        except ValueError:
            pass
        lines.append(str(s))
    path.write_text("# deployment scans, in order\n" + "\n".join(lines) + "\n")

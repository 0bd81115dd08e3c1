"""Point-cloud data model, ASCII ingestion, bounds and exact nearest-neighbour index."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, ParseError

DEFAULT_COLOR = (0.5, 0.5, 0.5)


@dataclass(frozen=True, eq=False)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self):
        return self.max - self.min

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    def contains(self, points, tol=0.0):
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.min - tol) & (p <= self.max + tol), axis=-1)

    def intersect(self, other):
        return Aabb(np.maximum(self.min, other.min), np.minimum(self.max, other.max))

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["min"], d["max"])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Colored point set; positions in meters, colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray = None
    frame_id: str = "world"

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.colors is None:
            col = np.tile(np.array(DEFAULT_COLOR), (len(pos), 1))
        else:
            col = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(col) != len(pos):
            raise ValueError(f"{len(pos)} positions but {len(col)} colors")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        if np.any((col < 0.0) | (col > 1.0)) or not np.all(np.isfinite(col)):
            raise ValueError("point colors must lie in [0, 1]")
        pos.flags.writeable = False
        col.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)

    def __len__(self):
        return len(self.positions)

    def crop(self, box):
        keep = box.contains(self.positions)
        return PointCloud(self.positions[keep], self.colors[keep], self.frame_id)

    @classmethod
    def concatenate(cls, clouds, frame_id="world"):
        clouds = list(clouds)
        if not clouds:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), frame_id)
        return cls(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.colors for c in clouds]),
            frame_id,
        )


def bounds(cloud):
    if len(cloud) == 0:
        raise EmptyInputError("cannot compute bounds of an empty cloud")
    return Aabb(cloud.positions.min(axis=0), cloud.positions.max(axis=0))


def bounding_radius(cloud):
    """Half the diagonal of the cloud's bounding box."""
    box = bounds(cloud)
    return 0.5 * float(np.linalg.norm(box.extent))


# --------------------------------------------------------------------------
# Ingestion
# --------------------------------------------------------------------------

def _read_text(source):
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if isinstance(data, bytes):
        data = data.decode("ascii", errors="strict")
    return data.splitlines()


def _parse_float(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric field {token!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r}", lineno)
    return value


def _parse_color(tokens, integer_scale, lineno):
    rgb = []
    for tok in tokens:
        if integer_scale:
            try:
                value = int(tok)
            except ValueError:
                raise ParseError(f"non-integer color {tok!r}", lineno) from None
            if not 0 <= value <= 255:
                raise ParseError(f"color {value} outside 0..255", lineno)
            rgb.append(value / 255.0)
        else:
            value = _parse_float(tok, lineno)
            if not 0.0 <= value <= 1.0:
                raise ParseError(f"color {value} outside [0, 1]", lineno)
            rgb.append(value)
    return rgb


_PLY_INT_TYPES = {"char", "uchar", "short", "ushort", "int", "uint",
                  "int8", "uint8", "int16", "uint16", "int32", "uint32"}
_PLY_FLOAT_TYPES = {"float", "double", "float32", "float64"}


def _load_ply_ascii(lines):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    n_vertex = None
    props = []
    current = None
    seen_format = False
    body_start = None
    skip_before = 0  # lines of elements declared before the vertex element
    for i, raw in enumerate(lines[1:], start=2):
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 3 or parts[1] != "ascii":
                raise ParseError(f"unsupported format {raw.strip()!r}", i)
            seen_format = True
        elif key == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line {raw.strip()!r}", i)
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(f"bad element count {parts[2]!r}", i) from None
            current = parts[1]
            if current == "vertex":
                n_vertex = count
            elif n_vertex is None:
                skip_before += count
        elif key == "property":
            if current == "vertex":
                if len(parts) != 3:
                    raise ParseError(f"unsupported vertex property {raw.strip()!r}", i)
                ptype, name = parts[1], parts[2]
                if ptype not in _PLY_INT_TYPES | _PLY_FLOAT_TYPES:
                    raise ParseError(f"unknown property type {ptype!r}", i)
                props.append((name, ptype))
        elif key == "end_header":
            body_start = i
            break
        else:
            raise ParseError(f"unexpected header line {raw.strip()!r}", i)
    if body_start is None:
        raise ParseError("missing end_header", len(lines))
    if not seen_format:
        raise ParseError("missing format line", body_start)
    if n_vertex is None:
        raise ParseError("no vertex element declared", body_start)
    names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"vertex property {axis!r} missing", body_start)
    has_color = all(c in names for c in ("red", "green", "blue"))
    pos_idx = [names.index(a) for a in "xyz"]
    if has_color:
        col_idx = [names.index(c) for c in ("red", "green", "blue")]
        integer_color = props[col_idx[0]][1] in _PLY_INT_TYPES

    positions = np.empty((n_vertex, 3))
    colors = np.tile(np.array(DEFAULT_COLOR), (n_vertex, 1))
    first = body_start + skip_before  # 0-based index into `lines`
    for v in range(n_vertex):
        idx = first + v
        lineno = idx + 1
        if idx >= len(lines):
            raise ParseError(f"expected {n_vertex} vertices, file ended after {v}", lineno)
        parts = lines[idx].split()
        if len(parts) < len(props):
            raise ParseError(f"expected {len(props)} fields, got {len(parts)}", lineno)
        positions[v] = [_parse_float(parts[j], lineno) for j in pos_idx]
        if has_color:
            colors[v] = _parse_color([parts[j] for j in col_idx], integer_color, lineno)
    return PointCloud(positions, colors)


def _load_xyzrgb(lines):
    positions, colors = [], []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) not in (3, 6):
            raise ParseError(f"expected 3 or 6 columns, got {len(parts)}", lineno)
        positions.append([_parse_float(t, lineno) for t in parts[:3]])
        if len(parts) == 6:
            # all-integer color tokens are on the 0..255 scale
            integer_scale = all(t.lstrip("+-").isdigit() for t in parts[3:])
            colors.append(_parse_color(parts[3:], integer_scale, lineno))
        else:
            colors.append(list(DEFAULT_COLOR))
    return PointCloud(np.array(positions).reshape(-1, 3), np.array(colors).reshape(-1, 3))


def load_cloud(source, format="ply_ascii"):
    """Parse a point cloud from a path, bytes, or readable stream.

    ``format`` is ``"ply_ascii"`` or ``"xyzrgb_text"``. Malformed input raises
    :class:`ParseError` carrying the offending 1-based line number.
    """
    lines = _read_text(source)
    if format == "ply_ascii":
        return _load_ply_ascii(lines)
    if format == "xyzrgb_text":
        return _load_xyzrgb(lines)
    raise ValueError(f"unknown cloud format {format!r}")


def guess_format(path):
    ext = os.path.splitext(str(path))[1].lower()
    return "ply_ascii" if ext == ".ply" else "xyzrgb_text"


def save_ply_ascii(cloud, target):
    """Write ``cloud`` as ASCII PLY with uchar colors; byte-stable for equal input."""
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"comment frame {cloud.frame_id}\n")
    buf.write(f"element vertex {len(cloud)}\n")
    buf.write("property float x\nproperty float y\nproperty float z\n")
    buf.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
    buf.write("end_header\n")
    rgb = np.rint(cloud.colors * 255.0).astype(int)
    for p, c in zip(cloud.positions, rgb):
        buf.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n")
    data = buf.getvalue().encode("ascii")
    if isinstance(target, (str, os.PathLike)):
        with open(target, "wb") as fh:
            fh.write(data)
    else:
        target.write(data)


# --------------------------------------------------------------------------
# Exact nearest-neighbour index
# --------------------------------------------------------------------------

def _sq_dist(points, q):
    d = points - q
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    """Immutable k-d tree over a cloud snapshot with exact distance answers.

    The tree only proposes candidates; every reported distance is recomputed
    with the same arithmetic as a linear scan, so results match a brute-force
    search bit for bit. Ties resolve to the lowest point index.
    """

    points: np.ndarray
    _tree: cKDTree = field(repr=False)
    _k: int = field(default=4, repr=False)

    def nearest(self, queries):
        """Return ``(distances, indices)`` for an ``(M, 3)`` array of queries."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(self._k, len(self.points))
        approx, cand = self._tree.query(q, k=k)
        if k == 1:
            approx, cand = approx[:, None], cand[:, None]
        exact = _sq_dist(self.points[cand], q[:, None, :])
        # candidates in increasing index order so argmin breaks ties low
        order = np.argsort(cand, axis=1, kind="stable")
        cand = np.take_along_axis(cand, order, axis=1)
        exact = np.take_along_axis(exact, order, axis=1)
        pick = np.argmin(exact, axis=1)
        rows = np.arange(len(q))
        best_sq = exact[rows, pick]
        best_idx = cand[rows, pick]

        # Any point tied (to rounding) with the best may lie outside the k
        # proposals when the k-th proposal is itself that close; rescan those.
        if k < len(self.points):
            kth = approx[:, -1]
            ambiguous = np.flatnonzero(kth <= np.sqrt(best_sq) * (1 + 1e-9) + 1e-300)
            for r in ambiguous:
                radius = math.sqrt(best_sq[r]) * (1 + 1e-9) + 1e-12
                near = np.array(sorted(self._tree.query_ball_point(q[r], radius)), dtype=np.intp)
                d2 = _sq_dist(self.points[near], q[r])
                j = int(np.argmin(d2))
                best_sq[r], best_idx[r] = d2[j], near[j]
        return np.sqrt(best_sq), best_idx

    def nearest_distances(self, queries):
        return self.nearest(queries)[0]


def build_index(cloud):
    if len(cloud) == 0:
        raise EmptyInputError("cannot index an empty cloud")
    pts = cloud.positions
    tree = cKDTree(pts, balanced_tree=True, compact_nodes=True)
    return SpatialIndex(pts, tree)


def nearest_distance(index, query):
    """Exact minimum Euclidean distance from ``query`` to any indexed point."""
    return float(index.nearest(np.asarray(query, dtype=np.float64).reshape(1, 3))[0][0])

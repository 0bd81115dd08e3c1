"""Geodesic candidate viewpoints and look-at camera poses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DegenerateError, DomainError

MAX_LEVEL = 6
PARALLEL_TOL = 1e-6
WORLD_UP = (0.0, 0.0, 1.0)

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array([
    [-1.0, _PHI, 0.0], [1.0, _PHI, 0.0], [-1.0, -_PHI, 0.0], [1.0, -_PHI, 0.0],
    [0.0, -1.0, _PHI], [0.0, 1.0, _PHI], [0.0, -1.0, -_PHI], [0.0, 1.0, -_PHI],
    [_PHI, 0.0, -1.0], [_PHI, 0.0, 1.0], [-_PHI, 0.0, -1.0], [-_PHI, 0.0, 1.0],
])
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


@dataclass(frozen=True, eq=False)
class GeodesicSphere:
    level: int
    vertices: np.ndarray  # (V, 3) unit vectors
    faces: np.ndarray  # (F, 3) vertex indices, outward (counter-clockwise) winding


def _unit(v):
    return v / np.linalg.norm(v)


def subdivide_icosahedron(level):
    """Unit icosphere after ``level`` rounds of 1-to-4 edge-midpoint splitting.

    Shared edge midpoints are created once, so the mesh stays closed with
    ``10 * 4**level + 2`` vertices and ``20 * 4**level`` faces.
    """
    if level < 0:
        raise DomainError(f"subdivision level must be non-negative, got {level}")
    if level > MAX_LEVEL:
        raise CapacityError(f"subdivision level {level} exceeds maximum {MAX_LEVEL}")
    verts = [_unit(v) for v in _ICO_VERTICES]
    faces = list(_ICO_FACES)
    for _ in range(level):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                verts.append(_unit(verts[a] + verts[b]))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return GeodesicSphere(level, np.array(verts), np.array(faces, dtype=np.int64))


def paper_vertex_count(level):
    """Evaluate ``V(k) = 12 + 30k + (20/3)(4**k - 1)`` exactly in integers.

    This closed form is kept verbatim for comparison; it does not equal the
    vertex count of midpoint subdivision beyond ``k = 0``.
    """
    if level < 0:
        raise DomainError(f"level must be non-negative, got {level}")
    return 12 + 30 * level + 20 * (4 ** level - 1) // 3


def generate_candidates(focus, radius, level, min_elevation=None):
    """Camera positions ``focus + radius * v`` for every icosphere vertex ``v``.

    ``min_elevation`` (radians above the horizontal plane through ``focus``)
    optionally culls low candidates; ``None`` keeps the full sphere.
    """
    if not radius > 0:
        raise DomainError(f"candidate radius must be positive, got {radius}")
    focus = np.asarray(focus, dtype=np.float64).reshape(3)
    dirs = subdivide_icosahedron(level).vertices
    if min_elevation is not None:
        dirs = dirs[dirs[:, 2] >= math.sin(min_elevation)]
    return focus + radius * dirs


def look_at(eye, target, up_hint=WORLD_UP):
    """Return ``(right, true_up, forward)`` for a camera at ``eye`` facing ``target``.

    When ``up_hint`` is (nearly) parallel to the viewing direction it is
    replaced by the world axis least aligned with ``forward``.
    """
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    delta = target - eye
    norm = np.linalg.norm(delta)
    if norm == 0.0:
        raise DegenerateError("look_at requires eye != target")
    forward = delta / norm
    up = np.asarray(up_hint, dtype=np.float64).reshape(3)
    up_norm = np.linalg.norm(up)
    if up_norm == 0.0 or abs(forward @ up) / up_norm > 1.0 - PARALLEL_TOL:
        up = np.eye(3)[int(np.argmin(np.abs(forward)))]
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, forward)
    true_up /= np.linalg.norm(true_up)
    return right, true_up, forward


# --------------------------------------------------------------------------
# Camera poses
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Orthographic:
    extent: tuple  # (width m, height m) of the view window
    kind: str = field(default="orthographic", init=False)

    def to_dict(self):
        return {"kind": self.kind, "extent": list(self.extent)}


@dataclass(frozen=True, eq=False)
class Perspective:
    fov_alpha: float
    zoom_z: float = 1.0
    kind: str = field(default="perspective", init=False)

    def __post_init__(self):
        if not 0.0 < self.fov_alpha < math.pi:
            raise DomainError(f"fov_alpha must lie in (0, pi), got {self.fov_alpha}")
        if not self.zoom_z >= 1.0:
            raise DomainError(f"zoom_z must be >= 1, got {self.zoom_z}")

    @property
    def effective_fov(self):
        return self.fov_alpha / self.zoom_z

    def to_dict(self):
        return {"kind": self.kind, "fov_alpha": self.fov_alpha, "zoom_z": self.zoom_z}


@dataclass(frozen=True, eq=False)
class Projection:
    """Continuous pixel coordinates of projected points.

    ``u``/``v`` are column/row positions where pixel ``(r, c)`` covers
    ``[c, c+1) x [r, r+1)``; ``depth`` is the z-buffer key (axial for
    orthographic, Euclidean from the eye for perspective); ``inside`` marks
    points that land in the image and in front of the camera.
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    inside: np.ndarray

    def pixels(self):
        return np.floor(self.v).astype(np.int64), np.floor(self.u).astype(np.int64)


@dataclass(frozen=True, eq=False)
class CameraPose:
    eye: np.ndarray
    target: np.ndarray
    up: np.ndarray
    projection: object
    image_size: tuple = (224, 224)  # (width, height)

    def __post_init__(self):
        eye = np.asarray(self.eye, dtype=np.float64).reshape(3)
        target = np.asarray(self.target, dtype=np.float64).reshape(3)
        right, true_up, forward = look_at(eye, target, self.up)
        object.__setattr__(self, "eye", eye)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "up", true_up)
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        object.__setattr__(self, "_basis", (right, true_up, forward))

    @property
    def width(self):
        return self.image_size[0]

    @property
    def height(self):
        return self.image_size[1]

    @property
    def basis(self):
        return self._basis

    def rotation(self):
        """World-to-camera rotation with rows (right, up, -forward); det = +1."""
        right, up, forward = self._basis
        return np.stack([right, up, -forward])

    @property
    def distance(self):
        return float(np.linalg.norm(self.target - self.eye))

    def with_zoom(self, zoom_z):
        if not isinstance(self.projection, Perspective):
            raise DomainError("zoom requires a perspective pose")
        return CameraPose(self.eye, self.target, self.up,
                          Perspective(self.projection.fov_alpha, zoom_z), self.image_size)

    def project(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        right, up, forward = self._basis
        rel = pts - self.eye
        x = rel @ right
        y = rel @ up
        z = rel @ forward
        w, h = self.image_size
        proj = self.projection
        if isinstance(proj, Orthographic):
            ext_w, ext_h = proj.extent
            u = (x / ext_w + 0.5) * w
            v = (0.5 - y / ext_h) * h
            depth = z
            front = np.ones(len(pts), dtype=bool)
        else:
            half = math.tan(proj.effective_fov / 2.0)
            front = z > 1e-9
            zs = np.where(front, z, 1.0)
            # square pixels: vertical half-extent follows the aspect ratio
            u = (x / zs / half + 1.0) * 0.5 * w
            v = (1.0 - y / zs / (half * h / w)) * 0.5 * h
            depth = np.sqrt(_sq_norm(rel))
        inside = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
        return Projection(u, v, depth, inside)

    def to_dict(self):
        return {
            "eye": self.eye.tolist(),
            "target": self.target.tolist(),
            "up": self.up.tolist(),
            "projection": self.projection.to_dict(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d):
        p = d["projection"]
        if p["kind"] == "orthographic":
            proj = Orthographic(tuple(p["extent"]))
        else:
            proj = Perspective(p["fov_alpha"], p.get("zoom_z", 1.0))
        return cls(d["eye"], d["target"], d["up"], proj, tuple(d["image_size"]))


def _sq_norm(rel):
    return rel[:, 0] * rel[:, 0] + rel[:, 1] * rel[:, 1] + rel[:, 2] * rel[:, 2]


def perspective_pose(eye, target, fov_alpha, zoom_z=1.0, image_size=(224, 224), up_hint=WORLD_UP):
    return CameraPose(eye, target, up_hint, Perspective(fov_alpha, zoom_z), image_size)


def candidates_to_dict(focus, radius, level, positions):
    return {
        "focus": list(map(float, focus)),
        "radius": float(radius),
        "level": int(level),
        "candidates": [{"id": i, "position": p.tolist()} for i, p in enumerate(positions)],
    }

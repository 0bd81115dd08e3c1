"""Viewpoint scoring (visibility, distance, diversity) and top-K selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, DegenerateError, DomainError
from .viewsphere import CameraPose, Perspective

DEFAULT_WEIGHTS = (0.5, 0.25, 0.25)


@dataclass(frozen=True)
class ScoringWeights:
    w_vis: float = DEFAULT_WEIGHTS[0]
    w_dis: float = DEFAULT_WEIGHTS[1]
    w_div: float = DEFAULT_WEIGHTS[2]

    def __post_init__(self):
        ws = (self.w_vis, self.w_dis, self.w_div)
        if any(not 0.0 <= w <= 1.0 for w in ws):
            raise DomainError(f"weights must lie in [0, 1], got {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise DomainError(f"weights must sum to 1, got {sum(ws)}")

    def as_tuple(self):
        return (self.w_vis, self.w_dis, self.w_div)


@dataclass(frozen=True)
class VisibilityParams:
    num_samples: int = 32
    clearance_radius: float = 0.01
    focus_exclusion: float = None  # defaults to 2 * clearance_radius

    def __post_init__(self):
        if self.num_samples < 2:
            raise DomainError(f"num_samples must be >= 2, got {self.num_samples}")
        if not self.clearance_radius > 0:
            raise DomainError(f"clearance_radius must be positive, got {self.clearance_radius}")
        if self.focus_exclusion is None:
            object.__setattr__(self, "focus_exclusion", 2.0 * self.clearance_radius)
        if self.focus_exclusion < 0:
            raise DomainError(f"focus_exclusion must be >= 0, got {self.focus_exclusion}")

    def to_dict(self):
        return {"num_samples": self.num_samples, "clearance_radius": self.clearance_radius,
                "focus_exclusion": self.focus_exclusion}


@dataclass(eq=False)
class ViewCandidate:
    id: int
    position: np.ndarray
    direction: np.ndarray
    s_vis_raw: int
    s_dis_raw: float
    s_div_raw: float
    z: dict = field(default_factory=dict)
    composite: float = 0.0
    selected: bool = False
    rank: int = None

    def to_dict(self):
        return {
            "id": self.id,
            "position": self.position.tolist(),
            "s_vis_raw": int(self.s_vis_raw),
            "s_dis_raw": float(self.s_dis_raw),
            "s_div_raw": float(self.s_div_raw),
            "z": {k: float(v) for k, v in self.z.items()},
            "composite": float(self.composite),
            "selected": bool(self.selected),
            "rank": self.rank,
        }


# --------------------------------------------------------------------------
# Visibility
# --------------------------------------------------------------------------

def ray_samples(position, focus, num_samples):
    t = np.arange(num_samples) / (num_samples - 1)
    return position + t[:, None] * (focus - position)


def visibility_batch(positions, focus, index, params=VisibilityParams()):
    """Occlusion test for many camera positions with a single tree query.

    A view is clear when every ray sample farther than ``focus_exclusion``
    from the focus keeps at least ``clearance_radius`` from the cloud.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    focus = np.asarray(focus, dtype=np.float64).reshape(3)
    if np.any(np.all(positions == focus, axis=1)):
        raise DegenerateError("camera position coincides with the focus point")
    n = params.num_samples
    t = np.arange(n) / (n - 1)
    samples = positions[:, None, :] + t[None, :, None] * (focus - positions)[:, None, :]
    samples = samples.reshape(-1, 3)
    off = samples - focus
    keep = np.sqrt(off[:, 0] * off[:, 0] + off[:, 1] * off[:, 1] + off[:, 2] * off[:, 2]) >= params.focus_exclusion
    clear = np.ones(len(samples), dtype=bool)
    if np.any(keep):
        clear[keep] = index.nearest_distances(samples[keep]) >= params.clearance_radius
    return clear.reshape(len(positions), n).all(axis=1).astype(np.int64)


def visibility(position, focus, index, params=VisibilityParams()):
    return int(visibility_batch(np.asarray(position).reshape(1, 3), focus, index, params)[0])


# --------------------------------------------------------------------------
# Distance, diversity, normalisation
# --------------------------------------------------------------------------

def distance_raw(position, focus):
    return float(np.linalg.norm(np.asarray(position, dtype=np.float64) - np.asarray(focus, dtype=np.float64)))


def znorm(values):
    """Population z-scores; a (relatively) zero-variance input maps to zeros."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise DomainError("znorm needs at least one value")
    mean = x.mean()
    std = x.std()
    scale = np.max(np.abs(x))
    if std == 0.0 or std <= 1e-12 * scale:
        return np.zeros_like(x)
    return (x - mean) / std


def distance_score(raw_distances, mode="moderate"):
    """Shape raw camera distances into a preference score.

    ``moderate`` rewards closeness to the typical distance (``-|z|``);
    ``nearer`` is the monotone alternative (``-z``).
    """
    d = np.asarray(raw_distances, dtype=np.float64)
    if d.size == 0:
        raise DomainError("distance_score needs at least one value")
    z = znorm(d)
    if mode == "moderate":
        return -np.abs(z)
    if mode == "nearer":
        return -z
    raise ValueError(f"unknown distance mode {mode!r}")


def pairwise_angles(directions):
    v = np.asarray(directions, dtype=np.float64)
    return np.arccos(np.clip(v @ v.T, -1.0, 1.0))


def diversity_all(directions):
    """Sum of angles from each direction to every other one."""
    v = np.asarray(directions, dtype=np.float64)
    if len(v) < 2:
        raise CapacityError("diversity needs at least two candidates")
    if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > 1e-9):
        raise DomainError("diversity needs unit direction vectors")
    ang = pairwise_angles(v)
    np.fill_diagonal(ang, 0.0)
    return ang.sum(axis=1)


def diversity(directions, i):
    return float(diversity_all(directions)[i])


# --------------------------------------------------------------------------
# Candidate scoring and selection
# --------------------------------------------------------------------------

def score_candidates(positions, focus, index, params=VisibilityParams()):
    """Raw visibility, distance and diversity for every candidate position."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    focus = np.asarray(focus, dtype=np.float64).reshape(3)
    vis = visibility_batch(positions, focus, index, params)
    offsets = focus - positions
    dist = np.linalg.norm(offsets, axis=1)
    dirs = offsets / dist[:, None]
    div = diversity_all(dirs) if len(positions) >= 2 else np.zeros(len(positions))
    return [
        ViewCandidate(i, positions[i], dirs[i], int(vis[i]), float(dist[i]), float(div[i]))
        for i in range(len(positions))
    ]


@dataclass(eq=False)
class Selection:
    poses: list
    candidates: list  # every candidate, annotated with z-scores, composite, rank
    order: list  # candidate ids, best first (length K)

    @property
    def zoom_basis(self):
        """Rank-1 pose: the most informative view, reused for zoom-in."""
        return self.poses[0]


def _composite(candidates, weights, distance_mode, div_override=None):
    vis = znorm([c.s_vis_raw for c in candidates])
    dis = znorm(distance_score([c.s_dis_raw for c in candidates], distance_mode))
    div_raw = [c.s_div_raw for c in candidates] if div_override is None else div_override
    div = znorm(div_raw)
    w = weights
    comp = w.w_vis * vis + w.w_dis * dis + w.w_div * div
    return vis, dis, div, comp


def _rank(comp, ids):
    # descending score, ties to lower id
    return sorted(range(len(ids)), key=lambda j: (-comp[j], ids[j]))


def select_views(candidates, weights, k, focus, fov_alpha=math.pi / 6, image_size=(224, 224),
                 distance_mode="moderate", diversity_mode="global", up_hint=(0.0, 0.0, 1.0)):
    """Rank candidates by the weighted sum of z-scored components; keep the top ``k``.

    ``diversity_mode="greedy"`` recomputes diversity after each pick against the
    views already chosen instead of the full candidate set.
    """
    if k < 1:
        raise DomainError(f"K must be positive, got {k}")
    if k > len(candidates):
        raise CapacityError(f"K={k} exceeds candidate count {len(candidates)}")
    cands = [replace(c, z={}, composite=0.0, selected=False, rank=None) for c in candidates]
    ids = [c.id for c in cands]
    vis, dis, div, comp = _composite(cands, weights, distance_mode)
    for c, a, b, d, s in zip(cands, vis, dis, div, comp):
        c.z = {"vis": float(a), "dis": float(b), "div": float(d)}
        c.composite = float(s)

    if diversity_mode == "global":
        chosen = _rank(comp, ids)[:k]
    elif diversity_mode == "greedy":
        chosen = [_rank(comp, ids)[0]]
        dirs = np.array([c.direction for c in cands])
        ang = pairwise_angles(dirs)
        while len(chosen) < k:
            rest = [j for j in range(len(cands)) if j not in chosen]
            sub = [cands[j] for j in rest]
            greedy_div = [float(ang[j, chosen].sum()) for j in rest]
            _, _, _, sub_comp = _composite(sub, weights, distance_mode, greedy_div)
            best = _rank(sub_comp, [c.id for c in sub])[0]
            chosen.append(rest[best])
    else:
        raise ValueError(f"unknown diversity mode {diversity_mode!r}")

    poses = []
    for rank, j in enumerate(chosen, start=1):
        cands[j].selected = True
        cands[j].rank = rank
        poses.append(CameraPose(cands[j].position, focus, up_hint, Perspective(fov_alpha, 1.0), image_size))
    return Selection(poses, cands, [cands[j].id for j in chosen])


def scoring_report(selection, weights, params):
    return {
        "weights": {"w_vis": weights.w_vis, "w_dis": weights.w_dis, "w_div": weights.w_div},
        "params": params.to_dict(),
        "candidates": [c.to_dict() for c in selection.candidates],
    }

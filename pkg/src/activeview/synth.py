"""Seeded synthetic scenes with known targets.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64). Scenes
are round-tripped through their ASCII PLY encoding before being returned, so
the in-memory cloud equals what a reader of the written file gets.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .scene import PointCloud, load_cloud, save_ply_ascii

PRNG = "numpy.random.PCG64"
KINDS = ("planted_sphere", "occluder_wall", "clutter")
UNIT_BOX = ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])


@dataclass
class GroundTruth:
    target: list
    euler_deg: list
    gripper: int
    collision: int
    target_radius: float
    target_point_count: int  # target points come first in the cloud

    def to_dict(self):
        return {
            "target": [float(x) for x in self.target],
            "euler_deg": [float(x) for x in self.euler_deg],
            "gripper": int(self.gripper),
            "collision": int(self.collision),
            "target_radius": float(self.target_radius),
            "target_point_count": int(self.target_point_count),
        }


@dataclass
class SyntheticScene:
    kind: str
    seed: int
    cloud: PointCloud
    ground_truth: GroundTruth
    workspace: tuple = UNIT_BOX
    config: dict = field(default_factory=dict)  # scenario [config] overrides


def sphere_points(center, radius, n):
    """Fibonacci-spiral samples on a sphere surface."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azim = math.pi * (1.0 + math.sqrt(5.0)) * i
    dirs = np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)], axis=1)
    return np.asarray(center) + radius * dirs


def plane_points(origin, u_axis, v_axis, u_len, v_len, spacing):
    nu = max(2, int(round(u_len / spacing)) + 1)
    nv = max(2, int(round(v_len / spacing)) + 1)
    a, b = np.meshgrid(np.linspace(0.0, u_len, nu), np.linspace(0.0, v_len, nv), indexing="ij")
    return (np.asarray(origin) + a.reshape(-1, 1) * np.asarray(u_axis, dtype=float)
            + b.reshape(-1, 1) * np.asarray(v_axis, dtype=float))


def _random_action(rng):
    return rng.uniform(0.0, 360.0, size=3).tolist(), int(rng.integers(0, 2)), int(rng.integers(0, 2))


def _round_trip(positions, colors):
    buf = io.BytesIO()
    save_ply_ascii(PointCloud(positions, colors), buf)
    return load_cloud(buf.getvalue(), "ply_ascii")


def _finish(kind, seed, rng, target, radius, parts, config):
    positions = np.concatenate([p for p, _ in parts])
    colors = np.concatenate([np.tile(c, (len(p), 1)) for p, c in parts])
    cloud = _round_trip(positions, colors)
    n_target = len(parts[0][0])
    # ground truth is the rounded target centre as stored on disk
    target = [float(f"{x:.6f}") for x in target]
    euler, grip, coll = _random_action(rng)
    gt = GroundTruth(target, euler, grip, coll, radius, n_target)
    return SyntheticScene(kind, seed, cloud, gt, UNIT_BOX, config)


def planted_sphere(seed, target_radius=0.01, target_points=200, distractors=4, floor_spacing=0.02):
    """Small red sphere at a random spot, a few distractor spheres and a floor."""
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.25, 0.75, size=3)
    parts = [(sphere_points(target, target_radius, target_points), (1.0, 0.0, 0.0))]
    placed = 0
    while placed < distractors:
        c = rng.uniform(0.1, 0.9, size=3)
        if np.linalg.norm(c - target) < 0.2:
            continue
        color = tuple(rng.uniform(0.2, 0.8, size=3))
        parts.append((sphere_points(c, 0.03, 150), color))
        placed += 1
    if floor_spacing:
        parts.append((plane_points((0, 0, 0), (1, 0, 0), (0, 1, 0), 1.0, 1.0, floor_spacing), (0.6, 0.6, 0.6)))
    return _finish("planted_sphere", seed, rng, target, target_radius, parts, {})


def occluder_wall(seed, target_radius=0.03, target_points=400, offset=0.12, span=0.25, spacing=0.004):
    """Target sphere with three occluders, each hiding one half of it from one fixed view.

    A roof slab half-covers the target in the top view, a wall on the -y side
    half-covers it in the front view and a wall on the +x side in the right
    view. Cameras elsewhere on the sphere keep a clear line of sight.
    """
    rng = np.random.default_rng(seed)
    t = np.array([rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.6)])
    side = rng.choice([-1.0, 1.0], size=3)
    gray = (0.45, 0.45, 0.5)
    parts = [(sphere_points(t, target_radius, target_points), (1.0, 0.0, 0.0))]

    # roof (top view): spans x fully, covers one y-half of the target
    y0 = t[1] if side[0] > 0 else t[1] - span
    parts.append((plane_points((t[0] - span, y0, t[2] + offset), (1, 0, 0), (0, 1, 0), 2 * span, span, spacing), gray))
    # front wall (front view looks +y): spans x fully, covers one z-half
    z0 = t[2] if side[1] > 0 else t[2] - span
    parts.append((plane_points((t[0] - span, t[1] - offset, z0), (1, 0, 0), (0, 0, 1), 2 * span, span, spacing), gray))
    # right wall (right view looks -x): spans z fully, covers one y-half
    y1 = t[1] if side[2] > 0 else t[1] - span
    parts.append((plane_points((t[0] + offset, y1, t[2] - span), (0, 1, 0), (0, 0, 1), span, 2 * span, spacing), gray))

    config = {
        "visibility": {"focus_exclusion": 0.07},
        "attention": {"occlusion_aware": True},
    }
    return _finish("occluder_wall", seed, rng, t, target_radius, parts, config)


def clutter(seed, n=500, target_radius=0.01, target_points=100):
    """Uniform random clutter points plus a target sphere."""
    if n < 0:
        raise DomainError(f"clutter count must be non-negative, got {n}")
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.25, 0.75, size=3)
    pts = rng.uniform(0.0, 1.0, size=(n, 3))
    cols = rng.uniform(0.0, 1.0, size=(n, 3))
    parts = [(sphere_points(target, target_radius, target_points), (1.0, 0.0, 0.0))]
    scene = _finish("clutter", seed, rng, target, target_radius, parts, {})
    # clutter gets per-point colors, so append after the shared finishing step
    cloud = _round_trip(np.concatenate([scene.cloud.positions, pts]),
                        np.concatenate([scene.cloud.colors, cols]))
    scene.cloud = cloud
    return scene


GENERATORS = {"planted_sphere": planted_sphere, "occluder_wall": occluder_wall, "clutter": clutter}


def generate(kind, seed, **params):
    if kind not in GENERATORS:
        raise DomainError(f"unknown scene kind {kind!r}; expected one of {KINDS}")
    try:
        return GENERATORS[kind](seed, **params)
    except TypeError as exc:
        raise DomainError(f"invalid parameters for {kind}: {exc}") from None


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def scenario_toml(scene, scene_file="scene.ply"):
    lines = [
        f'id = "{scene.kind}-seed{scene.seed}"',
        f'scene = "{scene_file}"',
        f"seed = {scene.seed}",
        f'prng = "{PRNG}"',
        "",
        "[ground_truth]",
    ]
    for key, val in scene.ground_truth.to_dict().items():
        lines.append(f"{key} = {_toml_value(val)}")
    lines += ["", "[config]",
              f"workspace_min = {_toml_value(list(scene.workspace[0]))}",
              f"workspace_max = {_toml_value(list(scene.workspace[1]))}"]
    for section, values in sorted(scene.config.items()):
        lines += ["", f"[config.{section}]"]
        for key, val in sorted(values.items()):
            lines.append(f"{key} = {_toml_value(val)}")
    return "\n".join(lines) + "\n"


def write_scene(scene, out_dir):
    """Write ``scene.ply``, ``ground_truth.json`` and ``scenario.toml``; return the scenario path."""
    os.makedirs(out_dir, exist_ok=True)
    save_ply_ascii(scene.cloud, os.path.join(out_dir, "scene.ply"))
    with open(os.path.join(out_dir, "ground_truth.json"), "w") as fh:
        json.dump({"kind": scene.kind, "seed": scene.seed, "prng": PRNG, **scene.ground_truth.to_dict()},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    path = os.path.join(out_dir, "scenario.toml")
    with open(path, "w") as fh:
        fh.write(scenario_toml(scene))
    return path

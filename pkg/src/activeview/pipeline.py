"""Two-stage coarse-to-fine perception: localize, pick views, zoom, decode."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import fusion, render
from .attention import AttentionRequest, normalize
from .errors import ActiveViewError, CapacityError, DomainError, StageError
from .fusion import assemble_action, decode_translation, encode_rotation, fuse_views
from .scene import Aabb, bounding_radius, bounds, build_index
from .scoring import (
    ScoringWeights,
    Selection,
    VisibilityParams,
    score_candidates,
    scoring_report,
    select_views,
    visibility_batch,
)
from .viewsphere import CameraPose, Perspective, generate_candidates

STRATEGIES = ("active", "random", "fixed")


@dataclass(frozen=True)
class AttentionConfig:
    provider: str = "oracle"
    endpoint: str = None
    timeout_ms: int = 10000
    fallback_to_oracle: bool = False
    sigma_px: float = 5.0
    occlusion_aware: bool = False


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    workspace: Aabb = None  # None: bounds of the cloud
    crop_to_workspace: bool = False
    coarse_image_size: tuple = (224, 224)
    fine_image_size: tuple = (224, 224)
    splat_radius: int = 1
    subdivision_level: int = 1
    candidate_radius_scale: float = 1.5
    min_elevation: float = None
    visibility: VisibilityParams = field(default_factory=VisibilityParams)
    weights: ScoringWeights = field(default_factory=ScoringWeights)
    k: int = 3
    zoom_z: float = 4.0
    fov_alpha: float = math.pi / 6
    grid_resolution: tuple = (100, 100, 100)
    fine_grid_resolution: tuple = None  # None: grid_resolution rounded up to odd
    fine_half_extent: float = None  # None: W(zoom_z) / 2 at the zoom pose distance
    sampling: str = "bilinear"
    distance_mode: str = "moderate"
    diversity_mode: str = "global"
    zoom_mode: str = "additive"  # or "replace": zoom render stands in for the rank-1 view
    strategy: str = "active"
    seed: int = 0
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    instruction: str = ""

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"K must be >= 1, got {self.k}")
        if not self.zoom_z >= 1.0:
            raise DomainError(f"zoom_z must be >= 1, got {self.zoom_z}")
        if not 0.0 < self.fov_alpha < math.pi:
            raise DomainError(f"fov_alpha must lie in (0, pi), got {self.fov_alpha}")
        if not self.candidate_radius_scale > 0:
            raise DomainError("candidate_radius_scale must be positive")
        if self.strategy not in STRATEGIES:
            raise DomainError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.zoom_mode not in ("additive", "replace"):
            raise DomainError(f"zoom_mode must be additive or replace, got {self.zoom_mode!r}")

    def to_dict(self):
        return {
            "workspace": None if self.workspace is None else self.workspace.to_dict(),
            "crop_to_workspace": self.crop_to_workspace,
            "coarse_image_size": list(self.coarse_image_size),
            "fine_image_size": list(self.fine_image_size),
            "splat_radius": self.splat_radius,
            "subdivision_level": self.subdivision_level,
            "candidate_radius_scale": self.candidate_radius_scale,
            "min_elevation": self.min_elevation,
            "visibility": self.visibility.to_dict(),
            "weights": list(self.weights.as_tuple()),
            "k": self.k,
            "zoom_z": self.zoom_z,
            "fov_alpha": self.fov_alpha,
            "grid_resolution": list(self.grid_resolution),
            "fine_grid_resolution": None if self.fine_grid_resolution is None else list(self.fine_grid_resolution),
            "fine_half_extent": self.fine_half_extent,
            "sampling": self.sampling,
            "distance_mode": self.distance_mode,
            "diversity_mode": self.diversity_mode,
            "zoom_mode": self.zoom_mode,
            "strategy": self.strategy,
            "seed": self.seed,
            "attention": {
                "provider": self.attention.provider,
                "endpoint": self.attention.endpoint,
                "timeout_ms": self.attention.timeout_ms,
                "fallback_to_oracle": self.attention.fallback_to_oracle,
                "sigma_px": self.attention.sigma_px,
                "occlusion_aware": self.attention.occlusion_aware,
            },
            "instruction": self.instruction,
        }


@dataclass(frozen=True)
class ActionHints:
    """Rotation, gripper and collision values passed through from the scenario."""

    euler_deg: tuple = (0.0, 0.0, 0.0)
    gripper: int = 0
    collision: int = 0


@dataclass(eq=False)
class CoarseResult:
    workspace: Aabb
    poses: list
    renders: list
    heatmaps: list
    volume: fusion.ScoreVolume
    focus: np.ndarray


@dataclass(eq=False)
class FineResult:
    radius: float
    selection: Selection
    poses: list  # the K selected poses
    zoom_pose: CameraPose
    fused_poses: list
    renders: list
    heatmaps: list
    volume: fusion.ScoreVolume
    translation: np.ndarray


@dataclass(eq=False)
class StageTrace:
    config: PipelineConfig
    coarse: CoarseResult
    fine: FineResult
    action: fusion.ActionPrediction
    timings: dict

    @property
    def focus(self):
        return self.coarse.focus

    def to_dict(self):
        """Deterministic trace content; wall-clock timings are kept out."""
        d = {
            "config": self.config.to_dict(),
            "workspace": self.coarse.workspace.to_dict(),
            "coarse": {
                "poses": [p.to_dict() for p in self.coarse.poses],
                "heatmap_flags": [h.flag for h in self.coarse.heatmaps],
                "p_f": self.coarse.focus.tolist(),
                "grid": {"workspace": self.coarse.volume.workspace.to_dict(),
                         "resolution": list(self.coarse.volume.resolution)},
            },
            "fine": None,
            "action": self.action.to_dict(),
        }
        if self.fine is not None:
            cfg = self.config
            d["fine"] = {
                "radius": self.fine.radius,
                "scoring": scoring_report(self.fine.selection, cfg.weights, cfg.visibility),
                "selected_ids": list(self.fine.selection.order),
                "selected_poses": [p.to_dict() for p in self.fine.poses],
                "zoom_pose": self.fine.zoom_pose.to_dict(),
                "heatmap_flags": [h.flag for h in self.fine.heatmaps],
                "grid": {"workspace": self.fine.volume.workspace.to_dict(),
                         "resolution": list(self.fine.volume.resolution)},
                "translation": self.fine.translation.tolist(),
            }
        return d


def _request_maps(provider, renders, instruction, stage):
    try:
        maps = provider.heatmaps(AttentionRequest(list(renders), instruction))
        if len(maps) != len(renders):
            raise ActiveViewError(f"provider returned {len(maps)} heatmaps for {len(renders)} images")
        return [normalize(m) for m in maps]
    except ActiveViewError as exc:
        raise StageError(stage, exc) from exc


def resolve_workspace(cloud, config):
    ws = config.workspace if config.workspace is not None else bounds(cloud)
    if config.crop_to_workspace:
        cloud = cloud.crop(ws)
    return ws, cloud


def coarse_stage(cloud, config, provider, workspace=None):
    """Render top/front/right views, fuse their heatmaps and return the crucial region."""
    if workspace is None:
        workspace, cloud = resolve_workspace(cloud, config)
    try:
        renders = [render.render_orthographic(cloud, v, workspace, config.coarse_image_size, config.splat_radius)
                   for v in render.ORTHO_VIEWS]
    except ActiveViewError as exc:
        raise StageError("coarse", exc) from exc
    maps = _request_maps(provider, renders, config.instruction, "coarse")
    poses = [im.pose for im in renders]
    volume = fuse_views(workspace, config.grid_resolution, poses, maps, mode=config.sampling)
    focus = decode_translation(volume)
    return CoarseResult(workspace, poses, renders, maps, volume, focus)


def _odd(n):
    n = int(n)
    return n if n % 2 == 1 else n + 1


def fine_box(focus, half_extent, resolution, workspace):
    """Grid around ``focus`` whose lattice has a voxel centred exactly on ``focus``.

    Voxel size is ``2 * half_extent / n`` per axis (``n`` odd); voxels that
    would leave ``workspace`` are dropped, so every centre stays inside it.
    """
    lo, hi, res = [], [], []
    for a in range(3):
        n = _odd(resolution[a])
        step = 2.0 * half_extent / n
        m = (n - 1) // 2
        below = max(0, min(m, int(math.floor((focus[a] - workspace.min[a]) / step - 0.5))))
        above = max(0, min(m, int(math.floor((workspace.max[a] - focus[a]) / step - 0.5))))
        lo.append(focus[a] - (below + 0.5) * step)
        hi.append(focus[a] + (above + 0.5) * step)
        res.append(below + 1 + above)
    return Aabb(lo, hi), tuple(res)


def _choose(config, cands, index, focus):
    if config.strategy == "active":
        return select_views(cands, config.weights, config.k, focus, config.fov_alpha,
                            config.fine_image_size, config.distance_mode, config.diversity_mode)
    # random strategy: same candidate set and report, uniform choice of K ids
    sel = select_views(cands, config.weights, config.k, focus, config.fov_alpha,
                       config.fine_image_size, config.distance_mode)
    rng = np.random.default_rng(config.seed)
    picked = [int(i) for i in rng.choice(len(cands), size=config.k, replace=False)]
    for c in sel.candidates:
        c.selected, c.rank = False, None
    poses = []
    for rank, j in enumerate(picked, start=1):
        c = sel.candidates[j]
        c.selected, c.rank = True, rank
        poses.append(CameraPose(c.position, focus, (0.0, 0.0, 1.0),
                                Perspective(config.fov_alpha, 1.0), config.fine_image_size))
    return Selection(poses, sel.candidates, [sel.candidates[j].id for j in picked])


def fine_stage(cloud, focus, config, provider, workspace):
    """Select K views around ``focus``, add a zoomed render, fuse into a local grid."""
    focus = np.asarray(focus, dtype=np.float64)
    if not workspace.contains(focus):
        raise StageError("fine", DomainError(f"focus {focus.tolist()} lies outside the workspace"))
    try:
        radius = config.candidate_radius_scale * bounding_radius(cloud)
        positions = generate_candidates(focus, radius, config.subdivision_level, config.min_elevation)
        if config.k > len(positions):
            raise CapacityError(f"K={config.k} exceeds the {len(positions)} candidate viewpoints")
        index = build_index(cloud)
        cands = score_candidates(positions, focus, index, config.visibility)
        selection = _choose(config, cands, index, focus)
        zoom_pose = selection.zoom_basis.with_zoom(config.zoom_z)
        if config.zoom_mode == "additive":
            fused = list(selection.poses) + [zoom_pose]
        else:
            fused = list(selection.poses[1:]) + [zoom_pose]
        renders = [render.render_perspective(cloud, p, config.splat_radius) for p in fused]
    except ActiveViewError as exc:
        raise StageError("fine", exc) from exc
    maps = _request_maps(provider, renders, config.instruction, "fine")
    half = config.fine_half_extent
    if half is None:
        half = render.zoom_coverage(config.fov_alpha, config.zoom_z, zoom_pose.distance) / 2.0
    res = config.fine_grid_resolution or config.grid_resolution
    box, box_res = fine_box(focus, half, res, workspace)
    volume = fuse_views(box, box_res, fused, maps, mode=config.sampling)
    translation = decode_translation(volume)
    return FineResult(radius, selection, list(selection.poses), zoom_pose, fused, renders, maps,
                      volume, translation)


def run(cloud, config, provider, hints=ActionHints()):
    """Full pipeline. ``strategy="fixed"`` stops after the three orthographic views."""
    timings = {}
    t0 = time.perf_counter()
    workspace, cloud = resolve_workspace(cloud, config)
    if len(cloud) == 0:
        raise StageError("coarse", ActiveViewError("cloud is empty"))
    coarse = coarse_stage(cloud, config, provider, workspace)
    timings["coarse_s"] = time.perf_counter() - t0

    fine = None
    translation = coarse.focus
    if config.strategy != "fixed":
        t1 = time.perf_counter()
        fine = fine_stage(cloud, coarse.focus, config, provider, workspace)
        timings["fine_s"] = time.perf_counter() - t1
        translation = fine.translation
    try:
        action = assemble_action(translation, encode_rotation(hints.euler_deg), hints.gripper,
                                 hints.collision, workspace)
    except ActiveViewError as exc:
        raise StageError("decode", exc) from exc
    timings["total_s"] = time.perf_counter() - t0
    return StageTrace(config, coarse, fine, action, timings)


def selected_visibility(trace, cloud):
    """Fraction of the views used for the final estimate that have a clear line of sight."""
    if trace.fine is not None:
        sel = [c for c in trace.fine.selection.candidates if c.selected]
        return sum(c.s_vis_raw for c in sel) / len(sel)
    # fixed views: test the orthographic viewing directions at the candidate radius
    radius = trace.config.candidate_radius_scale * bounding_radius(cloud)
    focus = trace.coarse.focus
    eyes = [focus - radius * p.basis[2] for p in trace.coarse.poses]
    vis = visibility_batch(np.array(eyes), focus, build_index(cloud), trace.config.visibility)
    return float(np.mean(vis))


def write_run(trace, out_dir, images=True, volumes=True):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trace.json"), "w") as fh:
        json.dump(trace.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "timings.json"), "w") as fh:
        json.dump(trace.timings, fh, indent=2, sort_keys=True)
    if images:
        img_dir = os.path.join(out_dir, "images")
        for name, im in zip(render.ORTHO_VIEWS, trace.coarse.renders):
            render.export_image(im, img_dir, f"coarse_{name}")
        if trace.fine is not None:
            for i, im in enumerate(trace.fine.renders):
                render.export_image(im, img_dir, f"fine_{i}")
    if volumes:
        vol_dir = os.path.join(out_dir, "volumes")
        os.makedirs(vol_dir, exist_ok=True)
        fusion.write_volume(os.path.join(vol_dir, "coarse"), trace.coarse.volume)
        if trace.fine is not None:
            fusion.write_volume(os.path.join(vol_dir, "fine"), trace.fine.volume)

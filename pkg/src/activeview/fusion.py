"""Heatmap upsampling, multi-view score volumes and action decoding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attention import Heatmap
from .errors import ContractError, DomainError
from .scene import Aabb

NUM_ROTATION_BINS = 72
BIN_DEG = 360.0 / NUM_ROTATION_BINS
EULER_CONVENTION = "intrinsic ZYX"


# --------------------------------------------------------------------------
# Convex upsampling
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvexWeights:
    """Per fine pixel, 9 convex weights over the 3x3 coarse neighbourhood.

    ``weights`` has shape ``(f*H_p, f*W_p, 9)``; the 9 entries are ordered
    row-major over offsets ``(-1, 0, 1) x (-1, 0, 1)``, so index 4 is the
    centre.
    """

    coarse_size: tuple
    factor: int
    weights: np.ndarray

    def __post_init__(self):
        hp, wp = self.coarse_size
        f = self.factor
        w = np.asarray(self.weights, dtype=np.float64)
        if f < 1:
            raise ContractError(f"upsample factor must be positive, got {f}")
        if w.shape != (f * hp, f * wp, 9):
            raise ContractError(f"weights shape {w.shape} != {(f * hp, f * wp, 9)}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ContractError("convex weights must be finite and nonnegative")
        if np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-6):
            raise ContractError("convex weights must sum to 1 per fine pixel")
        object.__setattr__(self, "weights", w)


def softmax_weights(logits, coarse_size, factor):
    """Convex weights from unconstrained ``(f*H_p, f*W_p, 9)`` logits."""
    z = np.asarray(logits, dtype=np.float64)
    z = np.exp(z - z.max(axis=-1, keepdims=True))
    return ConvexWeights(tuple(coarse_size), factor, z / z.sum(axis=-1, keepdims=True))


def convex_upsample(coarse, weights):
    """Upsample a nonnegative ``H_p x W_p`` grid by convex 3x3 combinations.

    Fine pixel ``(y, x)`` sits on coarse cell ``(y // f, x // f)``; neighbours
    beyond the border clamp to the edge.
    """
    grid = np.asarray(coarse, dtype=np.float64)
    if grid.shape != tuple(weights.coarse_size):
        raise ContractError(f"coarse grid {grid.shape} != weights coarse size {weights.coarse_size}")
    hp, wp = grid.shape
    f = weights.factor
    padded = np.pad(grid, 1, mode="edge")
    # neighbourhood stack (hp, wp, 9) in the same offset order as the weights
    nbrs = np.stack([padded[1 + dy: 1 + dy + hp, 1 + dx: 1 + dx + wp]
                     for dy in (-1, 0, 1) for dx in (-1, 0, 1)], axis=-1)
    nbrs = np.repeat(np.repeat(nbrs, f, axis=0), f, axis=1)
    fine = np.einsum("ijk,ijk->ij", nbrs, weights.weights)
    return Heatmap(fine, "raw")


# --------------------------------------------------------------------------
# Score volume
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScoreVolume:
    """Voxel grid over ``workspace``; ``scores`` is indexed ``[i, j, k]`` (x, y, z)."""

    workspace: Aabb
    resolution: tuple
    scores: np.ndarray = None
    view_weights: tuple = ()
    _centers: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or min(res) < 1:
            raise DomainError(f"resolution must be three positive ints, got {self.resolution}")
        object.__setattr__(self, "resolution", res)
        if self.scores is None:
            object.__setattr__(self, "scores", np.zeros(res))
        elif self.scores.shape != res:
            raise ContractError(f"scores shape {self.scores.shape} != resolution {res}")
        object.__setattr__(self, "view_weights", tuple(self.view_weights))

    @property
    def voxel_size(self):
        return self.workspace.extent / np.array(self.resolution)

    def centers(self):
        """Voxel centres as an ``(N, 3)`` array in x-fastest linear order."""
        if self._centers is None:
            nx, ny, nz = self.resolution
            d = self.voxel_size
            axes = [self.workspace.min[a] + (np.arange(n) + 0.5) * d[a] for a, n in enumerate((nx, ny, nz))]
            gx, gy, gz = np.meshgrid(*axes, indexing="ij")
            c = np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)
            object.__setattr__(self, "_centers", c)
        return self._centers

    def center_of(self, i, j, k):
        return self.workspace.min + (np.array([i, j, k]) + 0.5) * self.voxel_size

    def linear_scores(self):
        return self.scores.ravel(order="F")


def empty_volume(workspace, resolution=(100, 100, 100)):
    return ScoreVolume(workspace, resolution)


def sample_heatmap(values, u, v, inside, mode="bilinear"):
    """Sample a heatmap at continuous pixel positions; outside samples are 0."""
    h, w = values.shape
    out = np.zeros(len(u))
    if not np.any(inside):
        return out
    uu, vv = u[inside], v[inside]
    vals = values.astype(np.float64)
    if mode == "nearest":
        out[inside] = vals[np.floor(vv).astype(np.int64), np.floor(uu).astype(np.int64)]
        return out
    if mode != "bilinear":
        raise ValueError(f"unknown sampling mode {mode!r}")
    x = uu - 0.5
    y = vv - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    top = vals[y0, x0] * (1 - fx) + vals[y0, x1] * fx
    bot = vals[y1, x0] * (1 - fx) + vals[y1, x1] * fx
    out[inside] = top * (1 - fy) + bot * fy
    return out


def view_contribution(volume, pose, heatmap, mode="bilinear"):
    """Per-voxel heatmap samples (unweighted) for one view, x-fastest order."""
    if (heatmap.width, heatmap.height) != tuple(pose.image_size):
        raise ContractError(
            f"heatmap {heatmap.width}x{heatmap.height} does not match view "
            f"{pose.image_size[0]}x{pose.image_size[1]}")
    proj = pose.project(volume.centers())
    return sample_heatmap(heatmap.values, proj.u, proj.v, proj.inside, mode)


def accumulate(volume, pose, heatmap, weight, mode="bilinear"):
    """Return a new volume with ``weight * h(pi(g))`` added at every voxel ``g``."""
    if not weight >= 0:
        raise DomainError(f"view weight must be nonnegative, got {weight}")
    scores = volume.scores
    if weight != 0:
        contrib = view_contribution(volume, pose, heatmap, mode)
        flat = volume.linear_scores() + weight * contrib
        scores = flat.reshape(volume.resolution, order="F")
    return ScoreVolume(volume.workspace, volume.resolution, scores,
                       volume.view_weights + (float(weight),), volume._centers)


def fuse_views(workspace, resolution, poses, heatmaps, weights=None, mode="bilinear"):
    """Accumulate every view in index order; default weights are uniform ``1/V``."""
    if len(poses) != len(heatmaps):
        raise ContractError(f"{len(poses)} poses but {len(heatmaps)} heatmaps")
    if weights is None:
        weights = [1.0 / len(poses)] * len(poses)
    vol = empty_volume(workspace, resolution)
    for pose, hm, w in zip(poses, heatmaps, weights):
        vol = accumulate(vol, pose, hm, w, mode)
    return vol


def argmax_voxel(volume):
    """``(i, j, k)`` of the best voxel; ties go to the lowest x-fastest linear index."""
    lin = int(np.argmax(volume.linear_scores()))
    nx, ny, _ = volume.resolution
    return lin % nx, (lin // nx) % ny, lin // (nx * ny)


def decode_translation(volume):
    return volume.center_of(*argmax_voxel(volume))


def write_volume(stem, volume):
    header = {
        "workspace": volume.workspace.to_dict(),
        "resolution": list(volume.resolution),
        "dtype": "f32le",
        "order": "x-fastest",
    }
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True)
    with open(f"{stem}.f32", "wb") as fh:
        fh.write(volume.linear_scores().astype("<f4").tobytes())


def read_volume(stem):
    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    flat = np.fromfile(f"{stem}.f32", dtype="<f4").astype(np.float64)
    res = tuple(header["resolution"])
    return ScoreVolume(Aabb.from_dict(header["workspace"]), res, flat.reshape(res, order="F"))


# --------------------------------------------------------------------------
# Rotation bins and actions
# --------------------------------------------------------------------------

def encode_rotation(euler_deg):
    """Euler angles in degrees to bin indices ``floor(angle / 5)``, after reduction mod 360."""
    angles = np.mod(np.asarray(euler_deg, dtype=np.float64), 360.0)
    bins = np.minimum(np.floor(angles / BIN_DEG).astype(np.int64), NUM_ROTATION_BINS - 1)
    return tuple(int(b) for b in bins)


def decode_rotation(bins):
    """Bin indices to bin-centre angles in degrees."""
    b = np.asarray(bins)
    if b.dtype.kind not in "iu" or np.any((b < 0) | (b >= NUM_ROTATION_BINS)):
        raise DomainError(f"rotation bins must be integers in [0, {NUM_ROTATION_BINS}), got {bins}")
    return tuple(float((int(x) + 0.5) * BIN_DEG) for x in b)


@dataclass(frozen=True, eq=False)
class ActionPrediction:
    translation: np.ndarray
    rotation_bins: tuple
    gripper: int
    collision: int

    @property
    def rotation_deg(self):
        return decode_rotation(self.rotation_bins)

    def to_dict(self):
        return {
            "translation": [float(x) for x in self.translation],
            "rotation_bins": [int(b) for b in self.rotation_bins],
            "rotation_deg": list(self.rotation_deg),
            "gripper": int(self.gripper),
            "collision": int(self.collision),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["translation"], dtype=np.float64), tuple(d["rotation_bins"]),
                   int(d["gripper"]), int(d["collision"]))

    def __eq__(self, other):
        if not isinstance(other, ActionPrediction):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def assemble_action(translation, rotation_bins, gripper, collision, workspace=None):
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(t)):
        raise ContractError("translation must be finite")
    if workspace is not None and not workspace.contains(t):
        raise ContractError(f"translation {t.tolist()} lies outside the workspace")
    bins = tuple(int(b) for b in rotation_bins)
    if len(bins) != 3:
        raise ContractError("exactly three rotation bins are required")
    decode_rotation(bins)
    if gripper not in (0, 1) or collision not in (0, 1):
        raise ContractError(f"gripper and collision must be 0 or 1, got {gripper}, {collision}")
    return ActionPrediction(t, bins, int(gripper), int(collision))

"""Seven-channel point-cloud renders: RGB, depth and world coordinates per pixel."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyInputError
from .viewsphere import CameraPose, Orthographic, Perspective, Projection

ORTHO_VIEWS = ("top", "front", "right")
DEFAULT_IMAGE_SIZE = (224, 224)


@dataclass(frozen=True, eq=False)
class MultiChannelImage:
    """Render result. Arrays are indexed ``[row, col]``.

    Invalid pixels hold ``depth = inf``, zero rgb/world_xyz and
    ``source_point = -1``.
    """

    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    world_xyz: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool
    source_point: np.ndarray  # (H, W) int, -1 where invalid
    pose: CameraPose

    @property
    def width(self):
        return self.rgb.shape[1]

    @property
    def height(self):
        return self.rgb.shape[0]

    def channels(self):
        """Stacked ``(H, W, 7)`` array: rgb, depth, xyz (invalid depth set to 0)."""
        depth = np.where(self.valid, self.depth, 0.0)[..., None]
        return np.concatenate([self.rgb, depth, self.world_xyz], axis=-1)


def ortho_pose(view, workspace, image_size=DEFAULT_IMAGE_SIZE):
    """Axis-aligned orthographic pose framing ``workspace``.

    top: looks along -z, image up +y. front: looks along +y, image up +z.
    right: looks along -x, image up +z. The eye sits on the workspace face
    the view enters through, so depth is the distance past that face.
    """
    lo, hi, c = workspace.min, workspace.max, workspace.center
    ext = workspace.extent
    if view == "top":
        eye, forward, up, window = (c[0], c[1], hi[2]), (0, 0, -1), (0.0, 1.0, 0.0), (ext[0], ext[1])
    elif view == "front":
        eye, forward, up, window = (c[0], lo[1], c[2]), (0, 1, 0), (0.0, 0.0, 1.0), (ext[0], ext[2])
    elif view == "right":
        eye, forward, up, window = (hi[0], c[1], c[2]), (-1, 0, 0), (0.0, 0.0, 1.0), (ext[1], ext[2])
    else:
        raise ValueError(f"unknown orthographic view {view!r}")
    if window[0] <= 0 or window[1] <= 0:
        raise DomainError(f"workspace has zero extent in the {view} view plane")
    eye = np.asarray(eye, dtype=np.float64)
    return CameraPose(eye, eye + np.asarray(forward, dtype=np.float64), up,
                      Orthographic(tuple(map(float, window))), image_size)


def _splat(cloud, pose, proj, keep, splat_radius):
    w, h = pose.image_size
    idx = np.flatnonzero(keep)
    rows, cols = proj.pixels()
    rows, cols, depth = rows[idx], cols[idx], proj.depth[idx]
    if splat_radius > 1:
        reach = splat_radius - 1
        offsets = [(dr, dc) for dr in range(-reach, reach + 1) for dc in range(-reach, reach + 1)]
        rr = np.concatenate([rows + dr for dr, _ in offsets])
        cc = np.concatenate([cols + dc for _, dc in offsets])
        ii = np.tile(idx, len(offsets))
        dd = np.tile(depth, len(offsets))
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        rows, cols, idx, depth = rr[ok], cc[ok], ii[ok], dd[ok]

    pix = rows * w + cols
    # z-buffer as a sort: pixel, then depth, then point index
    order = np.lexsort((idx, depth, pix))
    pix, idx, depth = pix[order], idx[order], depth[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, idx, depth = pix[first], idx[first], depth[first]

    rgb = np.zeros((h * w, 3))
    xyz = np.zeros((h * w, 3))
    dep = np.full(h * w, np.inf)
    src = np.full(h * w, -1, dtype=np.int64)
    valid = np.zeros(h * w, dtype=bool)
    rgb[pix] = cloud.colors[idx]
    xyz[pix] = cloud.positions[idx]
    dep[pix] = depth
    src[pix] = idx
    valid[pix] = True
    return MultiChannelImage(
        rgb.reshape(h, w, 3), dep.reshape(h, w), xyz.reshape(h, w, 3),
        valid.reshape(h, w), src.reshape(h, w), pose,
    )


def render_pose(cloud, pose, splat_radius=1, cull_box=None):
    if len(cloud) == 0:
        raise EmptyInputError("cannot render an empty cloud")
    if splat_radius < 1:
        raise DomainError(f"splat_radius must be >= 1, got {splat_radius}")
    proj = pose.project(cloud.positions)
    keep = proj.inside
    if cull_box is not None:
        keep = keep & cull_box.contains(cloud.positions)
    return _splat(cloud, pose, proj, keep, splat_radius)


def render_orthographic(cloud, view, workspace, image_size=DEFAULT_IMAGE_SIZE, splat_radius=1):
    """Orthographic render of ``cloud`` clipped to ``workspace``.

    Points on the workspace's max faces fall exactly on the image border and
    are clamped into the last row/column.
    """
    pose = ortho_pose(view, workspace, image_size)
    if len(cloud) == 0:
        raise EmptyInputError("cannot render an empty cloud")
    proj = pose.project(cloud.positions)
    w, h = pose.image_size
    u = np.where(proj.u == w, np.nextafter(w, 0), proj.u)
    v = np.where(proj.v == h, np.nextafter(h, 0), proj.v)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    proj = Projection(u, v, proj.depth, inside)
    keep = inside & workspace.contains(cloud.positions)
    return _splat(cloud, pose, proj, keep, splat_radius)


def render_ortho_set(cloud, workspace, image_size=DEFAULT_IMAGE_SIZE, splat_radius=1):
    return {v: render_orthographic(cloud, v, workspace, image_size, splat_radius) for v in ORTHO_VIEWS}


def render_perspective(cloud, pose, splat_radius=1):
    """Pinhole render with field of view ``alpha / zoom_z``; behind-camera points culled."""
    if not isinstance(pose.projection, Perspective):
        raise DomainError("render_perspective needs a perspective pose")
    if pose.projection.effective_fov >= math.pi:
        raise DomainError("effective field of view must be below pi")
    return render_pose(cloud, pose, splat_radius)


def zoom_coverage(fov_alpha, zoom_z, distance):
    """Coverage width ``2 d tan(alpha / 2z)`` of a zoomed view at ``distance``."""
    if not 0.0 < fov_alpha < math.pi:
        raise DomainError(f"fov_alpha must lie in (0, pi), got {fov_alpha}")
    if not zoom_z >= 1.0:
        raise DomainError(f"zoom_z must be >= 1, got {zoom_z}")
    if not distance > 0.0:
        raise DomainError(f"distance must be positive, got {distance}")
    return 2.0 * distance * math.tan(fov_alpha / (2.0 * zoom_z))


def pixel_resolution(image_width_px, fov_alpha, zoom_z, distance):
    """Pixels per meter across the zoomed footprint."""
    return image_width_px / zoom_coverage(fov_alpha, zoom_z, distance)


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------

def encode_ppm(rgb):
    h, w = rgb.shape[:2]
    data = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def write_ppm(path, rgb):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(rgb))


def decode_ppm(blob):
    # header is three whitespace-separated tokens, then exactly one whitespace byte
    fields, pos = [], 2
    if blob[:2] != b"P6":
        raise ValueError("not a binary PPM")
    while len(fields) < 3:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    data = np.frombuffer(blob[pos + 1: pos + 1 + w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3) / 255.0


def write_pgm(path, mask):
    h, w = mask.shape
    data = np.where(mask, 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_float_grid(stem, grid, channel):
    """Write ``<stem>.f32`` (little-endian float32) and ``<stem>.json`` header."""
    grid = np.asarray(grid)
    h, w = grid.shape
    with open(f"{stem}.f32", "wb") as fh:
        fh.write(grid.astype("<f4").tobytes())
    header = {"width": w, "height": h, "channel": channel, "dtype": "f32le"}
    with open(f"{stem}.json", "w") as fh:
        json.dump(header, fh, sort_keys=True)


def read_float_grid(stem):
    with open(f"{stem}.json") as fh:
        header = json.load(fh)
    data = np.fromfile(f"{stem}.f32", dtype="<f4")
    return header, data.reshape(header["height"], header["width"])


def export_image(image, directory, name):
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, name)
    write_ppm(f"{base}_rgb.ppm", image.rgb)
    write_pgm(f"{base}_valid.pgm", image.valid)
    write_float_grid(f"{base}_depth", image.depth, "depth")
    for i, axis in enumerate("xyz"):
        write_float_grid(f"{base}_world_{axis}", image.world_xyz[..., i], f"world_{axis}")

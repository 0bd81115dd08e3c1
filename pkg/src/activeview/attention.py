"""Heatmap providers: a geometric oracle and a client for an external model server."""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import httpx
import numpy as np

from .errors import (
    ConnectionFailed,
    ContractError,
    DomainError,
    MalformedPayload,
    ProviderTimeout,
    TransportError,
    ZeroMassError,
)
from .render import encode_ppm

DEFAULT_SIGMA_PX = 5.0
SUM_TOL = 1e-6
TIE_NUDGE = 1e-3


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Per-pixel nonnegative attention, stored as float32 ``[row, col]``.

    ``flag`` is ``None`` for an informative map, otherwise the reason the
    map was replaced by a uniform one (``"off_frame"`` or ``"occluded"``).
    """

    values: np.ndarray
    normalization: str = "raw"
    flag: str = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 2:
            raise ContractError(f"heatmap must be 2-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ContractError("heatmap contains non-finite values")
        if np.any(vals < 0):
            raise ContractError("heatmap contains negative values")
        if self.normalization not in ("raw", "sum_to_one"):
            raise ContractError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "sum_to_one":
            total = float(vals.sum(dtype=np.float64))
            if abs(total - 1.0) > SUM_TOL:
                raise ContractError(f"sum_to_one heatmap sums to {total}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    def argmax(self):
        r, c = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return int(r), int(c)


def normalize(heatmap):
    """Scale to unit mass. Maps already within ``1e-6`` of unit mass are returned as is."""
    total = float(heatmap.values.sum(dtype=np.float64))
    if not total > 0.0:
        raise ZeroMassError("cannot normalize a heatmap with zero mass")
    if abs(total - 1.0) <= SUM_TOL:
        if heatmap.normalization == "sum_to_one":
            return heatmap
        return Heatmap(heatmap.values, "sum_to_one", heatmap.flag)
    scaled = (heatmap.values.astype(np.float64) / total).astype(np.float32)
    return Heatmap(scaled, "sum_to_one", heatmap.flag)


def uniform_heatmap(width, height, flag=None):
    return normalize(Heatmap(np.ones((height, width), dtype=np.float32), "raw", flag))


def gaussian_heatmap(width, height, center_u, center_v, sigma_px):
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    g = np.exp(-((rows[:, None] - center_v) ** 2 + (cols[None, :] - center_u) ** 2) / (2.0 * sigma_px ** 2))
    total = g.sum()
    if not total > 0.0:
        raise ZeroMassError("gaussian underflowed to zero mass")
    return normalize(Heatmap((g / total).astype(np.float32), "raw"))


def oracle_heatmap(image, target_world, sigma_px=DEFAULT_SIGMA_PX, target_points=None):
    """Isotropic Gaussian on the target's projection in ``image``.

    With ``target_points`` (the target object's own points) the oracle only
    sees what the render shows: the peak moves by the offset between the
    visible and the complete target footprint, and a fully hidden target
    gives a uniform map flagged ``"occluded"``. Off-frame targets give a
    uniform map flagged ``"off_frame"``.
    """
    if not sigma_px > 0:
        raise DomainError(f"sigma_px must be positive, got {sigma_px}")
    w, h = image.width, image.height
    target = np.asarray(target_world, dtype=np.float64).reshape(3)
    proj = image.pose.project(target[None, :])
    if not proj.inside[0]:
        return uniform_heatmap(w, h, "off_frame")
    cu, cv = float(proj.u[0]), float(proj.v[0])

    if target_points is not None:
        pts = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
        tp = image.pose.project(pts)
        rows, cols = tp.pixels()
        rows, cols = rows[tp.inside], cols[tp.inside]
        footprint = np.unique(rows * w + cols)
        if footprint.size == 0:
            return uniform_heatmap(w, h, "occluded")
        radius = float(np.max(np.linalg.norm(pts - target, axis=1))) + 1e-9
        fr, fc = footprint // w, footprint % w
        seen_xyz = image.world_xyz[fr, fc]
        seen = image.valid[fr, fc] & (np.linalg.norm(seen_xyz - target, axis=1) <= radius)
        if not np.any(seen):
            return uniform_heatmap(w, h, "occluded")
        cu += float(fc[seen].mean() - fc.mean())
        cv += float(fr[seen].mean() - fr.mean())
        cu = min(max(cu, 0.0), np.nextafter(w, 0))
        cv = min(max(cv, 0.0), np.nextafter(h, 0))

    # a projection on a pixel edge would tie two pixels; lean a hair toward
    # the middle of the pixel it lands in so the peak stays in that pixel
    cu += TIE_NUDGE * (math.floor(cu) + 0.5 - cu)
    cv += TIE_NUDGE * (math.floor(cv) + 0.5 - cv)
    return gaussian_heatmap(w, h, cu, cv, sigma_px)


# --------------------------------------------------------------------------
# Providers
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AttentionRequest:
    images: list
    instruction: str = ""

    def __post_init__(self):
        if not self.images:
            raise ContractError("attention request needs at least one image")
        sizes = {(im.width, im.height) for im in self.images}
        if len(sizes) != 1:
            raise ContractError(f"attention request images differ in size: {sorted(sizes)}")


class OracleProvider:
    """Ground-truth stand-in for the learned heatmap head."""

    def __init__(self, target, sigma_px=DEFAULT_SIGMA_PX, target_points=None):
        self.target = np.asarray(target, dtype=np.float64).reshape(3)
        self.sigma_px = sigma_px
        self.target_points = target_points

    def heatmaps(self, request):
        return [oracle_heatmap(im, self.target, self.sigma_px, self.target_points) for im in request.images]


def _b64(arr_bytes):
    return base64.b64encode(arr_bytes).decode("ascii")


def encode_request(request):
    images = []
    for im in request.images:
        depth = np.where(im.valid, im.depth, np.inf).astype("<f4")
        images.append({
            "width": im.width,
            "height": im.height,
            "rgb_ppm_b64": _b64(encode_ppm(im.rgb)),
            "depth_f32_b64": _b64(depth.tobytes()),
        })
    return {"instruction": request.instruction, "images": images}


def decode_response(payload, request):
    """Validate a server response and turn it into heatmaps."""
    try:
        entries = payload["heatmaps"]
        if not isinstance(entries, list):
            raise TypeError("heatmaps is not a list")
    except (KeyError, TypeError) as exc:
        raise MalformedPayload(f"response lacks a heatmaps list: {exc}") from None
    if len(entries) != len(request.images):
        raise ContractError(f"expected {len(request.images)} heatmaps, got {len(entries)}")
    maps = []
    for i, (entry, im) in enumerate(zip(entries, request.images)):
        try:
            w, h = int(entry["width"]), int(entry["height"])
            raw = base64.b64decode(entry["values_f32_b64"], validate=True)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedPayload(f"heatmap {i}: {exc}") from None
        if (w, h) != (im.width, im.height):
            raise ContractError(f"heatmap {i}: expected {im.width}x{im.height}, got {w}x{h}")
        if len(raw) != 4 * w * h:
            raise MalformedPayload(f"heatmap {i}: {len(raw)} bytes for {w}x{h} float32 grid")
        values = np.frombuffer(raw, dtype="<f4").reshape(h, w)
        if not np.all(np.isfinite(values)):
            raise ContractError(f"heatmap {i}: non-finite value")
        if np.any(values < 0):
            raise ContractError(f"heatmap {i}: negative value {float(values.min())}")
        declared = entry.get("normalization", "raw")
        if declared not in ("raw", "sum_to_one"):
            raise MalformedPayload(f"heatmap {i}: unknown normalization {declared!r}")
        try:
            maps.append(normalize(Heatmap(values, "raw")))
        except ZeroMassError:
            raise ContractError(f"heatmap {i}: zero mass") from None
    return maps


def remote_heatmaps(request, endpoint, timeout=10.0, client=None):
    """POST ``request`` to ``<endpoint>/heatmap`` and return one map per image."""
    url = endpoint.rstrip("/")
    if not url.endswith("/heatmap"):
        url += "/heatmap"
    body = encode_request(request)
    try:
        if client is None:
            resp = httpx.post(url, json=body, timeout=timeout)
        else:
            resp = client.post(url, json=body, timeout=timeout)
    except httpx.TimeoutException as exc:
        raise ProviderTimeout(f"{url} timed out after {timeout}s") from exc
    except httpx.HTTPError as exc:
        raise ConnectionFailed(f"{url}: {exc}") from exc
    if resp.status_code != 200:
        raise TransportError(f"{url} returned HTTP {resp.status_code}")
    try:
        payload = resp.json()
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedPayload(f"{url} returned invalid JSON: {exc}") from None
    return decode_response(payload, request)


class RemoteProvider:
    """Heatmaps from an external server, optionally falling back to another provider."""

    def __init__(self, endpoint, timeout=10.0, fallback=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.fallback = fallback
        self.fell_back = False

    def heatmaps(self, request):
        try:
            return remote_heatmaps(request, self.endpoint, self.timeout)
        except (TransportError, ContractError):
            if self.fallback is None:
                raise
            self.fell_back = True
            return self.fallback.heatmaps(request)


def heatmap_payload(maps):
    """Server-side helper: the response body for a list of heatmaps."""
    return {
        "heatmaps": [
            {
                "width": m.width,
                "height": m.height,
                "values_f32_b64": _b64(np.ascontiguousarray(m.values, dtype="<f4").tobytes()),
                "normalization": m.normalization,
            }
            for m in maps
        ]
    }

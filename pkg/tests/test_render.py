import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeview.errors import DomainError, EmptyInputError
from activeview.render import (
    decode_ppm,
    encode_ppm,
    export_image,
    ortho_pose,
    pixel_resolution,
    read_float_grid,
    render_ortho_set,
    render_orthographic,
    render_perspective,
    zoom_coverage,
)
from activeview.scene import Aabb, PointCloud
from activeview.viewsphere import perspective_pose

UNIT = Aabb([0, 0, 0], [1, 1, 1])


def random_cloud(seed, n=400):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 3)))


def test_center_point_top_view():
    im = render_orthographic(PointCloud([[0.5, 0.5, 0.5]]), "top", UNIT)
    assert im.valid.sum() == 1
    assert im.valid[112, 112]
    np.testing.assert_array_equal(im.world_xyz[112, 112], [0.5, 0.5, 0.5])
    assert im.depth[112, 112] == pytest.approx(0.5)


def test_higher_point_wins_top_view():
    cloud = PointCloud([[0.3, 0.3, 0.2], [0.3, 0.3, 0.7]], [[0, 0, 1], [1, 0, 0]])
    im = render_orthographic(cloud, "top", UNIT)
    r, c = np.argwhere(im.valid)[0]
    np.testing.assert_array_equal(im.rgb[r, c], [1, 0, 0])
    assert im.source_point[r, c] == 1


@pytest.mark.parametrize("view,axis,sign", [("top", 2, -1), ("front", 1, 1), ("right", 0, -1)])
def test_view_directions(view, axis, sign):
    r, u, f = ortho_pose(view, UNIT).basis
    expected = np.zeros(3)
    expected[axis] = sign
    np.testing.assert_allclose(f, expected, atol=1e-15)


def test_view_directions_mutually_orthogonal():
    fs = [ortho_pose(v, UNIT).basis[2] for v in ("top", "front", "right")]
    g = np.array(fs) @ np.array(fs).T
    np.testing.assert_allclose(g, np.eye(3), atol=1e-15)


@pytest.mark.parametrize("view", ["top", "front", "right"])
def test_round_trip_world_xyz_reprojects(view):
    cloud = random_cloud(1)
    im = render_orthographic(cloud, view, UNIT)
    rows, cols = np.nonzero(im.valid)
    pr = im.pose.project(im.world_xyz[rows, cols])
    u = np.minimum(np.floor(pr.u), im.width - 1)
    v = np.minimum(np.floor(pr.v), im.height - 1)
    np.testing.assert_array_equal(u, cols)
    np.testing.assert_array_equal(v, rows)


@pytest.mark.parametrize("view", ["top", "front", "right"])
def test_occlusion_exhaustive(view):
    cloud = random_cloud(2, 3000)
    im = render_orthographic(cloud, view, UNIT, (32, 32))
    pr = im.pose.project(cloud.positions)
    cols = np.minimum(np.floor(pr.u).astype(int), 31)
    rows = np.minimum(np.floor(pr.v).astype(int), 31)
    for i in range(len(cloud)):
        assert im.valid[rows[i], cols[i]]
        assert im.depth[rows[i], cols[i]] <= pr.depth[i]
    # world_xyz equals the source point exactly
    r, c = np.nonzero(im.valid)
    np.testing.assert_array_equal(im.world_xyz[r, c], cloud.positions[im.source_point[r, c]])


def test_depth_tie_goes_to_lower_index():
    cloud = PointCloud([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]], [[0, 1, 0], [1, 0, 0]])
    im = render_orthographic(cloud, "top", UNIT)
    assert im.source_point[112, 112] == 0


def test_render_is_permutation_invariant_except_tie_ids():
    cloud = random_cloud(3, 1000)
    perm = np.random.default_rng(0).permutation(len(cloud))
    a = render_orthographic(cloud, "front", UNIT)
    b = render_orthographic(PointCloud(cloud.positions[perm], cloud.colors[perm]), "front", UNIT)
    np.testing.assert_array_equal(a.valid, b.valid)
    np.testing.assert_array_equal(a.depth, b.depth)
    np.testing.assert_array_equal(a.world_xyz, b.world_xyz)


def test_invalid_pixels_carry_sentinels():
    im = render_orthographic(PointCloud([[0.2, 0.2, 0.2]]), "right", UNIT)
    inv = ~im.valid
    assert np.all(np.isinf(im.depth[inv]))
    assert np.all(im.rgb[inv] == 0) and np.all(im.world_xyz[inv] == 0)
    assert np.all(im.source_point[inv] == -1)
    assert im.channels().shape == (224, 224, 7)


def test_points_outside_workspace_culled():
    im = render_orthographic(PointCloud([[0.5, 0.5, 1.5]]), "top", UNIT)
    assert not im.valid.any()


def test_max_face_points_clamped_into_image():
    im = render_orthographic(PointCloud([[1.0, 0.0, 0.5]]), "top", UNIT, (10, 10))
    assert im.valid[9, 9]


def test_degenerate_workspace():
    with pytest.raises(DomainError):
        render_orthographic(PointCloud([[0, 0, 0]]), "top", Aabb([0, 0, 0], [0, 1, 1]))


def test_empty_cloud_rejected():
    with pytest.raises(EmptyInputError):
        render_orthographic(PointCloud(np.zeros((0, 3))), "top", UNIT)


def test_splat_radius_two_covers_three_by_three():
    im = render_orthographic(PointCloud([[0.5, 0.5, 0.5]]), "top", UNIT, splat_radius=2)
    assert im.valid.sum() == 9


def test_ortho_set_has_three_views():
    views = render_ortho_set(random_cloud(4), UNIT)
    assert set(views) == {"top", "front", "right"}


def test_perspective_on_axis_point():
    pose = perspective_pose([0, 0, 0], [0, 0, -1], math.pi / 2, 1.0)
    im = render_perspective(PointCloud([[0, 0, -2.0]]), pose)
    assert im.valid[112, 112]
    assert im.depth[112, 112] == pytest.approx(2.0)


def test_perspective_culls_behind():
    pose = perspective_pose([0, 0, 0], [0, 0, -1], math.pi / 2)
    im = render_perspective(PointCloud([[0, 0, 2.0]]), pose)
    assert not im.valid.any()


@pytest.mark.parametrize("z", [1.0, 2.0, 4.0])
def test_calibration_points_on_borders(z):
    d, alpha = 1.5, math.pi / 3
    w = zoom_coverage(alpha, z, d)
    pose = perspective_pose([0, -d, 0], [0, 0, 0], alpha, z, (224, 224))
    inset = 1e-9
    pts = [[-w / 2 + inset, 0, 0], [w / 2 - inset, 0, 0]]
    pr = pose.project(pts)
    assert pr.u[0] == pytest.approx(0.0, abs=1)
    assert pr.u[1] == pytest.approx(224.0, abs=1)


def measured_footprint(alpha, z, d, size=224):
    """Width in meters of a dense calibration plane that lands in the image."""
    pose = perspective_pose([0, -d, 0], [0, 0, 0], alpha, z, (size, size))
    xs = np.linspace(-2 * d, 2 * d, 40001)
    plane = PointCloud(np.stack([xs, np.zeros_like(xs), np.zeros_like(xs)], axis=1))
    im = render_perspective(plane, pose)
    seen = plane.positions[im.source_point[im.valid]][:, 0]
    cols = np.nonzero(im.valid.any(axis=0))[0]
    return seen.max() - seen.min(), cols.min(), cols.max()


def test_doubling_zoom_halves_footprint_ratio():
    d, alpha = 1.0, math.pi / 2
    w1, _, _ = measured_footprint(alpha, 2.0, d)
    w2, _, _ = measured_footprint(alpha, 4.0, d)
    px = zoom_coverage(alpha, 4.0, d) / 224
    expect = zoom_coverage(alpha, 4.0, d) / zoom_coverage(alpha, 2.0, d)
    assert abs(w2 - expect * w1) <= px


def test_zoom_coverage_spot_values():
    assert zoom_coverage(math.pi / 2, 1, 1) == pytest.approx(2.0, abs=1e-12)
    assert zoom_coverage(math.pi / 2, 2, 1) == pytest.approx(0.82843, abs=1e-5)
    assert zoom_coverage(math.pi / 2, 4, 1) == pytest.approx(0.39782, abs=1e-4)


def test_zoom_coverage_domain():
    for args in [(0, 1, 1), (math.pi, 1, 1), (1, 0.9, 1), (1, 1, 0)]:
        with pytest.raises(DomainError):
            zoom_coverage(*args)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(1.0, 10.0), st.floats(0.01, 10.0))
def test_property_zoom_monotone(alpha, z, d):
    w = zoom_coverage(alpha, z, d)
    assert zoom_coverage(alpha, z * 1.01, d) < w
    assert zoom_coverage(alpha, z, d * 1.01) > w
    assert zoom_coverage(min(alpha * 1.01, 3.1), z, d) > w


def test_pixel_resolution_preserved_ratio():
    r1 = pixel_resolution(224, 1.0, 1.0, 1.0)
    assert r1 == pytest.approx(224 / zoom_coverage(1.0, 1.0, 1.0))
    assert pixel_resolution(224, 1.0, 4.0, 1.0) > r1


def test_ppm_round_trip_with_leading_whitespace_bytes():
    rgb = np.zeros((2, 3, 3))
    rgb[0, 0] = [10 / 255, 32 / 255, 9 / 255]  # bytes that look like whitespace
    back = decode_ppm(encode_ppm(rgb))
    np.testing.assert_allclose(back, rgb, atol=1e-12)


def test_export_image_files(tmp_path):
    im = render_orthographic(random_cloud(5), "top", UNIT, (16, 8))
    export_image(im, str(tmp_path), "top")
    header, grid = read_float_grid(str(tmp_path / "top_depth"))
    assert header == {"width": 16, "height": 8, "channel": "depth", "dtype": "f32le"}
    np.testing.assert_array_equal(grid, im.depth.astype(np.float32))
    pgm = (tmp_path / "top_valid.pgm").read_bytes()
    assert pgm.startswith(b"P5\n16 8\n255\n")
    body = np.frombuffer(pgm[len(b"P5\n16 8\n255\n"):], dtype=np.uint8).reshape(8, 16)
    np.testing.assert_array_equal(body == 255, im.valid)
    assert json.loads((tmp_path / "top_world_x.json").read_text())["channel"] == "world_x"

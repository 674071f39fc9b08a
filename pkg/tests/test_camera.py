import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcd.camera import (
    CameraFrame,
    Intrinsics,
    Pose,
    back_project,
    element_corners,
    load_frames,
    polygon_pixel_mask,
    project,
    project_element,
    rasterize,
    write_frames_manifest,
    frame_record,
    write_png,
)
from hmcd.errors import ContractError, DegenerateOrientationError, DegenerateProjectionError, InvalidDepthError
from hmcd.map_model import MapElement

from helpers import element_in_view, level_pose, random_intrinsics, random_pose
from oracles import pinhole, quad_boundary_pixels, quad_pixel_oracle, unproject

K_HD = Intrinsics(1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
IDENTITY = Pose(np.zeros(3), np.array([1.0, 0, 0, 0]))


def test_project_principal_point():
    assert project(np.array([0.0, 0, 20]), IDENTITY, K_HD) == pytest.approx((960, 540, 20))


def test_project_offset_point():
    assert project(np.array([1.0, 0, 20]), IDENTITY, K_HD) == pytest.approx((1010, 540, 20))


def test_project_behind_camera_reports_negative_depth():
    assert project(np.array([0.0, 0, -5]), IDENTITY, K_HD)[2] == pytest.approx(-5)


def test_project_on_principal_plane_errors():
    with pytest.raises(DegenerateProjectionError):
        project(np.array([1.0, 2.0, 0.0]), IDENTITY, K_HD)


def test_back_project_examples():
    np.testing.assert_allclose(back_project((960, 540), 20, IDENTITY, K_HD), [0, 0, 20])
    np.testing.assert_allclose(back_project((1010, 540), 20, IDENTITY, K_HD), [1, 0, 20])
    with pytest.raises(InvalidDepthError):
        back_project((0, 0), 0.0, IDENTITY, K_HD)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_projection_matches_independent_pinhole(seed):
    rng = np.random.default_rng(seed)
    pose, K = random_pose(rng), random_intrinsics(rng)
    p = pose.rotation @ np.array([*rng.uniform(-5, 5, 2), rng.uniform(1, 50)]) + pose.position
    u, v, d = project(p, pose, K)
    uo, vo, do = pinhole(p, pose.rotation, pose.position, K.fx, K.fy, K.cx, K.cy)
    assert (u, v, d) == pytest.approx((uo, vo, do), rel=1e-10, abs=1e-8)
    np.testing.assert_allclose(back_project((u, v), d, pose, K),
                               unproject(u, v, d, pose.rotation, pose.position, K.fx, K.fy, K.cx, K.cy),
                               atol=1e-8)


def test_look_at_axes():
    pose = Pose.look_at([0, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(pose.forward, [1, 0, 0], atol=1e-12)
    # image right is world -y when looking along +x with z up; image down is world -z
    np.testing.assert_allclose(pose.rotation[:, 0], [0, -1, 0], atol=1e-12)
    np.testing.assert_allclose(pose.rotation[:, 1], [0, 0, -1], atol=1e-12)


def test_element_corners_hand_construction():
    e = MapElement("a", np.zeros(3), np.array([-1.0, 0, 0]), 1.0, 2.0)
    c = element_corners(e)
    assert {tuple(np.round(p, 12)) for p in c} == {(0, y, z) for y in (-0.5, 0.5) for z in (-1, 1)}
    # seen from a camera on the -x side, the first corner is top-left in the image
    pose = Pose.look_at([-10, 0, 0], [1, 0, 0])
    u, v, _ = project(c, pose, K_HD)
    assert u[0] < u[1] and v[0] < v[3]


def test_element_facing_up_is_degenerate():
    e = MapElement("a", np.zeros(3), np.array([0.0, 0, 1]), 1.0, 1.0)
    with pytest.raises(DegenerateOrientationError):
        element_corners(e)


def test_rasterize_empty():
    raster, boxes = rasterize([], IDENTITY, K_HD)
    assert raster.shape == (1080, 1920, 1) and not raster.any() and boxes == []


def test_rasterize_element_behind_camera():
    e = MapElement("a", np.array([0, 0, -10.0]), np.array([1.0, 0, 0]), 1, 1)
    raster, boxes = rasterize([e], IDENTITY, K_HD)
    assert not raster.any() and boxes[0].box is None


def test_twenty_pixel_square_fills_400_pixels():
    K = Intrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)
    pose = Pose.look_at([-10, 0, 0], [1, 0, 0])
    # 2 m at 10 m depth with f=100 -> 20 px
    e = MapElement("a", np.zeros(3), np.array([-1.0, 0, 0]), 2.0, 2.0)
    raster, boxes = rasterize([e], pose, K)
    assert int((raster > 0).sum()) == 400
    np.testing.assert_allclose(boxes[0].box, [40, 40, 60, 60])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_rasterize_matches_point_in_quad_oracle(seed):
    rng = np.random.default_rng(seed)
    pose, K = random_pose(rng), random_intrinsics(rng)
    e = element_in_view(rng, pose, K)
    raster, projected = rasterize([e], pose, K)
    p = projected[0]
    if p.corners_uv is None:
        assert not raster.any()
        return
    oracle = quad_pixel_oracle(p.corners_uv, K.height, K.width)
    edge = quad_boundary_pixels(p.corners_uv, K.height, K.width)
    got = raster[..., 0] > 0
    assert np.array_equal(got & ~edge, oracle & ~edge)


def test_box_tightly_bounds_filled_pixels():
    rng = np.random.default_rng(3)
    for _ in range(30):
        pose, K = random_pose(rng), random_intrinsics(rng)
        raster, projected = rasterize([element_in_view(rng, pose, K)], pose, K)
        rows, cols = np.nonzero(raster[..., 0])
        if projected[0].box is None or len(rows) == 0:
            continue
        x1, y1, x2, y2 = projected[0].box
        assert cols.min() >= np.floor(x1) - 1 and cols.max() + 1 <= np.ceil(x2) + 1
        assert rows.min() >= np.floor(y1) - 1 and rows.max() + 1 <= np.ceil(y2) + 1


def test_adjacent_quads_never_double_cover():
    a = np.array([[0.3, 0.2], [5.0, 0.2], [5.0, 7.7], [0.3, 7.7]])
    b = np.array([[5.0, 0.2], [9.6, 0.2], [9.6, 7.7], [5.0, 7.7]])
    full = np.array([[0.3, 0.2], [9.6, 0.2], [9.6, 7.7], [0.3, 7.7]])
    ma, mb = polygon_pixel_mask(a, 10, 10), polygon_pixel_mask(b, 10, 10)
    assert not (ma & mb).any()
    assert np.array_equal(ma | mb, polygon_pixel_mask(full, 10, 10))


def test_polygon_orientation_does_not_matter():
    quad = np.array([[1.2, 1.1], [8.4, 2.0], [7.7, 9.3], [0.9, 6.6]])
    assert np.array_equal(polygon_pixel_mask(quad, 12, 12), polygon_pixel_mask(quad[::-1], 12, 12))


def test_rasterize_is_deterministic():
    rng = np.random.default_rng(5)
    pose, K = random_pose(rng), random_intrinsics(rng)
    elems = [element_in_view(rng, pose, K, f"e{i}") for i in range(5)]
    assert np.array_equal(rasterize(elems, pose, K)[0], rasterize(elems, pose, K)[0])


def test_project_element_culls_partially_behind():
    pose = level_pose([0, 0, 0], 0.0)
    # element straddling the camera plane
    e = MapElement("a", np.array([0.2, 0, 0]), np.array([0, -1.0, 0]), 2.0, 1.0)
    assert project_element(e, pose, K_HD).box is None


def test_frame_shape_checked():
    with pytest.raises(ContractError):
        CameraFrame(np.zeros((10, 10, 3), np.uint8), IDENTITY, K_HD)


def test_frames_manifest_round_trip(tmp_path):
    K = Intrinsics(50.0, 50.0, 16.0, 16.0, 32, 32)
    img = np.random.default_rng(0).integers(0, 255, (32, 32, 3), dtype=np.uint8)
    pose = level_pose([1, 2, 3], 0.3)
    f = CameraFrame(img, pose, K, "c", 4)
    (tmp_path / "images").mkdir()
    write_png(tmp_path / "images" / "x.png", img)
    write_frames_manifest(tmp_path / "frames.jsonl", [frame_record(f, "images/x.png")])
    (back,) = load_frames(tmp_path / "frames.jsonl")
    assert back.name == "c_00004"
    np.testing.assert_array_equal(back.image, img)
    np.testing.assert_allclose(back.pose.rotation, pose.rotation, atol=1e-12)
    assert back.intrinsics == K

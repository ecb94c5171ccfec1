import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from conftest import overhead_camera
from oracles import project_oracle, table_oracle
from mvbev.errors import BehindCamera, DegenerateCamera, InvalidCalibration, ShapeMismatch
from mvbev.geometry import (
    OUT_OF_VIEW,
    BevGrid,
    CameraCalibration,
    ProjectionTable,
    build_projection_table,
    ground_homography,
    load_calibrations,
    look_at,
    project_points,
    project_world_to_image,
    save_calibrations,
    warp_backward,
    warp_to_bev,
)


def identity_camera(fx=100.0, cx=32.0, cy=24.0):
    return CameraCalibration(fx, fx, cx, cy, np.eye(3), np.zeros(3), 64, 48)


def random_calibration(rng):
    R = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    return CameraCalibration(float(rng.uniform(20, 200)), float(rng.uniform(20, 200)), float(rng.uniform(0, 64)),
                             float(rng.uniform(0, 48)), R, rng.normal(size=3), 64, 48)


# --- calibration -----------------------------------------------------------

def test_principal_axis_maps_to_principal_point():
    assert project_world_to_image(identity_camera(), (0, 0, 5)) == (32.0, 24.0)


def test_lateral_offset_scales_with_focal_length():
    u, v = project_world_to_image(identity_camera(fx=100.0), (1, 0, 5))
    assert u == pytest.approx(32.0 + 20.0)
    assert v == pytest.approx(24.0)


def test_point_behind_camera_raises():
    with pytest.raises(BehindCamera):
        project_world_to_image(identity_camera(), (0, 0, -1))
    uv, z = project_points(identity_camera(), [[0, 0, -1], [0, 0, 2]])
    assert np.isnan(uv[0]).all() and np.isfinite(uv[1]).all()
    assert z[0] < 0 < z[1]


@pytest.mark.parametrize("seed", range(20))
def test_projection_matches_matrix_oracle(seed):
    rng = np.random.default_rng(seed)
    cam = random_calibration(rng)
    for _ in range(10):
        pc = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 10)])
        p = cam.R.T @ (pc - cam.t)
        ref = project_oracle(cam.K, cam.R, cam.t, p)
        got = project_world_to_image(cam, p)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-9)


def test_invalid_calibrations_rejected():
    with pytest.raises(InvalidCalibration):
        CameraCalibration(100, 100, 0, 0, np.diag([1.0, 1.0, 2.0]), np.zeros(3), 8, 8)
    with pytest.raises(InvalidCalibration):
        CameraCalibration(100, 100, 0, 0, np.diag([1.0, 1.0, -1.0]), np.zeros(3), 8, 8)
    with pytest.raises(InvalidCalibration):
        CameraCalibration(0, 100, 0, 0, np.eye(3), np.zeros(3), 8, 8)


def test_calibration_dict_round_trip(tmp_path, oblique_camera):
    save_calibrations(tmp_path / "cams.json", [oblique_camera])
    (back,) = load_calibrations(tmp_path / "cams.json")
    np.testing.assert_array_equal(back.R, oblique_camera.R)
    np.testing.assert_array_equal(back.t, oblique_camera.t)
    assert (back.fx, back.cy, back.image_w) == (oblique_camera.fx, oblique_camera.cy, oblique_camera.image_w)


def test_look_at_centres_target():
    cam = look_at((5.0, -3.0, 4.0), (1.0, 2.0, 0.0), 80, 80, 40, 30, 80, 60)
    np.testing.assert_allclose(project_world_to_image(cam, (1.0, 2.0, 0.0)), (40, 30), atol=1e-9)
    np.testing.assert_allclose(cam.center, (5.0, -3.0, 4.0), atol=1e-12)


def test_look_at_keeps_vertical_up_in_image():
    cam = look_at((6.0, 0.0, 3.0), (0.0, 0.0, 0.0), 80, 80, 40, 30, 80, 60)
    _, v_foot = project_world_to_image(cam, (0.0, 0.0, 0.0))
    _, v_head = project_world_to_image(cam, (0.0, 0.0, 1.8))
    assert v_head < v_foot


def test_roll_rotates_image_about_principal_point():
    base = look_at((6.0, 0.0, 3.0), (0.0, 0.0, 0.0), 80, 80, 40, 30, 80, 60)
    rolled = look_at((6.0, 0.0, 3.0), (0.0, 0.0, 0.0), 80, 80, 40, 30, 80, 60, roll_deg=90.0)
    p = (0.5, 1.0, 0.7)
    u0, v0 = project_world_to_image(base, p)
    u1, v1 = project_world_to_image(rolled, p)
    # rotating the image frame by 90 degrees maps (du, dv) -> (dv, -du)
    np.testing.assert_allclose((u1 - 40, v1 - 30), (v0 - 30, -(u0 - 40)), atol=1e-9)


# --- homography ------------------------------------------------------------

def test_overhead_homography_sign_convention():
    cam = overhead_camera(height=5.0, f=100.0)
    H = ground_homography(cam)
    h = H @ np.array([1.0, 0.0, 1.0])
    np.testing.assert_allclose(h[:2] / h[2], (20.0, 0.0), atol=1e-12)
    h = H @ np.array([0.0, 1.0, 1.0])
    # R = diag(1, -1, -1): world +Y points up the image
    np.testing.assert_allclose(h[:2] / h[2], (0.0, -20.0), atol=1e-12)


def test_homography_agrees_with_direct_projection(oblique_camera):
    rng = np.random.default_rng(3)
    H = ground_homography(oblique_camera)
    for x, y in rng.uniform(-1, 3, size=(100, 2)):
        h = H @ np.array([x, y, 1.0])
        direct = project_world_to_image(oblique_camera, (x, y, 0.0))
        np.testing.assert_allclose(h[:2] / h[2], direct, atol=1e-9)


def test_homography_is_deterministic(oblique_camera):
    assert ground_homography(oblique_camera).tobytes() == ground_homography(oblique_camera).tobytes()


def test_camera_in_ground_plane_is_degenerate():
    # optical axis horizontal, centre at z=0: every ground point projects onto one image row
    cam = look_at((0.0, -5.0, 0.0), (0.0, 0.0, 0.0), 50, 50, 20, 20, 40, 40)
    with pytest.raises(DegenerateCamera):
        ground_homography(cam)


# --- projection table ------------------------------------------------------

def test_table_matches_per_cell_oracle(oblique_camera, small_grid):
    table = build_projection_table(oblique_camera, small_grid, 12, 16, 0.25)
    rows, cols = table_oracle(oblique_camera, small_grid, 12, 16, 0.25)
    np.testing.assert_array_equal(table.rows, rows)
    np.testing.assert_array_equal(table.cols, cols)
    assert table.n_in_view() > 0


@pytest.mark.parametrize("seed", range(5))
def test_table_matches_oracle_random_rigs(seed):
    rng = np.random.default_rng(100 + seed)
    grid = BevGrid(-1.0, -1.0, 0.25, 9, 11)
    cam = look_at((rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(1, 5)), (rng.uniform(-1, 1), 0.5, 0),
                  70, 70, 31.5, 23.5, 64, 48)
    table = build_projection_table(cam, grid, 12, 16, 0.25)
    rows, cols = table_oracle(cam, grid, 12, 16, 0.25)
    np.testing.assert_array_equal(table.rows, rows)
    np.testing.assert_array_equal(table.cols, cols)


def test_camera_facing_away_sees_nothing(small_grid):
    cam = look_at((0.6, -3.0, 2.0), (0.6, -10.0, 2.0), 60, 60, 31.5, 23.5, 64, 48)
    table = build_projection_table(cam, small_grid, 12, 16, 0.25)
    assert table.n_in_view() == 0
    assert (table.rows == OUT_OF_VIEW).all()


def test_overhead_camera_sees_whole_grid():
    grid = BevGrid(-1.0, -1.0, 0.1, 20, 20)
    cam = overhead_camera(height=5.0, f=100.0, cx=31.5, cy=31.5)
    table = build_projection_table(cam, grid, 16, 16, 0.25)
    assert table.n_in_view() == grid.h_g * grid.w_g


def test_table_validation():
    with pytest.raises(ShapeMismatch):
        ProjectionTable(np.zeros((2, 2)), np.zeros((2, 3)), 4, 4)
    with pytest.raises(ValueError):
        ProjectionTable(np.full((2, 2), 5), np.zeros((2, 2)), 4, 4)
    with pytest.raises(ValueError):
        ProjectionTable(np.array([[-1, 0]]), np.array([[0, 0]]), 4, 4)


# --- warp ------------------------------------------------------------------

def random_table(rng, h_g=5, w_g=7, h_f=4, w_f=6, p_out=0.3):
    rows = rng.integers(0, h_f, size=(h_g, w_g))
    cols = rng.integers(0, w_f, size=(h_g, w_g))
    out = rng.random((h_g, w_g)) < p_out
    rows[out] = OUT_OF_VIEW
    cols[out] = OUT_OF_VIEW
    return ProjectionTable(rows, cols, h_f, w_f)


def test_warp_zero_in_zero_out():
    table = random_table(np.random.default_rng(0))
    assert not warp_to_bev(np.zeros((3, 4, 6), np.float32), table).any()


def test_warp_all_out_of_view_is_zero():
    table = ProjectionTable(np.full((5, 7), -1), np.full((5, 7), -1), 4, 6)
    x = np.random.default_rng(1).normal(size=(2, 4, 6))
    assert not warp_to_bev(x, table).any()
    assert not warp_backward(np.ones((2, 5, 7)), table).any()


def test_warp_one_hot_lands_on_matching_cells():
    rng = np.random.default_rng(2)
    table = random_table(rng)
    x = np.zeros((1, 4, 6))
    x[0, 2, 3] = 1.0
    expected = (table.rows == 2) & (table.cols == 3)
    np.testing.assert_array_equal(warp_to_bev(x, table)[0] != 0, expected)


def test_warp_backward_sums_colliding_cells():
    rows = np.array([[1, 1], [-1, 0]])
    cols = np.array([[2, 2], [-1, 0]])
    table = ProjectionTable(rows, cols, 3, 3)
    g = np.array([[[0.25, 0.5], [7.0, 2.0]]])
    dx = warp_backward(g, table)
    assert dx[0, 1, 2] == 0.75
    assert dx[0, 0, 0] == 2.0
    assert dx.sum() == 2.75


@given(st.integers(0, 2**32 - 1))
def test_warp_adjoint_exact_on_integer_tensors(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng)
    x = rng.integers(-50, 50, size=(3, 4, 6)).astype(np.float64)
    y = rng.integers(-50, 50, size=(3, 5, 7)).astype(np.float64)
    assert np.vdot(warp_to_bev(x, table), y) == np.vdot(x, warp_backward(y, table))


@given(st.integers(0, 2**32 - 1))
def test_warp_adjoint_close_on_real_tensors(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng)
    x = rng.normal(size=(2, 4, 6))
    y = rng.normal(size=(2, 5, 7))
    assert np.vdot(warp_to_bev(x, table), y) == pytest.approx(np.vdot(x, warp_backward(y, table)), rel=1e-12,
                                                               abs=1e-12)


def test_warp_shape_checks():
    table = random_table(np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        warp_to_bev(np.zeros((1, 5, 6)), table)
    with pytest.raises(ShapeMismatch):
        warp_backward(np.zeros((1, 4, 4)), table)


def test_grid_cell_round_trip():
    grid = BevGrid(-2.0, 1.0, 0.1, 40, 30)
    for i, j in [(0, 0), (39, 29), (17, 4)]:
        x, y = grid.cell_center(i, j)
        assert tuple(int(v) for v in grid.world_to_cell(x, y)) == (i, j)
    assert grid.meters_to_cells(0.5) == pytest.approx(5.0)

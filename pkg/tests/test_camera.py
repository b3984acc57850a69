"""Tests for the pinhole camera model.

The load-bearing oracle is the projection/backprojection round trip:
a known water-plane point projected through the same pinhole and
raycast back must land on itself.
"""

import math

import numpy as np
import pytest

from buoyfusion.camera import (
    CAM_TO_BODY,
    BehindCamera,
    BoundingBox,
    CameraExtrinsics,
    CameraIntrinsics,
    HorizonRay,
    bearing_from_box,
    build_extrinsics,
    load_calibration,
    pixel_to_ray,
    polar_to_body,
    project_to_pixel,
    raycast_to_water,
    save_calibration,
)
from buoyfusion.geo import BodyFramePoint, body_to_polar

INTR = CameraIntrinsics(u_0=480.0, v_0=270.0, f_s=800.0, f_l=1.0, image_w=960, image_h=540)


def level_extrinsics(height=2.0):
    return build_extrinsics(0.0, 0.0, 0.0, [0.0, 0.0, height])


class TestBuildExtrinsics:
    def test_zero_angles_axis_permutation(self):
        extr = build_extrinsics(0.0, 0.0, 0.0, [0.0, 0.0, 2.0])
        np.testing.assert_allclose(extr.rotation @ [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(extr.rotation, CAM_TO_BODY, atol=1e-12)

    def test_yaw_quarter_turn(self):
        # oracle: Rz(pi/2) @ CAM_TO_BODY @ z_cam = Rz(pi/2) @ x_body = +y (port)
        extr = build_extrinsics(0.0, 0.0, math.pi / 2.0, [0.0, 0.0, 2.0])
        forward = extr.rotation @ [0.0, 0.0, 1.0]
        c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
        oracle = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ CAM_TO_BODY @ [0, 0, 1]
        np.testing.assert_allclose(forward, oracle, atol=1e-12)
        np.testing.assert_allclose(forward, [0.0, 1.0, 0.0], atol=1e-12)

    def test_positive_pitch_tilts_down(self):
        extr = build_extrinsics(0.0, math.radians(10.0), 0.0, [0.0, 0.0, 2.0])
        forward = extr.rotation @ [0.0, 0.0, 1.0]
        assert forward[2] < 0.0

    def test_orthonormality_random_angles(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            roll, pitch, yaw = rng.uniform(-math.pi, math.pi, size=3)
            extr = build_extrinsics(float(roll), float(pitch), float(yaw), [0.0, 0.0, 2.0])
            np.testing.assert_allclose(extr.rotation.T @ extr.rotation, np.eye(3), atol=1e-9)
            assert np.linalg.det(extr.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError):
            CameraExtrinsics(rotation=np.eye(3) * 1.01, translation=np.zeros(3))


class TestPixelToRay:
    def test_principal_ray(self):
        origin, direction = pixel_to_ray(INTR.u_0, INTR.v_0, INTR, level_extrinsics())
        np.testing.assert_allclose(direction, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(origin, [0.0, 0.0, 2.0])

    def test_45_degrees_below_horizontal(self):
        v = INTR.v_0 + INTR.f_s * INTR.f_l
        _, direction = pixel_to_ray(INTR.u_0, v, INTR, level_extrinsics())
        # oracle: camera vector [0, 1, 1] maps to body [1, 0, -1] normalized
        np.testing.assert_allclose(direction, [1 / math.sqrt(2), 0.0, -1 / math.sqrt(2)], atol=1e-12)

    def test_unit_norm_random_pixels(self):
        rng = np.random.default_rng(33)
        extr = build_extrinsics(0.1, -0.05, 0.2, [0.5, -0.2, 3.0])
        for _ in range(200):
            u = float(rng.uniform(0, INTR.image_w))
            v = float(rng.uniform(0, INTR.image_h))
            _, d = pixel_to_ray(u, v, INTR, extr)
            assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)


class TestRaycastToWater:
    def test_45_degree_geometry(self):
        # bottom-center pixel one focal length below the principal point
        box = BoundingBox(c_x=INTR.u_0, c_y=INTR.v_0 + INTR.f_px - 5.0, w=10.0, h=10.0)
        p = raycast_to_water(box, INTR, level_extrinsics(height=2.0))
        assert p.x_b == pytest.approx(2.0, abs=1e-9)
        assert p.y_b == pytest.approx(0.0, abs=1e-12)
        assert p.z_b == 0.0

    def test_horizon_ray(self):
        box = BoundingBox(c_x=INTR.u_0, c_y=INTR.v_0 - 5.0, w=10.0, h=10.0)
        with pytest.raises(HorizonRay):
            raycast_to_water(box, INTR, level_extrinsics())

    def test_projection_backprojection_round_trip(self):
        rng = np.random.default_rng(55)
        checked = 0
        while checked < 1000:
            roll = float(rng.uniform(-0.1, 0.1))
            pitch = float(rng.uniform(0.0, 0.08))
            yaw = float(rng.uniform(-0.2, 0.2))
            height = float(rng.uniform(1.5, 5.0))
            extr = build_extrinsics(roll, pitch, yaw, [0.0, 0.0, height])
            dist = float(rng.uniform(20.0, 800.0))
            bearing = float(rng.uniform(-0.4, 0.4))
            point = polar_to_body(dist, bearing)
            try:
                u, v = project_to_pixel(point, INTR, extr)
            except BehindCamera:
                continue
            if not (0.0 <= u < INTR.image_w and 0.0 <= v < INTR.image_h):
                continue
            box = BoundingBox(c_x=u, c_y=v - 4.0, w=8.0, h=8.0)
            try:
                recovered = raycast_to_water(box, INTR, extr)
            except HorizonRay:
                continue
            err = math.hypot(recovered.x_b - point.x_b, recovered.y_b - point.y_b)
            assert err <= 1e-6 * dist
            checked += 1

    def test_distance_decreases_down_the_column(self):
        extr = level_extrinsics(height=3.0)
        prev = math.inf
        for v_bottom in np.linspace(INTR.v_0 + 5.0, INTR.image_h - 1.0, 40):
            box = BoundingBox(c_x=600.0, c_y=float(v_bottom) - 2.0, w=6.0, h=4.0)
            p = raycast_to_water(box, INTR, extr)
            d = math.hypot(p.x_b, p.y_b)
            assert d < prev
            prev = d


class TestBearingFromBox:
    def test_center_column(self):
        box = BoundingBox(c_x=INTR.u_0, c_y=300.0, w=10.0, h=10.0)
        assert bearing_from_box(box, INTR) == 0.0

    def test_one_focal_length_right(self):
        box = BoundingBox(c_x=INTR.u_0 + INTR.f_s * INTR.f_l, c_y=300.0, w=10.0, h=10.0)
        assert bearing_from_box(box, INTR) == pytest.approx(-math.pi / 4.0)

    def test_monotone_decreasing_in_cx(self):
        prev = math.inf
        for c_x in np.linspace(1.0, INTR.image_w - 1.0, 50):
            b = bearing_from_box(BoundingBox(c_x=float(c_x), c_y=300.0, w=4.0, h=4.0), INTR)
            assert b < prev
            prev = b

    def test_agrees_with_raycast_bearing_level_camera(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            height = float(rng.uniform(1.0, 10.0))
            extr = level_extrinsics(height=height)
            c_x = float(rng.uniform(1.0, INTR.image_w - 1.0))
            v_bottom = float(rng.uniform(INTR.v_0 + 2.0, INTR.image_h - 1.0))
            box = BoundingBox(c_x=c_x, c_y=v_bottom - 3.0, w=6.0, h=6.0)
            p = raycast_to_water(box, INTR, extr)
            assert bearing_from_box(box, INTR) == pytest.approx(
                body_to_polar(p).bearing, abs=1e-6
            )


class TestPolarToBody:
    def test_dead_ahead(self):
        p = polar_to_body(100.0, 0.0)
        assert (p.x_b, p.y_b, p.z_b) == (100.0, 0.0, 0.0)

    def test_abeam_port(self):
        p = polar_to_body(100.0, math.pi / 2.0)
        assert p.x_b == pytest.approx(0.0, abs=1e-12)
        assert p.y_b == pytest.approx(100.0)

    def test_negative_dist_rejected(self):
        with pytest.raises(ValueError):
            polar_to_body(-1.0, 0.0)

    def test_inverse_of_body_to_polar(self):
        rng = np.random.default_rng(13)
        for _ in range(300):
            x, y = rng.uniform(-500.0, 500.0, size=2)
            polar = body_to_polar(BodyFramePoint(float(x), float(y), 0.0))
            p = polar_to_body(polar.dist, polar.bearing)
            assert p.x_b == pytest.approx(float(x), abs=1e-9 * max(1.0, abs(x)))
            assert p.y_b == pytest.approx(float(y), abs=1e-9 * max(1.0, abs(y)))


class TestNormalizedBoxes:
    def test_round_trip(self):
        box = BoundingBox(c_x=0.5, c_y=0.25, w=0.1, h=0.05, normalized=True)
        pix = box.to_pixels(INTR)
        assert pix.c_x == 480.0 and pix.c_y == 135.0 and pix.w == 96.0 and pix.h == 27.0
        back = pix.to_normalized(INTR)
        assert back.c_x == pytest.approx(0.5)
        assert back.normalized

    def test_clamp(self):
        box = BoundingBox(c_x=950.0, c_y=10.0, w=40.0, h=40.0)
        clamped = box.clamped_to_image(INTR)
        assert clamped.c_x + clamped.w / 2.0 <= INTR.image_w
        assert clamped.c_y - clamped.h / 2.0 >= 0.0

    def test_fully_outside_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(c_x=-50.0, c_y=-50.0, w=10.0, h=10.0).clamped_to_image(INTR)


class TestCalibrationFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "calib.txt"
        save_calibration(path, INTR, [0.5, -0.1, 2.5])
        intr, mount = load_calibration(path)
        assert intr == INTR
        np.testing.assert_allclose(mount, [0.5, -0.1, 2.5])

    def test_missing_key(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text("u0 = 480\nv0 = 270\n")
        with pytest.raises(ValueError, match="missing"):
            load_calibration(path)

    def test_bad_line_reported(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text("u0 : 480\n")
        with pytest.raises(ValueError, match="calib.txt:1"):
            load_calibration(path)

"""Camera geometry: back-projection, perspective normals, light directions.

Derived expectations are computed by independent oracles inside the tests:
projection round-trips, symbolic plane normals, analytic sphere normals,
and finite differences on the back-projected surface.
"""

import numpy as np
import pytest

from colorps.errors import (
    DegenerateDirectionError,
    DegenerateNormalError,
    DomainError,
)
from colorps.geometry import (
    CameraModel,
    LightRig,
    LightSource,
    NormalMap,
    back_project,
    default_camera,
    default_rig,
    light_direction,
    normal_from_depth,
    project,
)

CAM = default_camera(640, 480)


class TestCameraModel:
    def test_reference_focal_length(self):
        # f_px = 2.8 mm / (2.3 mm / 640 px)
        assert CAM.focal_length_px == pytest.approx(2.8 * 640 / 2.3)

    def test_scaled_camera_keeps_field_of_view(self):
        small = default_camera(160, 120)
        assert small.focal_length_px == pytest.approx(CAM.focal_length_px / 4)

    def test_invalid_dimensions_rejected(self):
        with pytest.raises(DomainError):
            CameraModel(focal_length_px=-1.0, principal_point=(10, 10), width=20, height=20)
        with pytest.raises(DomainError):
            CameraModel(focal_length_px=100.0, principal_point=(50, 10), width=20, height=20)

    def test_pixel_grid_centering(self):
        u, v = CAM.pixel_grid()
        assert u.shape == (480, 640)
        assert u[0, 0] == -CAM.cx
        assert v[0, 0] == -CAM.cy
        assert u[0, -1] == 639 - CAM.cx


class TestBackProject:
    def test_principal_point_maps_to_optical_axis(self):
        x, y, z = back_project(CAM, 0.0, 0.0, 35.0)
        assert (x, y, z) == (0.0, 0.0, 35.0)

    def test_45_degree_ray(self):
        # u = f makes x = z
        x, y, z = back_project(CAM, CAM.focal_length_px, 0.0, 10.0)
        assert x == pytest.approx(10.0)
        assert y == 0.0
        assert z == 10.0

    def test_round_trip_against_projection_oracle(self, rng):
        f779 = CameraModel(779.0, (320.0, 240.0), 640, 480)
        x, y, z = back_project(f779, 123.4, -56.7, 20.0)
        u, v = project(f779, x, y, z)
        assert u == pytest.approx(123.4, abs=1e-9)
        assert v == pytest.approx(-56.7, abs=1e-9)

    def test_round_trip_random_pixels(self, rng):
        u = rng.uniform(-320, 320, size=200)
        v = rng.uniform(-240, 240, size=200)
        z = rng.uniform(5.0, 80.0, size=200)
        x, y, zc = back_project(CAM, u, v, z)
        u2, v2 = project(CAM, x, y, zc)
        np.testing.assert_allclose(u2, u, atol=1e-9)
        np.testing.assert_allclose(v2, v, atol=1e-9)

    def test_non_positive_depth_rejected(self):
        with pytest.raises(DomainError):
            back_project(CAM, 0.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            back_project(CAM, 0.0, 0.0, -3.0)


class TestNormalFromDepth:
    def test_frontoparallel_plane(self):
        nx, ny, nz = normal_from_depth(CAM, 12.0, -7.0, 35.0, 0.0, 0.0)
        np.testing.assert_allclose([nx, ny, nz], [0.0, 0.0, -1.0])

    def test_tilted_plane_symbolic(self):
        # z(u, v) = z0 + a*u  =>  unnormalized normal (f*a, 0, -z0 - 2*a*u)
        f = CAM.focal_length_px
        z0, a, u, v = 35.0, 0.01, 50.0, -20.0
        z = z0 + a * u
        nx, ny, nz = normal_from_depth(CAM, u, v, z, a, 0.0)
        expected = np.array([f * a, 0.0, -z0 - 2 * a * u])
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose([nx, ny, nz], expected, atol=1e-12)

    def test_tilted_plane_against_finite_difference_tangents(self):
        # cross product of numerically back-projected tangents is an
        # independent construction of the same surface normal
        f = CAM.focal_length_px
        z0, a = 35.0, 0.01
        u0, v0, h = 50.0, -20.0, 1e-5

        def point(u, v):
            return np.array(back_project(CAM, u, v, z0 + a * u))

        du = (point(u0 + h, v0) - point(u0 - h, v0)) / (2 * h)
        dv = (point(u0, v0 + h) - point(u0, v0 - h)) / (2 * h)
        cross = np.cross(du, dv)
        cross /= np.linalg.norm(cross)
        if cross[2] > 0:
            cross = -cross
        n = np.array(normal_from_depth(CAM, u0, v0, z0 + a * u0, a, 0.0))
        angle = np.degrees(np.arccos(np.clip(np.dot(n, cross), -1, 1)))
        assert angle < 1e-4

    def test_sphere_cap_against_analytic_sphere_normals(self, rng):
        # oracle sphere: center (0, 0, cz), radius R; surface normal is the
        # unit vector from the center, flipped toward the camera
        f, cz, radius = CAM.focal_length_px, 40.0, 14.0
        u = rng.uniform(-200, 200, size=100)
        v = rng.uniform(-150, 150, size=100)
        a = (u**2 + v**2) / f**2 + 1.0
        disc = cz**2 - a * (cz**2 - radius**2)
        assert np.all(disc > 0)
        z = (cz - np.sqrt(disc)) / a
        gu = z**2 * u / (f**2 * np.sqrt(disc))
        gv = z**2 * v / (f**2 * np.sqrt(disc))
        nx, ny, nz = normal_from_depth(CAM, u, v, z, gu, gv)
        x, y, zc = back_project(CAM, u, v, z)
        ref = np.stack([x, y, zc - cz], axis=-1)
        ref /= np.linalg.norm(ref, axis=1, keepdims=True)
        dots = np.clip(np.sum(np.stack([nx, ny, nz], axis=-1) * ref, axis=1), -1, 1)
        assert np.degrees(np.arccos(dots)).max() < 0.1

    def test_normalization_idempotence(self, rng):
        u, v = 10.0, 20.0
        z, gu, gv = 35.0, 0.02, -0.01
        n1 = np.array(normal_from_depth(CAM, u, v, z, gu, gv))
        # scaling all inputs of the unnormalized vector by a positive factor
        # must not change the output: eta(eta(w)) = eta(w)
        n2 = n1 / np.linalg.norm(n1)
        np.testing.assert_allclose(n1, n2, atol=1e-15)
        assert np.linalg.norm(n1) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_normal_raises(self):
        with pytest.raises(DegenerateNormalError):
            normal_from_depth(CAM, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_front_facing_sign(self):
        nx, ny, nz = normal_from_depth(CAM, 5.0, 5.0, 35.0, 0.001, 0.002)
        assert nz < 0


class TestLightDirection:
    def test_light_at_pinhole(self):
        light = LightSource((0.0, 0.0, 0.0), 1.0, "R")
        qx, qy, qz, dist = light_direction(light, 0.0, 0.0, 35.0)
        np.testing.assert_allclose([qx, qy, qz], [0.0, 0.0, -1.0])
        assert dist == 35.0

    def test_reference_rig_offsets(self):
        # LED 21.5 mm lateral, 11 mm behind the aperture plane
        light = LightSource((21.5, 0.0, -11.0), 1.0, "R")
        qx, qy, qz, dist = light_direction(light, 0.0, 0.0, 35.0)
        delta = np.array([21.5, 0.0, -11.0]) - np.array([0.0, 0.0, 35.0])
        expected_dist = np.linalg.norm(delta)
        np.testing.assert_allclose(dist, expected_dist)
        np.testing.assert_allclose([qx, qy, qz], delta / expected_dist)

    def test_unit_offset(self):
        light = LightSource((3.0, -2.0, 36.0), 1.0, "G")
        qx, qy, qz, dist = light_direction(light, 3.0, -2.0, 35.0)
        np.testing.assert_allclose([qx, qy, qz], [0.0, 0.0, 1.0])
        assert dist == 1.0

    def test_unit_norm_and_distance_identity(self, rng):
        light = LightSource((21.5, 0.0, -11.0), 1.0, "B")
        x = rng.uniform(-10, 10, size=50)
        y = rng.uniform(-10, 10, size=50)
        z = rng.uniform(20, 50, size=50)
        qx, qy, qz, dist = light_direction(light, x, y, z)
        np.testing.assert_allclose(qx**2 + qy**2 + qz**2, 1.0, atol=1e-12)
        # q . (l - x) recovers the distance
        lx, ly, lz = light.position
        np.testing.assert_allclose(
            qx * (lx - x) + qy * (ly - y) + qz * (lz - z), dist, rtol=1e-12
        )

    def test_coincident_light_raises(self):
        light = LightSource((1.0, 2.0, 3.0), 1.0, "R")
        with pytest.raises(DegenerateDirectionError):
            light_direction(light, 1.0, 2.0, 3.0)


class TestLightRig:
    def test_default_rig_positions(self):
        rig = default_rig()
        r = rig.light("R")
        np.testing.assert_allclose(r.position, (21.5, 0.0, -11.0), atol=1e-12)
        for light in rig.ordered():
            assert np.hypot(light.position[0], light.position[1]) == pytest.approx(21.5)
            assert light.position[2] == -11.0

    def test_channels_unique(self):
        lights = tuple(LightSource((1.0, 0.0, -1.0), 1.0, "R") for _ in range(3))
        with pytest.raises(DomainError):
            LightRig(lights)

    def test_intensity_positive(self):
        with pytest.raises(DomainError):
            LightSource((0.0, 0.0, 0.0), 0.0, "R")


class TestNormalMap:
    def test_unit_check(self, rng):
        vectors = np.zeros((4, 5, 3))
        vectors[..., 2] = -1.0
        NormalMap(vectors).check_unit()
        vectors[1, 1] = (0.5, 0.0, -0.5)
        with pytest.raises(DomainError):
            NormalMap(vectors).check_unit()

    def test_mask_shape_validated(self):
        with pytest.raises(DomainError):
            NormalMap(np.zeros((4, 5, 3)), mask=np.ones((3, 5), dtype=bool))

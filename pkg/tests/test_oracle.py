"""Analytic scenes: gradient fidelity, normal cross-checks, closed-form
radiance, superposition, and the crosstalk simulation.
"""

import numpy as np
import pytest

from colorps import oracle
from colorps.errors import DomainError
from colorps.geometry import back_project, default_camera, light_direction
from colorps.oracle import (
    CrosstalkMatrix,
    apply_crosstalk,
    make_baseline_captures,
    make_preset,
    make_scene,
    render_scene,
    single_led_renders,
)
from colorps.rendering import render_fields

CAM = default_camera(96, 72)


def sample_pixels(rng, scene, n=1000):
    cam = scene.cam
    u = rng.uniform(-cam.cx, cam.width - 1 - cam.cx, size=4 * n)
    v = rng.uniform(-cam.cy, cam.height - 1 - cam.cy, size=4 * n)
    ok = scene.valid(u, v)
    return u[ok][:n], v[ok][:n]


class TestMakeScene:
    def test_plane_normals_point_at_camera(self, rng):
        scene = make_scene("plane", cam=CAM)
        u, v = sample_pixels(rng, scene, 100)
        nx, ny, nz = scene.normal(u, v)
        np.testing.assert_allclose(nx, 0.0, atol=1e-15)
        np.testing.assert_allclose(ny, 0.0, atol=1e-15)
        np.testing.assert_allclose(nz, -1.0, atol=1e-15)

    @pytest.mark.parametrize("kind", ["plane", "sphere_cap", "sin_bumps", "two_tier_steps"])
    def test_analytic_gradient_matches_finite_differences(self, rng, kind):
        scene = make_scene(kind, cam=CAM)
        u, v = sample_pixels(rng, scene, 1000)
        z, gu, gv = scene.depth(u, v)
        h = 1e-5
        zu_hi, _, _ = scene.depth(u + h, v)
        zu_lo, _, _ = scene.depth(u - h, v)
        zv_hi, _, _ = scene.depth(u, v + h)
        zv_lo, _, _ = scene.depth(u, v - h)
        # atol floor absorbs central-difference truncation noise where the
        # true gradient itself is near zero
        np.testing.assert_allclose(gu, (zu_hi - zu_lo) / (2 * h), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(gv, (zv_hi - zv_lo) / (2 * h), rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("kind", ["sphere_cap", "sin_bumps", "two_tier_steps"])
    def test_perspective_normals_match_geometric_cross_product(self, rng, kind):
        scene = make_scene(kind, cam=CAM)
        u, v = sample_pixels(rng, scene, 1000)
        n1 = np.stack(scene.normal(u, v), axis=-1)
        n2 = np.stack(scene.geometric_normal(u, v), axis=-1)
        dots = np.clip(np.sum(n1 * n2, axis=-1), -1, 1)
        assert np.degrees(np.arccos(dots)).max() < 0.05

    def test_sphere_normals_match_center_construction(self, rng):
        """Perspective-formula normals agree with eta(x - center) flipped
        toward the camera to < 0.05 degrees."""
        scene = make_scene("sphere_cap", cam=CAM)
        u, v = sample_pixels(rng, scene, 1000)
        n1 = np.stack(scene.normal(u, v), axis=-1)
        n2 = np.stack(scene.sphere_normal(u, v), axis=-1)
        dots = np.clip(np.sum(n1 * n2, axis=-1), -1, 1)
        assert np.degrees(np.arccos(dots)).max() < 0.05

    def test_sin_bumps_gradient_bound(self, rng):
        # max |dz/du| of a * sin(k u) sin(k v) is a * k
        amplitude, period = 0.3, 40.0
        scene = make_scene("sin_bumps", cam=CAM, amplitude_mm=amplitude, period_px=period)
        u, v = sample_pixels(rng, scene, 5000)
        _, gu, gv = scene.depth(u, v)
        bound = amplitude * 2 * np.pi / period
        assert np.abs(gu).max() <= bound + 1e-12
        assert np.abs(gv).max() <= bound + 1e-12
        assert np.abs(gu).max() > 0.9 * bound  # the bound is nearly attained

    def test_partial_sphere_has_mask(self):
        scene = make_scene("sphere_cap", cam=default_camera(160, 120),
                           radius_mm=15.0, center_z_mm=40.0)
        render = render_scene(scene)
        frac = render.image.mask.mean()
        assert 0.8 < frac < 1.0

    def test_invalid_parameters_rejected(self):
        with pytest.raises(DomainError):
            make_scene("plane", cam=CAM, depth_mm=-5.0)
        with pytest.raises(DomainError):
            make_scene("sphere_cap", cam=CAM, radius_mm=50.0, center_z_mm=20.0)
        with pytest.raises(DomainError):
            make_scene("sin_bumps", cam=CAM, period_px=0.0)
        with pytest.raises(DomainError):
            make_scene("plane", cam=CAM, bogus_param=1.0)
        with pytest.raises(DomainError):
            make_scene("dodecahedron", cam=CAM)

    def test_too_small_sphere_fails_coverage_check(self):
        with pytest.raises(DomainError, match="surface"):
            make_scene("sphere_cap", cam=CAM, radius_mm=8.0, center_z_mm=40.0)

    def test_presets_all_construct(self):
        for name in oracle.PRESETS:
            scene = make_preset(name, cam=CAM)
            assert scene.material.kind in ("lambertian", "glossy")
        with pytest.raises(DomainError):
            make_preset("no_such_preset")


class TestRenderScene:
    def test_exposure_hits_percentile_target(self):
        render = render_scene(make_preset("sin_bumps_lambertian", cam=CAM))
        valid_values = render.image.values[render.image.mask]
        assert np.percentile(valid_values, 99.0) == pytest.approx(0.9, rel=1e-5)
        for light in render.rig.ordered():
            assert light.intensity == pytest.approx(render.exposure)

    def test_lambertian_plane_matches_closed_form(self):
        """Per-pixel radiance from first principles: for each channel,
        rho * phi / ||l - x||^2 * max(q . n, 0) with n = (0, 0, -1)."""
        albedo = (0.8, 0.5, 0.3)
        scene = make_scene("plane", albedo=albedo, cam=CAM, depth_mm=35.0)
        render = render_scene(scene)
        u, v = CAM.pixel_grid()
        x, y, z = back_project(CAM, u.ravel(), v.ravel(), np.full(u.size, 35.0))
        for c, light in enumerate(render.rig.ordered()):
            lx, ly, lz = light.position
            dx, dy, dz = lx - x, ly - y, lz - z
            dist_sq = dx * dx + dy * dy + dz * dz
            cos = np.maximum(-dz / np.sqrt(dist_sq), 0.0)  # n = (0,0,-1)
            expected = albedo[c] * light.intensity / dist_sq * cos
            got = render.image.values[:, :, c].ravel().astype(np.float64)
            np.testing.assert_allclose(got, expected, rtol=2e-7, atol=1e-12)

    def test_center_brighter_than_corner_falloff(self):
        render = render_scene(make_scene("plane", cam=CAM))
        img = render.image.values.sum(axis=2)
        assert img[36, 48] > img[0, 0]

    def test_glossy_highlight_at_theta_h_minimum(self):
        """The brightest specular pixel sits where theta_h is smallest,
        verified by brute-force grid search over all pixels."""
        scene = make_scene("sphere_cap", material="glossy", albedo=(0.4, 0.4, 0.4),
                           specular_strength=1.5, specular_sharpness=400.0, cam=CAM)
        render = render_scene(scene)
        u, v = CAM.pixel_grid()
        uf, vf = u.ravel(), v.ravel()
        z, gu, gvv = scene.depth(uf, vf)
        nx, ny, nz = scene.normal(uf, vf)
        x, y, zc = back_project(CAM, uf, vf, z)
        norm = np.sqrt(x * x + y * y + zc * zc)
        vx, vy, vz = -x / norm, -y / norm, -zc / norm
        light = render.rig.light("R")
        qx, qy, qz, _ = light_direction(light, x, y, zc)
        hx, hy, hz = qx + vx, qy + vy, qz + vz
        hn = np.sqrt(hx * hx + hy * hy + hz * hz)
        cos_th = (nx * hx + ny * hy + nz * hz) / hn
        theta = np.arccos(np.clip(cos_th, -1, 1))
        # subtract the diffuse term to isolate the specular image
        lx, ly, lz = light.position
        dist_sq = (lx - x) ** 2 + (ly - y) ** 2 + (lz - zc) ** 2
        cos_i = np.maximum(qx * nx + qy * ny + qz * nz, 0.0)
        diffuse = 0.4 * light.intensity / dist_sq * cos_i
        spec = render.image.values[:, :, 0].ravel() - diffuse
        brightest = np.argmax(spec)
        assert theta[brightest] < np.sort(theta)[50]  # within the 50 smallest angles

    def test_forward_equivalence_with_shared_renderer(self):
        """render_fields on the oracle's own callables reproduces the
        emitted image to float32 precision."""
        scene = make_preset("sin_bumps_glossy", cam=CAM)
        render = render_scene(scene)
        u, v = CAM.pixel_grid()
        channels, _ = render_fields(
            scene.depth, scene.brdf_eval, CAM, render.rig, u.ravel(), v.ravel()
        )
        again = np.stack(channels, axis=-1).reshape(CAM.height, CAM.width, 3)
        np.testing.assert_allclose(
            render.image.values.astype(np.float64), again, rtol=1e-6, atol=1e-12
        )

    def test_superposition_of_single_led_renders(self):
        render = render_scene(make_preset("sphere_cap_colored", cam=CAM))
        singles = single_led_renders(render)
        for c, img in enumerate(singles):
            off = [k for k in range(3) if k != c]
            assert np.all(img.values[:, :, off] == 0)
        total = sum(img.values for img in singles)
        np.testing.assert_array_equal(total, render.image.values)


class TestCrosstalk:
    def test_identity_matrix_is_noop(self):
        render = render_scene(make_preset("plane_lambertian", cam=CAM))
        mixed = apply_crosstalk(render.image, CrosstalkMatrix.identity(), noise_sigma=0.0)
        np.testing.assert_array_equal(mixed.values, render.image.values)

    def test_example_mixing_arithmetic(self):
        m = CrosstalkMatrix.with_off_diagonal(0.15)
        np.testing.assert_allclose(np.diag(m.matrix), 0.7)
        pure_red = np.zeros((1, 1, 3), dtype=np.float32)
        pure_red[0, 0, 0] = 1.0
        from colorps.rendering import CapturedImage

        mixed = apply_crosstalk(CapturedImage(pure_red), m, noise_sigma=0.0)
        np.testing.assert_allclose(mixed.values[0, 0], [0.7, 0.15, 0.15], rtol=1e-6)

    def test_inverse_recovers_ideal(self, rng):
        render = render_scene(make_preset("sin_bumps_lambertian", cam=CAM))
        m = CrosstalkMatrix(np.array([[0.8, 0.1, 0.1], [0.05, 0.9, 0.05], [0.12, 0.08, 0.8]]))
        mixed = apply_crosstalk(render.image, m, noise_sigma=0.0)
        recovered = mixed.values.astype(np.float64) @ m.inverse().T
        np.testing.assert_allclose(recovered, render.image.values, atol=1e-7)

    def test_noise_is_seeded_and_clamped(self):
        render = render_scene(make_preset("plane_lambertian", cam=CAM))
        a = apply_crosstalk(render.image, CrosstalkMatrix.identity(), noise_sigma=0.01, seed=7)
        b = apply_crosstalk(render.image, CrosstalkMatrix.identity(), noise_sigma=0.01, seed=7)
        c = apply_crosstalk(render.image, CrosstalkMatrix.identity(), noise_sigma=0.01, seed=8)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)
        assert np.all(a.values >= 0)

    def test_matrix_validation(self):
        with pytest.raises(DomainError):
            CrosstalkMatrix(np.array([[0.4, 0.3, 0.3], [0.3, 0.4, 0.3], [0.3, 0.3, 0.4]]))
        with pytest.raises(DomainError):
            CrosstalkMatrix(-np.eye(3))
        with pytest.raises(DomainError):
            CrosstalkMatrix(np.eye(4))


class TestBaselineCaptures:
    def test_identity_mixing_keeps_single_channels(self):
        scene = make_preset("sin_bumps_lambertian", cam=CAM)
        render = render_scene(scene)
        observed = make_baseline_captures(scene, CrosstalkMatrix.identity(),
                                          noise_sigma=0.0, render=render)
        for c, img in enumerate(observed):
            off = [k for k in range(3) if k != c]
            assert np.all(img.values[:, :, off] == 0)
            assert img.values[:, :, c].max() > 0

    def test_off_channel_ratio_matches_mixing(self):
        """On bright pixels the observed off/nominal energy ratio equals
        the mixing matrix's off-diagonal ratio."""
        scene = make_preset("plane_lambertian", cam=CAM)
        render = render_scene(scene)
        m = CrosstalkMatrix.with_off_diagonal(0.15)
        observed = make_baseline_captures(scene, m, noise_sigma=0.0, render=render)
        red = observed[0].values
        bright = red[:, :, 0] > 0.1
        ratio_g = red[:, :, 1][bright] / red[:, :, 0][bright]
        np.testing.assert_allclose(ratio_g, 0.15 / 0.7, rtol=1e-5)

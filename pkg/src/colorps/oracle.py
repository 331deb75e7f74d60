"""Analytic ground-truth scenes for verification and synthetic datasets.

Each scene provides closed-form depth z(u, v) with an exact gradient, a
parametric material (Lambertian, or Lambertian plus an isotropic half-angle
specular lobe), and a validity mask.  Scenes are rendered through the very
same image formation model the reconstructor optimizes against, with the
LED intensity tuned so the 99th-percentile pixel lands at 0.9.

A linear 3x3 crosstalk model plus Gaussian noise simulates the channel
mixing of compact color sensors; its exact inverse doubles as the oracle
for the learned correction module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DataError, DomainError
from .geometry import CHANNELS, LightRig, NormalMap, default_camera, default_rig
from .rendering import CapturedImage, render_fields

DEFAULT_EXPOSURE_PERCENTILE = 99.0
DEFAULT_EXPOSURE_TARGET = 0.9


@dataclass(frozen=True)
class Material:
    """Per-channel reflectance, optionally with a (cos theta_h)^alpha lobe."""

    kind: str  # "lambertian" | "glossy"
    albedo: tuple[float, float, float]
    specular_strength: float = 0.0
    specular_sharpness: float = 1.0

    def __post_init__(self):
        if self.kind not in ("lambertian", "glossy"):
            raise DomainError(f"unknown material kind '{self.kind}'")
        if any(a < 0 for a in self.albedo):
            raise DomainError("albedo must be non-negative")

    def reflectance(self, channel_index, cos_theta_h):
        r = np.full_like(np.asarray(cos_theta_h, dtype=np.float64), self.albedo[channel_index])
        if self.kind == "glossy" and self.specular_strength > 0.0:
            r = r + self.specular_strength * np.maximum(cos_theta_h, 0.0) ** self.specular_sharpness
        return r


class SceneOracle:
    """Closed-form scene: depth, gradient, normals, material, rig."""

    def __init__(self, name, cam, rig, material, depth_fn, valid_fn=None, center=None):
        self.name = name
        self.cam = cam
        self.rig = rig
        self.material = material
        self._depth_fn = depth_fn  # (u, v) -> (z, dz/du, dz/dv)
        self._valid_fn = valid_fn
        self._sphere_center = center  # set for sphere caps (extra normal oracle)

    def depth(self, u, v):
        return self._depth_fn(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))

    def valid(self, u, v):
        u = np.asarray(u, dtype=np.float64)
        if self._valid_fn is None:
            return np.ones(u.shape, dtype=bool)
        return self._valid_fn(u, np.asarray(v, dtype=np.float64))

    def normal(self, u, v):
        """Ground-truth normals: the perspective formula on analytic gradients."""
        z, gu, gv = self.depth(u, v)
        return geometry.normal_from_depth(self.cam, u, v, z, gu, gv)

    def geometric_normal(self, u, v):
        """Independent normals from the cross product of surface tangents.

        x(u, v) is the back-projected surface; the tangents dx/du and dx/dv
        use the analytic depth gradient.  The result is flipped to face the
        camera, providing a cross-check for the perspective formula.
        """
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z, gu, gv = self.depth(u, v)
        f = self.cam.focal_length_px
        tux, tuy, tuz = (z + u * gu) / f, v * gu / f, gu
        tvx, tvy, tvz = u * gv / f, (z + v * gv) / f, gv
        nx = tuy * tvz - tuz * tvy
        ny = tuz * tvx - tux * tvz
        nz = tux * tvy - tuy * tvx
        norm = np.sqrt(nx * nx + ny * ny + nz * nz)
        nx, ny, nz = nx / norm, ny / norm, nz / norm
        flip = np.where(nz > 0, -1.0, 1.0)
        return nx * flip, ny * flip, nz * flip

    def sphere_normal(self, u, v):
        """For sphere caps only: normals straight from the center geometry."""
        if self._sphere_center is None:
            raise DomainError(f"scene '{self.name}' is not a sphere cap")
        z, _, _ = self.depth(u, v)
        x, y, zc = geometry.back_project(self.cam, np.asarray(u, float), np.asarray(v, float), z)
        cx, cy, cz = self._sphere_center
        dx, dy, dz = x - cx, y - cy, zc - cz
        norm = np.sqrt(dx * dx + dy * dy + dz * dz)
        nx, ny, nz = dx / norm, dy / norm, dz / norm
        flip = np.where(nz > 0, -1.0, 1.0)
        return nx * flip, ny * flip, nz * flip

    def brdf_eval(self, channel, features):
        """Material reflectance in the renderer's callback signature."""
        cos_theta_h = features[0]
        return self.material.reflectance(CHANNELS.index(channel), cos_theta_h)


def _check_scene(scene, min_fraction=0.8):
    """Construction guard: enough valid, lit pixels across a coarse grid."""
    cam = scene.cam
    us = np.linspace(-cam.cx, cam.width - 1 - cam.cx, 48)
    vs = np.linspace(-cam.cy, cam.height - 1 - cam.cy, 36)
    uu, vv = np.meshgrid(us, vs)
    uu, vv = uu.ravel(), vv.ravel()
    valid = scene.valid(uu, vv)
    if valid.mean() < min_fraction:
        raise DomainError(
            f"scene '{scene.name}': only {valid.mean():.0%} of pixels are on the surface"
        )
    uu, vv = uu[valid], vv[valid]
    z, gu, gv = scene.depth(uu, vv)
    nx, ny, nz = scene.normal(uu, vv)
    x, y, zc = geometry.back_project(cam, uu, vv, z)
    for light in scene.rig.ordered():
        qx, qy, qz, _ = geometry.light_direction(light, x, y, zc)
        lit = (qx * nx + qy * ny + qz * nz) > 0
        if lit.mean() < min_fraction:
            raise DomainError(
                f"scene '{scene.name}': light {light.channel} reaches only "
                f"{lit.mean():.0%} of surface pixels"
            )
    return scene


def make_scene(kind, material="lambertian", albedo=(0.8, 0.8, 0.8), cam=None, rig=None,
               specular_strength=0.5, specular_sharpness=30.0, **params):
    """Build a named analytic scene.

    Kinds and their parameters (defaults in parentheses, all mm or px):
      plane           depth_mm (35)
      sphere_cap      center_z_mm (58), radius_mm (30)
      sin_bumps       amplitude_mm (0.3), period_px (40)
      two_tier_steps  step_mm (1.0), edge_u_px (0), edge_width_px (6)

    The default sphere cap fills the whole frame; smaller radii leave the
    corner rays missing the surface, which shows up as masked-out pixels.
    """
    cam = cam or default_camera(160, 120)
    rig = rig or default_rig()
    mat = Material(
        kind=material,
        albedo=tuple(float(a) for a in albedo),
        specular_strength=float(specular_strength) if material == "glossy" else 0.0,
        specular_sharpness=float(specular_sharpness),
    )
    f = cam.focal_length_px
    valid_fn = None
    center = None

    if kind == "plane":
        depth_mm = float(params.pop("depth_mm", geometry.WORKING_DISTANCE_MM))
        if depth_mm <= 0:
            raise DomainError("plane depth must be positive")

        def depth_fn(u, v, d=depth_mm):
            z = np.full_like(u, d)
            return z, np.zeros_like(u), np.zeros_like(u)

    elif kind == "sphere_cap":
        cz = float(params.pop("center_z_mm", 58.0))
        radius = float(params.pop("radius_mm", 30.0))
        if radius <= 0 or cz <= radius:
            raise DomainError("sphere cap must sit fully in front of the camera")
        center = (0.0, 0.0, cz)

        def _quadratic(u, v):
            a = (u * u + v * v) / (f * f) + 1.0
            disc = cz * cz - a * (cz * cz - radius * radius)
            return a, disc

        def depth_fn(u, v):
            a, disc = _quadratic(u, v)
            with np.errstate(invalid="ignore"):
                root = np.sqrt(np.maximum(disc, 0.0))
                z = (cz - root) / a
                scale = z * z / (f * f * np.maximum(root, 1e-300))
                gu = u * scale
                gv = v * scale
            bad = disc <= 0
            z = np.where(bad, np.nan, z)
            return z, np.where(bad, np.nan, gu), np.where(bad, np.nan, gv)

        def valid_fn(u, v):
            _, disc = _quadratic(u, v)
            return disc > 0

    elif kind == "sin_bumps":
        amplitude = float(params.pop("amplitude_mm", 0.3))
        period = float(params.pop("period_px", 40.0))
        base = float(params.pop("depth_mm", geometry.WORKING_DISTANCE_MM))
        if period <= 0:
            raise DomainError("bump period must be positive")
        k = 2.0 * np.pi / period

        def depth_fn(u, v):
            su, cu = np.sin(k * u), np.cos(k * u)
            sv, cv = np.sin(k * v), np.cos(k * v)
            z = base + amplitude * su * sv
            return z, amplitude * k * cu * sv, amplitude * k * su * cv

    elif kind == "two_tier_steps":
        step = float(params.pop("step_mm", 1.0))
        edge = float(params.pop("edge_u_px", 0.0))
        width = float(params.pop("edge_width_px", 6.0))
        base = float(params.pop("depth_mm", geometry.WORKING_DISTANCE_MM))
        if width <= 0:
            raise DomainError("edge width must be positive")

        def depth_fn(u, v):
            t = np.tanh((u - edge) / width)
            z = base + 0.5 * step * t
            gu = 0.5 * step * (1.0 - t * t) / width
            return z, gu, np.zeros_like(v)

    else:
        raise DomainError(f"unknown scene kind '{kind}'")

    if params:
        raise DomainError(f"unknown scene parameters: {sorted(params)}")
    scene = SceneOracle(kind, cam, rig, mat, depth_fn, valid_fn, center=center)
    return _check_scene(scene)


# Named presets spanning albedo color, reflectance, and geometry.
PRESETS = {
    "plane_lambertian": dict(kind="plane", material="lambertian", albedo=(0.8, 0.8, 0.8)),
    "sin_bumps_lambertian": dict(kind="sin_bumps", material="lambertian", albedo=(0.8, 0.8, 0.8)),
    "sin_bumps_glossy": dict(
        kind="sin_bumps", material="glossy", albedo=(0.6, 0.6, 0.6),
        specular_strength=0.5, specular_sharpness=30.0,
    ),
    "sphere_cap_colored": dict(kind="sphere_cap", material="lambertian", albedo=(0.75, 0.45, 0.2)),
    "steps_glossy_colored": dict(
        kind="two_tier_steps", material="glossy", albedo=(0.7, 0.5, 0.3),
        specular_strength=0.4, specular_sharpness=40.0,
    ),
}


def make_preset(name, cam=None, rig=None):
    if name not in PRESETS:
        raise DomainError(f"unknown preset '{name}' (choose from {sorted(PRESETS)})")
    return make_scene(cam=cam, rig=rig, **PRESETS[name])


@dataclass
class OracleRender:
    """Synthetic capture plus every ground-truth field that produced it."""

    image: CapturedImage
    normals: NormalMap
    depth: np.ndarray
    rig: LightRig
    exposure: float


def _render_valid(scene, rig, u, v):
    """Radiance (N, 3) at valid pixels through the shared formation model."""
    channels, _ = render_fields(
        lambda uu, vv: scene.depth(uu, vv),
        scene.brdf_eval,
        scene.cam,
        rig,
        u,
        v,
    )
    return np.stack(channels, axis=-1)


def render_scene(scene, percentile=DEFAULT_EXPOSURE_PERCENTILE, target=DEFAULT_EXPOSURE_TARGET):
    """Render a scene with auto-tuned LED intensity.

    The light intensity is scaled so the given percentile of valid pixel
    values equals `target`; the returned rig records the tuned intensity,
    keeping the emitted dataset photometrically self-consistent.
    """
    cam = scene.cam
    u, v = cam.pixel_grid()
    uf, vf = u.ravel(), v.ravel()
    valid = scene.valid(uf, vf)
    idx = np.flatnonzero(valid)

    raw = _render_valid(scene, scene.rig, uf[idx], vf[idx])
    peak = np.percentile(raw, percentile)
    if peak <= 0:
        raise DataError(f"scene '{scene.name}' rendered no light")
    exposure = target / float(peak)
    rig = scene.rig.with_intensity(exposure)
    radiance = _render_valid(scene, rig, uf[idx], vf[idx])

    values = np.zeros((cam.height * cam.width, 3), dtype=np.float32)
    values[idx] = radiance.astype(np.float32)
    mask = valid.reshape(cam.height, cam.width)
    image = CapturedImage(values.reshape(cam.height, cam.width, 3), mask.copy())

    nx, ny, nz = scene.normal(uf[idx], vf[idx])
    vectors = np.zeros((cam.height * cam.width, 3), dtype=np.float64)
    vectors[idx] = np.stack([nx, ny, nz], axis=-1)
    normals = NormalMap(vectors.reshape(cam.height, cam.width, 3), mask.copy())

    z, _, _ = scene.depth(uf[idx], vf[idx])
    depth = np.zeros(cam.height * cam.width, dtype=np.float64)
    depth[idx] = z
    return OracleRender(
        image=image,
        normals=normals,
        depth=depth.reshape(cam.height, cam.width),
        rig=rig,
        exposure=exposure,
    )


# -- crosstalk simulation ---------------------------------------------------

@dataclass(frozen=True)
class CrosstalkMatrix:
    """Linear channel mixing: observed = M @ ideal, per pixel."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise DomainError("crosstalk matrix must be 3x3")
        if np.any(m < 0):
            raise DomainError("crosstalk matrix entries must be non-negative")
        for i in range(3):
            if m[i, i] <= m[i].sum() - m[i, i]:
                raise DomainError("crosstalk matrix must be diagonally dominant")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def with_off_diagonal(cls, off):
        """Row-stochastic mixing with uniform off-diagonal leakage."""
        m = np.full((3, 3), float(off))
        np.fill_diagonal(m, 1.0 - 2.0 * float(off))
        return cls(m)

    def inverse(self):
        return np.linalg.inv(self.matrix)


def apply_crosstalk(image, mixing, noise_sigma=0.0, seed=0):
    """Mix channels per pixel and add clamped Gaussian noise."""
    values = image.values.astype(np.float64) @ mixing.matrix.T
    if noise_sigma > 0.0:
        rng = np.random.Generator(np.random.PCG64(seed))
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    values = np.maximum(values, 0.0)
    return CapturedImage(values.astype(np.float32), image.mask.copy())


def single_led_renders(render):
    """Ideal single-LED captures: the full render with other channels zeroed.

    With one LED per channel the formation model is channel-separable, so
    these are exactly the three single-light renders and they sum to the
    all-LED image.
    """
    images = []
    for c in range(3):
        values = np.zeros_like(render.image.values)
        values[:, :, c] = render.image.values[:, :, c]
        images.append(CapturedImage(values, render.image.mask.copy()))
    return images


def make_baseline_captures(scene, mixing, noise_sigma=0.0, seed=0, render=None):
    """Observed single-LED captures used to train the crosstalk corrector."""
    if render is None:
        render = render_scene(scene)
    observed = []
    for c, ideal in enumerate(single_led_renders(render)):
        observed.append(apply_crosstalk(ideal, mixing, noise_sigma, seed=seed + c))
    return observed

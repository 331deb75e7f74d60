"""Camera, light rig, and normal-from-depth geometry.

Coordinate conventions used throughout the toolkit:

* camera frame: pinhole at the origin, +z along the optical axis into the
  scene (every visible surface point has z > 0);
* pixel coordinates (u, v) are centered at the principal point
  (u = column - cx, v = row - cy) and the focal length is in pixels, so
  depth gradients stay in mm/pixel;
* normals face the camera with n.z < 0; flipping to the visualization
  convention (n.z >= 0) happens only at export time.

All functions accept either plain ndarrays or autodiff Vars and vectorize
over pixels; they are pure, so pixel-parallel use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DegenerateDirectionError, DegenerateNormalError, DomainError

# Rig geometry of the reference capture setup: sensor 2.3 x 1.44 mm at
# 640 x 480, focal length 2.8 mm, working distance 35 mm, LEDs on a
# 21.5 mm lateral circle at z = -11 mm (behind the aperture plane).
SENSOR_WIDTH_MM = 2.3
FOCAL_LENGTH_MM = 2.8
REFERENCE_WIDTH = 640
REFERENCE_HEIGHT = 480
WORKING_DISTANCE_MM = 35.0
LIGHT_RADIUS_MM = 21.5
LIGHT_Z_MM = -11.0

CHANNELS = ("R", "G", "B")


@dataclass(frozen=True)
class CameraModel:
    """Perspective intrinsics; focal length and principal point in pixels."""

    focal_length_px: float
    principal_point: tuple[float, float]
    width: int
    height: int
    pixel_pitch_mm: float = SENSOR_WIDTH_MM / REFERENCE_WIDTH

    def __post_init__(self):
        if self.focal_length_px <= 0:
            raise DomainError("focal_length_px must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DomainError("image dimensions must be positive")
        cx, cy = self.principal_point
        if not (0.0 <= cx <= self.width and 0.0 <= cy <= self.height):
            raise DomainError("principal point must lie inside the image rectangle")

    @property
    def cx(self):
        return self.principal_point[0]

    @property
    def cy(self):
        return self.principal_point[1]

    def pixel_grid(self):
        """Centered (u, v) coordinates of every pixel, each (H, W)."""
        cols = np.arange(self.width, dtype=np.float64)
        rows = np.arange(self.height, dtype=np.float64)
        u = np.broadcast_to(cols[None, :] - self.cx, (self.height, self.width))
        v = np.broadcast_to(rows[:, None] - self.cy, (self.height, self.width))
        return u.copy(), v.copy()


def default_camera(width=REFERENCE_WIDTH, height=REFERENCE_HEIGHT):
    """Reference-rig camera scaled to `width` x `height` (same field of view)."""
    pitch = SENSOR_WIDTH_MM / width
    return CameraModel(
        focal_length_px=FOCAL_LENGTH_MM / pitch,
        principal_point=((width - 1) / 2.0, (height - 1) / 2.0),
        width=width,
        height=height,
        pixel_pitch_mm=pitch,
    )


@dataclass(frozen=True)
class LightSource:
    """Near point light. `position` in mm (camera frame), intensity unitless."""

    position: tuple[float, float, float]
    intensity: float
    channel: str

    def __post_init__(self):
        if self.intensity <= 0:
            raise DomainError("light intensity must be positive")
        if self.channel not in CHANNELS:
            raise DomainError(f"channel must be one of {CHANNELS}")

    def position_array(self):
        return np.asarray(self.position, dtype=np.float64)


@dataclass(frozen=True)
class LightRig:
    """Exactly three lights, one per color channel."""

    lights: tuple[LightSource, LightSource, LightSource]

    def __post_init__(self):
        channels = sorted(light.channel for light in self.lights)
        if channels != sorted(CHANNELS):
            raise DomainError("rig needs channels R, G, B exactly once each")

    def light(self, channel):
        for light in self.lights:
            if light.channel == channel:
                return light
        raise KeyError(channel)

    def ordered(self):
        """Lights in R, G, B order."""
        return tuple(self.light(c) for c in CHANNELS)

    def with_intensity(self, scale):
        return LightRig(
            tuple(
                LightSource(l.position, l.intensity * scale, l.channel)
                for l in self.lights
            )
        )


def default_rig(intensity=1.0, radius_mm=LIGHT_RADIUS_MM, z_mm=LIGHT_Z_MM,
                angles_deg=(0.0, 120.0, 240.0)):
    """Three LEDs spaced on a lateral circle behind the aperture plane.

    The default intensity of 1 matches the formation model's convention;
    synthetic datasets overwrite it with the tuned exposure value.
    """
    lights = []
    for channel, angle in zip(CHANNELS, angles_deg):
        a = np.deg2rad(angle)
        position = (radius_mm * np.cos(a), radius_mm * np.sin(a), z_mm)
        lights.append(LightSource(tuple(float(p) for p in position), intensity, channel))
    return LightRig(tuple(lights))


# -- core operations ------------------------------------------------------

def back_project(cam, u, v, z):
    """Pixel (u, v) at depth z -> camera-frame point (x, y, z) in mm."""
    zv = ad.value_of(z)
    if np.any(np.asarray(zv) <= 0):
        raise DomainError("back_project requires positive depth")
    f = cam.focal_length_px
    return z * u / f, z * v / f, z


def project(cam, x, y, z):
    """Camera-frame point -> centered pixel coordinates (u, v)."""
    zv = ad.value_of(z)
    if np.any(np.asarray(zv) <= 0):
        raise DomainError("project requires points in front of the camera")
    f = cam.focal_length_px
    return f * x / z, f * y / z


def normal_from_depth(cam, u, v, z, grad_u, grad_v):
    """Unit surface normal from depth and its pixel-space gradient.

    Implements n = normalize((f * dz/du, f * dz/dv, -z - dz/du*u - dz/dv*v));
    the result points toward the camera (n.z < 0) for z > 0.
    """
    f = cam.focal_length_px
    wx = f * grad_u
    wy = f * grad_v
    wz = -z - grad_u * u - grad_v * v
    norm_sq = wx * wx + wy * wy + wz * wz
    if not isinstance(norm_sq, ad.Var) and np.any(np.asarray(norm_sq) == 0.0):
        raise DegenerateNormalError("zero-length normal (requires z = 0 and grad z = 0)")
    inv = 1.0 / ad.sqrt(norm_sq)
    return wx * inv, wy * inv, wz * inv


def light_direction(light, x, y, z):
    """Unit direction from surface point to light, and the distance in mm."""
    lx, ly, lz = light.position
    dx = lx - x
    dy = ly - y
    dz = lz - z
    dist_sq = dx * dx + dy * dy + dz * dz
    if not isinstance(dist_sq, ad.Var) and np.any(np.asarray(dist_sq) == 0.0):
        raise DegenerateDirectionError("light coincides with the surface point")
    dist = ad.sqrt(dist_sq)
    return dx / dist, dy / dist, dz / dist, dist


def view_direction(x, y, z):
    """Unit direction from surface point toward the pinhole."""
    norm = ad.sqrt(x * x + y * y + z * z)
    return -x / norm, -y / norm, -z / norm


@dataclass
class NormalMap:
    """Per-pixel unit normals (H, W, 3) plus a validity mask (H, W)."""

    vectors: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 3:
            raise DomainError("normal map must have shape (H, W, 3)")
        if self.mask is None:
            self.mask = np.ones(self.vectors.shape[:2], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.vectors.shape[:2]:
            raise DomainError("mask shape must match the normal map")

    @property
    def shape(self):
        return self.vectors.shape[:2]

    def check_unit(self, tol=1e-6):
        norms = np.linalg.norm(self.vectors[self.mask], axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > tol:
            raise DomainError("normal map contains non-unit vectors")

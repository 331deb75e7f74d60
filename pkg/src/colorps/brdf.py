"""Rusinkiewicz angle computation and the implicit per-channel BRDF.

The material is assumed homogeneous and mono-chromatic: reflectance depends
only on the half/difference angles (theta_h, theta_d, phi_d), never on
pixel position.  Isotropy drops phi_h; reciprocity folds phi_d into
[0, pi).  Each color channel gets its own small network (a single shared
branch is available as an ablation).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DegenerateDirectionError, DomainError
from .geometry import CHANNELS


@dataclass(frozen=True)
class RusinkiewiczAngles:
    """theta_h, theta_d in [0, pi/2]; phi_d folded into [0, pi)."""

    theta_h: np.ndarray
    theta_d: np.ndarray
    phi_d: np.ndarray


def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


def rusinkiewicz(q, view, n):
    """Half/difference angles of a light/view/normal triple.

    Accepts unit 3-vectors (or arrays of them, shape (..., 3)).  The
    azimuth phi_d of the light direction about the half vector is measured
    in the frame whose pole direction comes from the surface normal, then
    folded into [0, pi) by reciprocity.
    """
    q = np.asarray(q, dtype=np.float64)
    view = np.asarray(view, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    qx, qy, qz = q[..., 0], q[..., 1], q[..., 2]
    vx, vy, vz = view[..., 0], view[..., 1], view[..., 2]
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]

    hx, hy, hz = qx + vx, qy + vy, qz + vz
    hnorm = np.sqrt(hx * hx + hy * hy + hz * hz)
    if np.any(hnorm < 1e-12):
        raise DegenerateDirectionError("half vector undefined (q = -view)")
    if np.any(_dot(qx, qy, qz, nx, ny, nz) <= 0) or np.any(_dot(vx, vy, vz, nx, ny, nz) <= 0):
        raise DomainError("rusinkiewicz requires front-facing light and view directions")
    hx, hy, hz = hx / hnorm, hy / hnorm, hz / hnorm

    cx, cy, cz = _cross(nx, ny, nz, hx, hy, hz)
    sin_th = np.sqrt(cx * cx + cy * cy + cz * cz)
    theta_h = np.arctan2(sin_th, _dot(nx, ny, nz, hx, hy, hz))

    dx, dy, dz = _cross(qx, qy, qz, hx, hy, hz)
    theta_d = np.arctan2(np.sqrt(dx * dx + dy * dy + dz * dz), _dot(qx, qy, qz, hx, hy, hz))

    # tangent at h pointing toward n; falls back to a fixed frame when
    # h is aligned with n (phi_d is then immaterial but must be defined)
    cos_th = _dot(nx, ny, nz, hx, hy, hz)
    tx, ty, tz = nx - cos_th * hx, ny - cos_th * hy, nz - cos_th * hz
    tnorm = np.sqrt(tx * tx + ty * ty + tz * tz)
    degenerate = tnorm < 1e-12
    if np.any(degenerate):
        ax = np.where(np.abs(nx) < 0.9, 1.0, 0.0)
        ay = 1.0 - ax
        fx, fy, fz = _cross(nx, ny, nz, ax, ay, np.zeros_like(ax))
        fn = np.sqrt(fx * fx + fy * fy + fz * fz)
        tx = np.where(degenerate, fx / fn, tx)
        ty = np.where(degenerate, fy / fn, ty)
        tz = np.where(degenerate, fz / fn, tz)
        tnorm = np.where(degenerate, 1.0, tnorm)
    tx, ty, tz = tx / tnorm, ty / tnorm, tz / tnorm
    bx, by, bz = _cross(hx, hy, hz, tx, ty, tz)

    phi = np.arctan2(_dot(qx, qy, qz, bx, by, bz), _dot(qx, qy, qz, tx, ty, tz))
    phi_d = np.mod(phi, np.pi)

    return RusinkiewiczAngles(theta_h=theta_h, theta_d=theta_d, phi_d=phi_d)


def angle_features(qx, qy, qz, vx, vy, vz, nx, ny, nz, eps=1e-9):
    """Differentiable (cos/sin) featurization of the Rusinkiewicz angles.

    Returns six per-pixel arrays
    (cos th, sin th, cos td, sin td, cos 2*phi_d, sin 2*phi_d).
    phi_d enters through its doubled angle, which is invariant under the
    reciprocity fold and continuous across the fold boundary.  `eps`
    regularizes the degenerate configurations (theta_h ~ 0) so gradients
    stay finite; it is far below the angular scales the networks resolve.
    """
    hx, hy, hz = qx + vx, qy + vy, qz + vz
    hn = ad.sqrt(hx * hx + hy * hy + hz * hz + eps)
    hx, hy, hz = hx / hn, hy / hn, hz / hn

    cos_th = _dot(nx, ny, nz, hx, hy, hz)
    cpx, cpy, cpz = _cross(nx, ny, nz, hx, hy, hz)
    sin_th = ad.sqrt(cpx * cpx + cpy * cpy + cpz * cpz + eps)

    cos_td = _dot(qx, qy, qz, hx, hy, hz)
    dpx, dpy, dpz = _cross(qx, qy, qz, hx, hy, hz)
    sin_td = ad.sqrt(dpx * dpx + dpy * dpy + dpz * dpz + eps)

    tx, ty, tz = nx - cos_th * hx, ny - cos_th * hy, nz - cos_th * hz
    bx, by, bz = _cross(hx, hy, hz, tx, ty, tz)
    pc = _dot(qx, qy, qz, tx, ty, tz)
    ps = _dot(qx, qy, qz, bx, by, bz)
    denom = pc * pc + ps * ps + eps
    cos_2phi = (pc * pc - ps * ps) / denom
    sin_2phi = 2.0 * pc * ps / denom
    return cos_th, sin_th, cos_td, sin_td, cos_2phi, sin_2phi


def features_from_angles(angles):
    """Featurization of explicit angles (matches `angle_features`)."""
    th, td, pd = angles.theta_h, angles.theta_d, angles.phi_d
    return (
        np.cos(th),
        np.sin(th),
        np.cos(td),
        np.sin(td),
        np.cos(2.0 * pd),
        np.sin(2.0 * pd),
    )


@dataclass(frozen=True)
class BRDFConfig:
    hidden_layers: int = 3
    width: int = 32
    shared_channels: bool = False

    @property
    def branches(self):
        return ("shared",) if self.shared_channels else CHANNELS


class BRDFField:
    """Non-negative reflectance networks, one branch per color channel.

    Input: the six (cos, sin) angle features.  Output: softplus of a linear
    head.  The head is zero-initialized, so a fresh field returns the
    constant softplus(0) = log(2) for every angle.
    """

    IN_DIM = 6

    def __init__(self, config=BRDFConfig(), prefix="brdf"):
        self.config = config
        self.prefix = prefix

    @staticmethod
    def initial_constant():
        """Reflectance value a freshly initialized field returns everywhere."""
        return float(np.log(2.0))

    def param_names(self):
        names = []
        for branch in self.config.branches:
            for i in range(self.config.hidden_layers + 1):
                names += [f"{self.prefix}.{branch}.w{i}", f"{self.prefix}.{branch}.b{i}"]
        return names

    def init_params(self, rng):
        c = self.config
        params = {}
        for branch in c.branches:
            fan_in = self.IN_DIM
            for i in range(c.hidden_layers):
                bound = np.sqrt(6.0 / fan_in)
                params[f"{self.prefix}.{branch}.w{i}"] = rng.uniform(-bound, bound, size=(fan_in, c.width))
                params[f"{self.prefix}.{branch}.b{i}"] = np.zeros((c.width,))
                fan_in = c.width
            i = c.hidden_layers
            params[f"{self.prefix}.{branch}.w{i}"] = np.zeros((fan_in, 1))
            params[f"{self.prefix}.{branch}.b{i}"] = np.zeros((1,))
        return params

    def _branch_for(self, channel):
        return "shared" if self.config.shared_channels else channel

    def branch(self, params, channel, features):
        """Reflectance (N,) of one channel for featurized angles."""
        name = self._branch_for(channel)
        h = ad.column_stack(list(features))
        for i in range(self.config.hidden_layers):
            w = params[f"{self.prefix}.{name}.w{i}"]
            b = params[f"{self.prefix}.{name}.b{i}"]
            h = ad.tanh(h @ w + b)
        i = self.config.hidden_layers
        w = params[f"{self.prefix}.{name}.w{i}"]
        b = params[f"{self.prefix}.{name}.b{i}"]
        return ad.softplus(ad.reshape(h @ w + b, (-1,)))

    def reflectance(self, params, angles):
        """All three channels evaluated at the same angles; shape (..., 3).

        With `shared_channels` the single branch is evaluated once and
        broadcast, so the channels are identical by construction.
        """
        features = features_from_angles(angles)
        flat = [np.atleast_1d(np.asarray(f, dtype=np.float64)).ravel() for f in features]
        shape = np.shape(angles.theta_h)
        if self.config.shared_channels:
            r = self.branch(params, "R", flat)
            stacked = np.stack([r, r, r], axis=-1)
        else:
            stacked = np.stack([self.branch(params, c, flat) for c in CHANNELS], axis=-1)
        return stacked.reshape(shape + (3,))


def export_brdf_slice_csv(field, params, path, theta_d=0.0, phi_d=0.0, samples=91):
    """theta_h sweep at fixed (theta_d, phi_d), one CSV row per sample."""
    theta_h = np.linspace(0.0, np.pi / 2.0, samples)
    angles = RusinkiewiczAngles(
        theta_h=theta_h,
        theta_d=np.full_like(theta_h, float(theta_d)),
        phi_d=np.full_like(theta_h, float(phi_d)),
    )
    r = field.reflectance(params, angles)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta_h_rad", "theta_d_rad", "phi_d_rad", "r_R", "r_G", "r_B"])
        for i in range(samples):
            writer.writerow(
                [repr(float(theta_h[i])), repr(float(theta_d)), repr(float(phi_d))]
                + [repr(float(r[i, c])) for c in range(3)]
            )

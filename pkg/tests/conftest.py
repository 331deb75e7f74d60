"""Shared fixtures and independent numeric oracles for the test suite."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def central_difference(f, x, step=1e-6):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        grad.flat[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix (independent frame-construction oracle)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx, ky, kz = axis
    k_cross = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * k_cross + (1 - np.cos(angle)) * (k_cross @ k_cross)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def in_cell_coords(encoding_config, rng, n, margin=0.02):
    """Normalized coords at least `margin` cells away from EVERY level's
    grid lines (the levels are not nested, so rejection-sample)."""
    resolutions = np.array(
        [encoding_config.resolution(level) for level in range(encoding_config.levels)]
    )
    xs, ys = [], []
    while sum(len(x) for x in xs) < n:
        cand = rng.uniform(0.0, 1.0, size=(4 * n, 2))
        frac = np.modf(cand[:, :, None] * resolutions[None, None, :])[0]
        ok = np.all((frac > margin) & (frac < 1.0 - margin), axis=(1, 2))
        xs.append(cand[ok, 0])
        ys.append(cand[ok, 1])
    x = np.concatenate(xs)[:n]
    y = np.concatenate(ys)[:n]
    return x, y

"""Near-light image formation, photometric loss, and the optimization loop.

Per pixel and channel c the rendered radiance is

    I_c = r_c * phi_c / ||l_c - x||^2 * max(q_c . n, 0)

with x the back-projected surface point, n the depth-derived normal, q_c
the unit direction to channel c's light, and r_c the BRDF branch evaluated
at the Rusinkiewicz angles of (q_c, view, n).  Each LED feeds exactly one
color channel; sensor crosstalk is handled separately as preprocessing.

The optimizer is plain Adam with a cosine step-size decay, minimizing the
L1 difference between rendered and captured values over random batches of
valid pixels.  Runs are deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import ParamStore, Tape, value_of
from .brdf import BRDFConfig, BRDFField, angle_features
from .errors import DataError, DivergenceError, DomainError
from .geometry import CHANNELS
from .surface import DepthField, DepthFieldConfig

log = logging.getLogger(__name__)


@dataclass
class CapturedImage:
    """Linear-radiance RGB image (H, W, 3, float32) with a validity mask."""

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise DataError("captured image must have shape (H, W, 3)")
        if self.mask is None:
            self.mask = np.ones(self.values.shape[:2], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape[:2]:
            raise DataError("mask shape must match the image")
        valid = self.values[self.mask]
        if valid.size and (not np.all(np.isfinite(valid)) or np.any(valid < 0)):
            raise DataError("valid pixels must be finite and non-negative")

    @property
    def shape(self):
        return self.values.shape[:2]


RenderedImage = CapturedImage


def render_fields(depth_eval, brdf_eval, cam, rig, u, v):
    """Render radiance for pixels (u, v) from arbitrary field callables.

    `depth_eval(u, v)` must return (z, dz/du, dz/dv); `brdf_eval(channel,
    features)` the per-channel reflectance for the six angle features.
    Returns ([I_R, I_G, I_B], diagnostics).  Works on Vars or ndarrays.
    """
    z, gu, gv = depth_eval(u, v)
    x, y, zc = geometry.back_project(cam, u, v, z)
    nx, ny, nz = geometry.normal_from_depth(cam, u, v, z, gu, gv)
    vx, vy, vz = geometry.view_direction(x, y, zc)
    channels = []
    for channel, light in zip(CHANNELS, rig.ordered()):
        qx, qy, qz, dist = geometry.light_direction(light, x, y, zc)
        cosine = ad.relu(qx * nx + qy * ny + qz * nz)
        features = angle_features(qx, qy, qz, vx, vy, vz, nx, ny, nz)
        reflectance = brdf_eval(channel, features)
        channels.append(reflectance * (light.intensity / (dist * dist)) * cosine)
    diagnostics = {"z": z, "gu": gu, "gv": gv}
    return channels, diagnostics


def render_image(depth_field, brdf_field, params, cam, rig):
    """Full-resolution render of neural fields; returns a RenderedImage."""
    u, v = cam.pixel_grid()
    uf = u.ravel().astype(np.float32)
    vf = v.ravel().astype(np.float32)

    def depth_eval(uu, vv):
        return depth_field.depth(params, uu, vv)

    def brdf_eval(channel, features):
        return brdf_field.branch(params, channel, features)

    channels, _ = render_fields(depth_eval, brdf_eval, cam, rig, uf, vf)
    values = np.stack([np.asarray(c) for c in channels], axis=-1)
    return RenderedImage(values.reshape(cam.height, cam.width, 3).astype(np.float32))


def render_pixel(depth_field, brdf_field, params, cam, rig, u, v):
    """RGB radiance of a single pixel (u, v in centered coordinates)."""
    uf = np.asarray([u], dtype=np.float64)
    vf = np.asarray([v], dtype=np.float64)

    def depth_eval(uu, vv):
        return depth_field.depth(params, uu, vv)

    def brdf_eval(channel, features):
        return brdf_field.branch(params, channel, features)

    channels, _ = render_fields(depth_eval, brdf_eval, cam, rig, uf, vf)
    return np.array([float(np.asarray(c)[0]) for c in channels])


def photometric_loss(captured, rendered, mask=None):
    """L1 between two images over valid pixels: (sum, per-pixel mean).

    The mean divides by the number of valid pixel-channel terms.
    """
    cap = captured.values if isinstance(captured, CapturedImage) else np.asarray(captured)
    ren = rendered.values if isinstance(rendered, CapturedImage) else np.asarray(rendered)
    if cap.shape != ren.shape:
        raise DataError(f"image dimensions differ: {cap.shape} vs {ren.shape}")
    if mask is None:
        mask = np.ones(cap.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != cap.shape[:2]:
        raise DataError("mask shape must match the images")
    diff = np.abs(cap[mask].astype(np.float64) - ren[mask].astype(np.float64))
    loss_sum = float(diff.sum())
    count = diff.size
    return loss_sum, loss_sum / count if count else 0.0


def evaluate_mae(estimated, ground_truth, mask=None):
    """Mean angular error in degrees between two unit-normal maps."""
    if estimated.vectors.shape != ground_truth.vectors.shape:
        raise DataError("normal map dimensions differ")
    valid = estimated.mask & ground_truth.mask
    if mask is not None:
        valid = valid & np.asarray(mask, dtype=bool)
    if not np.any(valid):
        raise DataError("empty mask in MAE evaluation")
    a = estimated.vectors[valid].astype(np.float64)
    b = ground_truth.vectors[valid].astype(np.float64)
    dots = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())


# -- optimization ----------------------------------------------------------

@dataclass
class OptimizeConfig:
    iterations: int = 5000
    batch_size: int = 4096  # 0 = full image
    lr_surface: float = 1e-3
    lr_brdf: float = 5e-4
    lr_floor_fraction: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    seed: int = 0
    reproducible: bool = True
    mask_threshold: float = 1e-4
    early_stop_patience: int = 500
    early_stop_min_delta: float = 1e-6
    smoothness_weight: float = 0.0  # optional depth-smoothness extension (off by default)
    ablation: str = "none"  # none | no_brdf | shared_channels
    # geometry warms up under a closed-form per-channel albedo before the
    # BRDF network unlocks (seeded at that albedo); guards against the
    # depth/reflectance drift where a dimmer, farther surface explains the
    # image equally well early on
    brdf_warmup_iterations: int = 250
    depth: DepthFieldConfig = field(default_factory=DepthFieldConfig)
    brdf: BRDFConfig = field(default_factory=BRDFConfig)
    log_every: int = 200


@dataclass
class OptimizerState:
    """Adam moments plus the batch-sampling cursor; fully seeded."""

    iteration: int = 0
    moment1: dict = field(default_factory=dict)
    moment2: dict = field(default_factory=dict)
    permutation: np.ndarray = None
    cursor: int = 0
    seed: int = 0


@dataclass
class OptimizeResult:
    depth_field: DepthField
    brdf_field: BRDFField
    params: ParamStore
    history: list  # rows of (iteration, loss_sum, loss_mean, wall_time_s)
    stats: dict
    albedo: np.ndarray = None  # set by the no-BRDF ablation


def _cosine_lr(base, it, total, floor_fraction):
    w = 0.5 * (1.0 + np.cos(np.pi * min(it, total) / max(total, 1)))
    return base * (floor_fraction + (1.0 - floor_fraction) * w)


def _adam_update(params, grads, state, groups, config):
    t = state.iteration + 1
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    for name in params.names():
        g = grads[name]
        lr = groups[name]
        m = state.moment1[name]
        v = state.moment2[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)


def _next_batch(state, rng, n_valid, batch_size):
    if batch_size <= 0 or batch_size >= n_valid:
        return np.arange(n_valid)
    if state.permutation is None or state.cursor + batch_size > n_valid:
        state.permutation = rng.permutation(n_valid)
        state.cursor = 0
    batch = state.permutation[state.cursor : state.cursor + batch_size]
    state.cursor += batch_size
    return batch


def _seed_brdf_head(params, brdf_field, albedo):
    """Point the (zero-weight) output heads at the warmed-up albedo values.

    softplus(bias) = albedo, so the network's first post-warmup output is
    the constant reflectance the geometry already agrees with.
    """
    last = brdf_field.config.hidden_layers
    for c, channel in enumerate(CHANNELS):
        branch = brdf_field._branch_for(channel)
        name = f"{brdf_field.prefix}.{branch}.b{last}"
        target = max(float(albedo[c]) if branch != "shared" else float(np.mean(albedo)), 1e-4)
        params[name] = np.full_like(params[name], np.log(np.expm1(target)))


def _estimate_albedo(captured_rgb, shading_rgb, robust=False):
    """Per-channel constant albedo for I ~ a * shading.

    Least squares by default (the no-BRDF ablation's estimator).  The
    robust variant takes the median of per-pixel ratios over well-lit
    pixels instead, so specular highlights are left as one-sided residuals
    rather than pulled into the albedo; the geometry warmup uses it.
    """
    albedo = np.ones(3)
    for c in range(3):
        s = shading_rgb[:, c]
        denom = float(np.dot(s, s))
        if denom <= 0.0:
            log.warning("albedo system singular for channel %s; falling back to 1", CHANNELS[c])
            albedo[c] = 1.0
        elif robust:
            lit = s > 0.25 * s.max()
            albedo[c] = float(np.median(captured_rgb[lit, c] / s[lit]))
        else:
            albedo[c] = float(np.dot(captured_rgb[:, c], s) / denom)
    return albedo


def _write_divergence_snapshot(run_dir, params, config, history, iteration):
    snap = os.path.join(run_dir, "diverged") if run_dir else tempfile.mkdtemp(prefix="colorps-diverged-")
    os.makedirs(snap, exist_ok=True)
    np.savez(os.path.join(snap, "params.npz"), **{k: v for k, v in params.items()})
    with open(os.path.join(snap, "state.json"), "w") as fh:
        json.dump({"iteration": iteration, "ablation": config.ablation}, fh, indent=2)
    with open(os.path.join(snap, "history.csv"), "w") as fh:
        fh.write("iteration,loss_sum,loss_mean,wall_time_s\n")
        for row in history[-200:]:
            fh.write(",".join(repr(x) for x in row) + "\n")
    return snap


def optimize(captured, cam, rig, config=OptimizeConfig(), run_dir=None):
    """Jointly fit the depth field and BRDF field to one captured image.

    Returns an OptimizeResult with per-iteration loss history and counters
    (depth-floor clamp hits, iterations run).  Raises DivergenceError with
    a diagnostic snapshot if the loss leaves the finite domain.
    """
    if captured.shape != (cam.height, cam.width):
        raise DataError("captured image does not match the camera resolution")
    if config.ablation not in ("none", "no_brdf", "shared_channels"):
        raise DomainError(f"unknown ablation '{config.ablation}'")

    valid = captured.mask & (captured.values.max(axis=2) >= config.mask_threshold)
    flat = np.flatnonzero(valid.ravel())
    if flat.size == 0:
        raise DataError("no valid pixels above the mask threshold")

    u_all, v_all = cam.pixel_grid()
    u_valid = u_all.ravel()[flat].astype(np.float32)
    v_valid = v_all.ravel()[flat].astype(np.float32)
    i_valid = captured.values.reshape(-1, 3)[flat].astype(np.float32)

    brdf_config = replace(config.brdf, shared_channels=config.ablation == "shared_channels")
    depth_field = DepthField(cam, config.depth)
    brdf_field = BRDFField(brdf_config)
    enc_cache = depth_field.prepare(u_valid, v_valid)

    seed = config.seed
    if not config.reproducible and seed is None:
        seed = int.from_bytes(os.urandom(4), "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    params = ParamStore(depth_field.init_params(rng))
    use_brdf_net = config.ablation != "no_brdf"
    if use_brdf_net:
        params.update(brdf_field.init_params(rng))
    params = params.astype(np.float32)

    groups = {}
    state = OptimizerState(seed=seed)
    for name in params.names():
        state.moment1[name] = np.zeros_like(params[name])
        state.moment2[name] = np.zeros_like(params[name])

    history = []
    floor_hits = 0
    albedo = np.ones(3)
    smoothed = None
    best_smoothed = np.inf
    stale = 0
    start = time.perf_counter()
    n_batch_px = flat.size if config.batch_size <= 0 else min(config.batch_size, flat.size)

    warmup = 0 if config.ablation == "no_brdf" else min(
        config.brdf_warmup_iterations, config.iterations // 2
    )
    for it in range(config.iterations):
        batch = _next_batch(state, rng, flat.size, config.batch_size)
        ub, vb, ib = u_valid[batch], v_valid[batch], i_valid[batch]
        batch_cache = enc_cache.subset(batch)

        albedo_mode = config.ablation == "no_brdf" or it < warmup
        if albedo_mode:
            # alternating step: closed-form albedo from current (detached) geometry
            shading, _ = render_fields(
                lambda uu, vv: depth_field.depth(params, uu, vv, cache=batch_cache),
                lambda channel, feats: np.float32(1.0),
                cam, rig, ub, vb,
            )
            albedo = _estimate_albedo(
                ib.astype(np.float64),
                np.stack(shading, axis=1),
                robust=config.ablation != "no_brdf",
            )
        if use_brdf_net and warmup and it == warmup:
            _seed_brdf_head(params, brdf_field, albedo)

        tape = Tape(dtype=np.float32, check_finite=False)
        pvars = params.as_vars(tape)

        def depth_eval(uu, vv):
            return depth_field.depth(pvars, uu, vv, cache=batch_cache)

        if use_brdf_net and not albedo_mode:
            def brdf_eval(channel, feats):
                return brdf_field.branch(pvars, channel, feats)
        else:
            def brdf_eval(channel, feats):
                return np.float32(albedo[CHANNELS.index(channel)])

        channels, diag = render_fields(depth_eval, brdf_eval, cam, rig, ub, vb)
        loss = ad.total(ad.absolute(channels[0] - ib[:, 0]))
        loss = loss + ad.total(ad.absolute(channels[1] - ib[:, 1]))
        loss = loss + ad.total(ad.absolute(channels[2] - ib[:, 2]))
        if config.smoothness_weight > 0.0:
            loss = loss + config.smoothness_weight * (
                ad.total(ad.absolute(diag["gu"])) + ad.total(ad.absolute(diag["gv"]))
            )

        loss_sum = float(value_of(loss))
        loss_mean = loss_sum / (3 * len(batch))
        if not np.isfinite(loss_sum):
            snap = _write_divergence_snapshot(run_dir, params, config, history, it)
            raise DivergenceError(
                f"loss became non-finite at iteration {it}", iteration=it, snapshot_dir=snap
            )

        floor_hits += int(np.count_nonzero(value_of(diag["z"]) <= config.depth.depth_floor_mm))

        adjoints = tape.backward(loss)
        grads = {name: tape.adjoint(adjoints, var) for name, var in pvars.items()}

        lr_s = _cosine_lr(config.lr_surface, it, config.iterations, config.lr_floor_fraction)
        lr_b = _cosine_lr(config.lr_brdf, it, config.iterations, config.lr_floor_fraction)
        for name in params.names():
            groups[name] = lr_s if name.startswith("surface.") else lr_b
        _adam_update(params, grads, state, groups, config)
        state.iteration += 1

        history.append((it, loss_sum, loss_mean, time.perf_counter() - start))
        if it % 25 == 0:
            params.check_finite()
        if it % config.log_every == 0:
            log.info("iter %d: batch L1 sum %.6g (mean %.6g)", it, loss_sum, loss_mean)

        # early stop on the smoothed per-pixel mean
        smoothed = loss_mean if smoothed is None else 0.99 * smoothed + 0.01 * loss_mean
        if smoothed < best_smoothed - config.early_stop_min_delta:
            best_smoothed = smoothed
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                log.info("early stop at iteration %d", it)
                break

    stats = {
        "iterations_run": state.iteration,
        "floor_clamp_hits": floor_hits,
        "final_loss_mean": history[-1][2] if history else None,
        "n_valid_pixels": int(flat.size),
        "batch_pixels": int(n_batch_px),
        "seed": seed,
    }
    return OptimizeResult(
        depth_field=depth_field,
        brdf_field=brdf_field,
        params=params,
        history=history,
        stats=stats,
        albedo=albedo if config.ablation == "no_brdf" else None,
    )


def ablate_no_brdf(captured, cam, rig, config=OptimizeConfig()):
    """Optimization with the BRDF replaced by a least-squares constant albedo."""
    return optimize(captured, cam, rig, replace(config, ablation="no_brdf"))


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        fh.write("iteration,loss_sum,loss_mean,wall_time_s\n")
        for it, loss_sum, loss_mean, wall in history:
            fh.write(f"{it},{loss_sum!r},{loss_mean!r},{wall:.3f}\n")

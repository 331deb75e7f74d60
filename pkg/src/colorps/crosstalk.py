"""Learned pixel-wise crosstalk correction (RGB -> RGB).

Compact color sensors mix the channels through overlapping spectral
responses; the corrector learns the inverse mapping from single-LED
baseline captures (observed vs ideal) and is applied as a preprocessing
step before reconstruction.

The network is residual: T(c) = max(c + net(c), 0) with a small tanh MLP,
zero-initialized so an untrained corrector is exactly the identity.
Training samples are the baseline pixel pairs plus random non-negative
superpositions of them; superposition is exact for the linear image
formation, and the mixtures are what the corrector actually sees when it
processes a capture with every LED on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, value_of
from .errors import DataError, DivergenceError
from .rendering import CapturedImage

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CCMConfig:
    hidden_layers: int = 2
    width: int = 16
    iterations: int = 4000
    batch_size: int = 8192
    learning_rate: float = 3e-3
    lr_floor_fraction: float = 0.05
    holdout_fraction: float = 0.2
    superposition_factor: int = 2  # mixture samples per baseline sample
    max_mixture_gain: float = 1.3
    seed: int = 0


class CrosstalkCorrector:
    """Residual RGB->RGB network with non-negative output."""

    def __init__(self, config=CCMConfig(), params=None):
        self.config = config
        self.params = params
        self.report = {}

    def param_names(self):
        names = []
        for i in range(self.config.hidden_layers + 1):
            names += [f"ccm.w{i}", f"ccm.b{i}"]
        return names

    def init_params(self, rng):
        c = self.config
        params = {}
        fan_in = 3
        for i in range(c.hidden_layers):
            bound = np.sqrt(6.0 / fan_in)
            params[f"ccm.w{i}"] = rng.uniform(-bound, bound, size=(fan_in, c.width))
            params[f"ccm.b{i}"] = np.zeros((c.width,))
            fan_in = c.width
        i = c.hidden_layers
        params[f"ccm.w{i}"] = np.zeros((fan_in, 3))
        params[f"ccm.b{i}"] = np.zeros((3,))
        return params

    def forward(self, params, rgb):
        """Corrected values for (N, 3) inputs; works on Vars or ndarrays."""
        h = rgb
        for i in range(self.config.hidden_layers):
            h = ad.tanh(h @ params[f"ccm.w{i}"] + params[f"ccm.b{i}"])
        i = self.config.hidden_layers
        residual = h @ params[f"ccm.w{i}"] + params[f"ccm.b{i}"]
        return ad.relu(rgb + residual)

    def __call__(self, rgb):
        return self.forward(self.params, np.asarray(rgb, dtype=np.float32))


def apply_ccm(corrector, image):
    """Correct a captured image pixel-wise; dimensions and mask preserved."""
    flat = image.values.reshape(-1, 3).astype(np.float32)
    corrected = corrector.forward(corrector.params, flat)
    return CapturedImage(np.asarray(corrected).reshape(image.values.shape), image.mask.copy())


def _gather_pairs(baselines, targets):
    if len(baselines) != 3 or len(targets) != 3:
        raise DataError("expected exactly three baseline/target image pairs")
    observed, ideal, channel = [], [], []
    shape = baselines[0].shape
    for c, (obs, tgt) in enumerate(zip(baselines, targets)):
        if obs.shape != shape or tgt.shape != shape:
            raise DataError("baseline and target images must share dimensions")
        off = [k for k in range(3) if k != c]
        if np.any(tgt.values[:, :, off] != 0):
            raise DataError(f"target {c} has energy outside its nominal channel")
        valid = obs.mask & tgt.mask
        observed.append(obs.values[valid].reshape(-1, 3))
        ideal.append(tgt.values[valid].reshape(-1, 3))
        channel.append(np.full(observed[-1].shape[0], c, dtype=np.int64))
    return (
        np.concatenate(observed).astype(np.float32),
        np.concatenate(ideal).astype(np.float32),
        np.concatenate(channel),
    )


def _augment_superpositions(observed, ideal, rng, factor, max_gain):
    """Random non-negative LED superpositions built from the baseline pairs.

    The all-gains-zero limit (no light in, no light out) is a pair the
    formation model fixes exactly, so a slice of the mixtures anchors the
    origin even when the captures themselves contain no dark pixels.
    """
    n = observed.shape[0]
    per_channel = [np.flatnonzero(ideal[:, c] > 0) for c in range(3)]
    if any(idx.size == 0 for idx in per_channel):
        return observed, ideal
    m = factor * n
    obs_mix = np.zeros((m, 3), dtype=np.float32)
    ideal_mix = np.zeros((m, 3), dtype=np.float32)
    dark = rng.random(m) < 0.02
    for c, idx in enumerate(per_channel):
        rows = rng.choice(idx, size=m)
        gain = rng.uniform(0.0, max_gain, size=m).astype(np.float32)
        gain[dark] = 0.0
        obs_mix += gain[:, None] * observed[rows]
        ideal_mix += gain[:, None] * ideal[rows]
    return np.concatenate([observed, obs_mix]), np.concatenate([ideal, ideal_mix])


def residual_energy_ratio(corrected, channel):
    """Off-nominal-channel energy of corrected baselines over nominal energy."""
    nominal = 0.0
    off = 0.0
    for c in range(3):
        rows = corrected[channel == c]
        nominal += float(np.sum(rows[:, c] ** 2))
        off += float(np.sum(np.delete(rows, c, axis=1) ** 2))
    if nominal == 0.0:
        raise DataError("corrected baselines carry no nominal-channel energy")
    return off / nominal


def train_ccm(baselines, targets, config=CCMConfig()):
    """Fit the corrector on single-LED baseline captures.

    `baselines` are the three observed (crosstalked) captures, `targets`
    the ideal ones with energy only in their nominal channel.  20% of the
    baseline pixels are held out; the trained corrector's report carries
    the held-out off-channel residual energy ratio.
    """
    observed, ideal, channel = _gather_pairs(baselines, targets)
    rng = np.random.Generator(np.random.PCG64(config.seed))

    holdout = rng.random(observed.shape[0]) < config.holdout_fraction
    train_obs, train_ideal = observed[~holdout], ideal[~holdout]
    held_obs, held_channel = observed[holdout], channel[holdout]

    if config.superposition_factor > 0:
        train_obs, train_ideal = _augment_superpositions(
            train_obs, train_ideal, rng, config.superposition_factor, config.max_mixture_gain
        )

    corrector = CrosstalkCorrector(config)
    params = ParamStore(corrector.init_params(rng)).astype(np.float32)
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.99, 1e-8
    n = train_obs.shape[0]

    for it in range(config.iterations):
        rows = rng.integers(0, n, size=min(config.batch_size, n))
        xb = train_obs[rows]
        yb = train_ideal[rows]
        tape = Tape(dtype=np.float32)
        pvars = params.as_vars(tape)
        pred = corrector.forward(pvars, xb)
        loss = ad.mean(ad.absolute(pred - yb))
        loss_value = float(value_of(loss))
        if not np.isfinite(loss_value):
            raise DivergenceError(f"CCM training diverged at iteration {it}", iteration=it)
        adjoints = tape.backward(loss)
        w = 0.5 * (1.0 + np.cos(np.pi * it / config.iterations))
        lr = config.learning_rate * (config.lr_floor_fraction + (1 - config.lr_floor_fraction) * w)
        t = it + 1
        for name, var in pvars.items():
            g = tape.adjoint(adjoints, var)
            m1[name] = b1 * m1[name] + (1 - b1) * g
            m2[name] = b2 * m2[name] + (1 - b2) * np.square(g)
            step = m1[name] / (1 - b1**t) / (np.sqrt(m2[name] / (1 - b2**t)) + eps)
            params[name] = params[name] - lr * step
        if it % 25 == 0:
            params.check_finite()

    corrector.params = params
    corrected_held = np.asarray(corrector.forward(params, held_obs))
    corrector.report = {
        "holdout_pixels": int(held_obs.shape[0]),
        "train_samples": int(n),
        "final_train_l1": loss_value,
        "holdout_off_energy_ratio": residual_energy_ratio(corrected_held, held_channel),
    }
    log.info(
        "CCM trained: holdout off-channel energy ratio %.4f",
        corrector.report["holdout_off_energy_ratio"],
    )
    return corrector

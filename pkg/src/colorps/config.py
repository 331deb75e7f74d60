"""Run configuration: a single JSON document with strict validation.

Every run is fully specified by one config file; the resolved copy written
into each run directory reproduces the run exactly.  Unknown keys are
rejected, types are checked against the defaults, and only paths and the
thread count may be overridden from the environment (COLORPS_DATA,
COLORPS_OUT, COLORPS_THREADS).
"""

from __future__ import annotations

import copy
import json
import os

from .brdf import BRDFConfig
from .crosstalk import CCMConfig
from .errors import ConfigError
from .geometry import CameraModel, default_camera, default_rig
from .rendering import OptimizeConfig
from .surface import DepthFieldConfig, HashEncodingConfig, SirenConfig

CONFIG_VERSION = 1

_DEFAULTS = {
    "version": CONFIG_VERSION,
    "camera": {
        "width": 160,
        "height": 120,
        "focal_length_px": None,  # derived from the reference rig when null
        "principal_point": None,  # image center when null
        "pixel_pitch_mm": None,
    },
    "lights": {
        "radius_mm": 21.5,
        "z_mm": -11.0,
        "intensity": 1.0,
        "angles_deg": [0.0, 120.0, 240.0],
        "positions": None,  # explicit [[x,y,z] * 3] overrides the circle
    },
    "model": {
        "encoding": {
            "levels": 8,
            "features_per_level": 2,
            "log2_table_size": 15,
            "base_resolution": 16,
            "growth_factor": 1.5,
        },
        "siren": {"hidden_layers": 3, "width": 64, "omega0": 30.0, "output_scale": 0.01},
        "brdf": {"hidden_layers": 3, "width": 32},
        "depth_offset_mm": 35.0,
        "depth_scale_mm": 5.0,
        "depth_floor_mm": 0.001,
    },
    "optimizer": {
        "iterations": 5000,
        "batch_size": 4096,
        "lr_surface": 0.001,
        "lr_brdf": 0.0005,
        "lr_floor_fraction": 0.1,
        "seed": 0,
        "reproducible": True,
        "mask_threshold": 0.0001,
        "early_stop_patience": 500,
        "early_stop_min_delta": 1e-6,
        "smoothness_weight": 0.0,
        "brdf_warmup_iterations": 250,
    },
    "ablation": {"no_brdf": False, "shared_channels": False},
    "scene": {"preset": "sin_bumps_lambertian"},
    "crosstalk": {"enabled": False, "off_diagonal": 0.15, "noise_sigma": 0.002, "seed": 0},
    "ccm": {
        "iterations": 4000,
        "batch_size": 8192,
        "learning_rate": 0.003,
        "hidden_layers": 2,
        "width": 16,
        "holdout_fraction": 0.2,
        "superposition_factor": 2,
        "seed": 0,
    },
    "paths": {"data": None, "out": None, "ccm": None},
    "threads": None,
}


def default_config():
    return copy.deepcopy(_DEFAULTS)


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"'{path or 'config'}' must be an object")
    merged = {}
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in user:
            merged[key] = copy.deepcopy(default)
            continue
        value = user[key]
        if isinstance(default, dict):
            merged[key] = _merge(default, value, here)
        else:
            merged[key] = _check_type(default, value, here)
    unknown = set(user) - set(defaults)
    if unknown:
        where = path or "config"
        raise ConfigError(f"unknown key(s) in '{where}': {sorted(unknown)}")
    return merged


def _check_type(default, value, path):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string")
        return value
    if isinstance(default, list) or default is None:
        return value
    raise ConfigError(f"'{path}' has unsupported type")


def validate_config(user):
    """Merge a user config over the defaults; reject unknown keys."""
    merged = _merge(_DEFAULTS, user if user is not None else {})
    if merged["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {merged['version']!r}")
    cam = merged["camera"]
    if cam["width"] <= 0 or cam["height"] <= 0:
        raise ConfigError("camera dimensions must be positive")
    opt = merged["optimizer"]
    if opt["iterations"] <= 0:
        raise ConfigError("optimizer.iterations must be positive")
    if opt["seed"] is None and opt["reproducible"]:
        raise ConfigError("reproducible runs require an explicit optimizer.seed")
    if merged["ablation"]["no_brdf"] and merged["ablation"]["shared_channels"]:
        raise ConfigError("ablations no_brdf and shared_channels are mutually exclusive")
    positions = merged["lights"]["positions"]
    if positions is not None:
        if len(positions) != 3 or any(len(p) != 3 for p in positions):
            raise ConfigError("lights.positions must be three [x, y, z] triples")
    return merged


def apply_env_overrides(cfg, env=None):
    """Environment may override paths and the thread count, nothing else."""
    env = os.environ if env is None else env
    if env.get("COLORPS_DATA"):
        cfg["paths"]["data"] = env["COLORPS_DATA"]
    if env.get("COLORPS_OUT"):
        cfg["paths"]["out"] = env["COLORPS_OUT"]
    if env.get("COLORPS_THREADS"):
        try:
            cfg["threads"] = int(env["COLORPS_THREADS"])
        except ValueError:
            raise ConfigError("COLORPS_THREADS must be an integer") from None
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    return validate_config(user)


def save_config(path, cfg):
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- constructors bridging the config document to the library objects -------

def camera_from_config(cfg):
    cam = cfg["camera"]
    width, height = cam["width"], cam["height"]
    base = default_camera(width, height)
    return CameraModel(
        focal_length_px=cam["focal_length_px"] or base.focal_length_px,
        principal_point=tuple(cam["principal_point"] or base.principal_point),
        width=width,
        height=height,
        pixel_pitch_mm=cam["pixel_pitch_mm"] or base.pixel_pitch_mm,
    )


def rig_from_config(cfg):
    lights = cfg["lights"]
    if lights["positions"] is not None:
        from .geometry import CHANNELS, LightRig, LightSource

        return LightRig(
            tuple(
                LightSource(tuple(float(x) for x in pos), lights["intensity"], channel)
                for pos, channel in zip(lights["positions"], CHANNELS)
            )
        )
    return default_rig(
        intensity=lights["intensity"],
        radius_mm=lights["radius_mm"],
        z_mm=lights["z_mm"],
        angles_deg=tuple(lights["angles_deg"]),
    )


def depth_field_config_from(cfg):
    model = cfg["model"]
    enc = model["encoding"]
    return DepthFieldConfig(
        encoding=HashEncodingConfig(
            levels=enc["levels"],
            features_per_level=enc["features_per_level"],
            table_size=2 ** enc["log2_table_size"],
            base_resolution=enc["base_resolution"],
            growth_factor=enc["growth_factor"],
        ),
        siren=SirenConfig(
            hidden_layers=model["siren"]["hidden_layers"],
            width=model["siren"]["width"],
            omega0=model["siren"]["omega0"],
            output_scale=model["siren"]["output_scale"],
        ),
        depth_offset_mm=model["depth_offset_mm"],
        depth_scale_mm=model["depth_scale_mm"],
        depth_floor_mm=model["depth_floor_mm"],
    )


def optimize_config_from(cfg):
    opt = cfg["optimizer"]
    ablation = "none"
    if cfg["ablation"]["no_brdf"]:
        ablation = "no_brdf"
    elif cfg["ablation"]["shared_channels"]:
        ablation = "shared_channels"
    return OptimizeConfig(
        iterations=opt["iterations"],
        batch_size=opt["batch_size"],
        lr_surface=opt["lr_surface"],
        lr_brdf=opt["lr_brdf"],
        lr_floor_fraction=opt["lr_floor_fraction"],
        seed=opt["seed"],
        reproducible=opt["reproducible"],
        mask_threshold=opt["mask_threshold"],
        early_stop_patience=opt["early_stop_patience"],
        early_stop_min_delta=opt["early_stop_min_delta"],
        smoothness_weight=opt["smoothness_weight"],
        brdf_warmup_iterations=opt["brdf_warmup_iterations"],
        ablation=ablation,
        depth=depth_field_config_from(cfg),
        brdf=BRDFConfig(
            hidden_layers=cfg["model"]["brdf"]["hidden_layers"],
            width=cfg["model"]["brdf"]["width"],
        ),
    )


def ccm_config_from(cfg):
    ccm = cfg["ccm"]
    return CCMConfig(
        hidden_layers=ccm["hidden_layers"],
        width=ccm["width"],
        iterations=ccm["iterations"],
        batch_size=ccm["batch_size"],
        learning_rate=ccm["learning_rate"],
        holdout_fraction=ccm["holdout_fraction"],
        superposition_factor=ccm["superposition_factor"],
        seed=ccm["seed"],
    )

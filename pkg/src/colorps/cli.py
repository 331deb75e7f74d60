"""Command-line workflow: synth, reconstruct, ccm-train, ccm-apply, eval, ablate.

Every subcommand reads one JSON run configuration, writes a versioned run
directory (outputs, metrics CSV, resolved config copy, log), and exits
with 0 on success, 2 on configuration errors, 3 on data errors, or 4 on
optimization divergence.  Errors also emit one machine-readable JSON line
on stderr.

Only the standard library is imported at module level so COLORPS_THREADS
can cap the BLAS pool before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

RUN_LAYOUT = "colorps-run-v1"
DATASET_LAYOUT = "colorps-dataset-v1"

log = logging.getLogger("colorps.cli")


def _setup_threads():
    threads = os.environ.get("COLORPS_THREADS")
    if threads:
        for key in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(key, threads)


def _write_manifest(run_dir, kind, extra=None):
    manifest = {
        "layout": RUN_LAYOUT if kind != "dataset" else DATASET_LAYOUT,
        "kind": kind,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_metrics(run_dir, rows):
    """rows: iterable of (metric, name, value)."""
    with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as fh:
        fh.write("metric,name,value\n")
        for metric, name, value in rows:
            fh.write(f"{metric},{name},{value!r}\n")


def _start_run(args, kind):
    from . import config as cfgmod

    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.validate_config({})
    cfgmod.apply_env_overrides(cfg)
    out_dir = args.out or cfg["paths"]["out"]
    if not out_dir:
        from .errors import ConfigError

        raise ConfigError("an output directory is required (--out or paths.out)")
    os.makedirs(out_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(out_dir, "run.log"))
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    logging.getLogger("colorps").addHandler(handler)
    logging.getLogger("colorps").setLevel(logging.INFO)
    cfgmod.save_config(os.path.join(out_dir, "resolved_config.json"), cfg)
    _write_manifest(out_dir, kind)
    return cfg, out_dir


def _camera_dict(cam):
    return {
        "width": cam.width,
        "height": cam.height,
        "focal_length_px": cam.focal_length_px,
        "principal_point": list(cam.principal_point),
        "pixel_pitch_mm": cam.pixel_pitch_mm,
    }


def _save_rig(path, cam, rig, exposure=None):
    doc = {
        "camera": _camera_dict(cam),
        "lights": [
            {"position": list(light.position), "intensity": light.intensity, "channel": light.channel}
            for light in rig.ordered()
        ],
    }
    if exposure is not None:
        doc["exposure"] = exposure
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_rig(path):
    from .errors import DataError
    from .geometry import CameraModel, LightRig, LightSource

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"rig file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"rig file is not valid JSON: {exc}") from None
    cam_doc = doc["camera"]
    cam = CameraModel(
        focal_length_px=cam_doc["focal_length_px"],
        principal_point=tuple(cam_doc["principal_point"]),
        width=cam_doc["width"],
        height=cam_doc["height"],
        pixel_pitch_mm=cam_doc.get("pixel_pitch_mm", 1.0),
    )
    rig = LightRig(
        tuple(
            LightSource(tuple(l["position"]), l["intensity"], l["channel"])
            for l in doc["lights"]
        )
    )
    return cam, rig


def _load_dataset(data_dir):
    import numpy as np

    from . import imgio
    from .errors import DataError
    from .rendering import CapturedImage

    image_path = os.path.join(data_dir, "image.pfm")
    if not os.path.exists(image_path):
        raise DataError(f"no image.pfm in '{data_dir}'")
    values = imgio.load_pfm(image_path)
    mask_path = os.path.join(data_dir, "mask.png")
    mask = None
    if os.path.exists(mask_path):
        mask = imgio.load_png16(mask_path) > 0.5
        if mask.ndim == 3:
            mask = mask[:, :, 0]
    cam, rig = _load_rig(os.path.join(data_dir, "rig.json"))
    if values.shape[:2] != (cam.height, cam.width):
        raise DataError("image resolution does not match the rig's camera")
    return CapturedImage(values, mask), cam, rig


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    cfg, out_dir = _start_run(args, "dataset")
    import numpy as np

    from . import config as cfgmod
    from . import imgio, oracle

    cam = cfgmod.camera_from_config(cfg)
    rig = cfgmod.rig_from_config(cfg)
    preset = args.preset or cfg["scene"]["preset"]
    scene = oracle.make_preset(preset, cam=cam, rig=rig)
    render = oracle.render_scene(scene)

    imgio.save_pfm(os.path.join(out_dir, "image_ideal.pfm"), render.image.values)
    imgio.export_normal_map(
        render.normals,
        png_path=os.path.join(out_dir, "normals_gt.png"),
        pfm_path=os.path.join(out_dir, "normals_gt.pfm"),
    )
    imgio.save_pfm(os.path.join(out_dir, "depth_gt.pfm"), render.depth.astype(np.float32))
    imgio.save_png16(os.path.join(out_dir, "mask.png"), render.image.mask.astype(np.float64))
    _save_rig(os.path.join(out_dir, "rig.json"), cam, render.rig, exposure=render.exposure)

    ct = cfg["crosstalk"]
    if ct["enabled"]:
        mixing = oracle.CrosstalkMatrix.with_off_diagonal(ct["off_diagonal"])
        observed = oracle.apply_crosstalk(
            render.image, mixing, noise_sigma=ct["noise_sigma"], seed=ct["seed"]
        )
        imgio.save_pfm(os.path.join(out_dir, "image.pfm"), observed.values)
        baseline_dir = os.path.join(out_dir, "baselines")
        os.makedirs(baseline_dir, exist_ok=True)
        ideal = oracle.single_led_renders(render)
        mixed = oracle.make_baseline_captures(
            scene, mixing, noise_sigma=ct["noise_sigma"], seed=ct["seed"] + 1, render=render
        )
        for channel, obs, idl in zip("rgb", mixed, ideal):
            imgio.save_pfm(os.path.join(baseline_dir, f"observed_{channel}.pfm"), obs.values)
            imgio.save_pfm(os.path.join(baseline_dir, f"ideal_{channel}.pfm"), idl.values)
        with open(os.path.join(out_dir, "mixing.json"), "w") as fh:
            json.dump({"matrix": mixing.matrix.tolist(), "noise_sigma": ct["noise_sigma"]}, fh, indent=2)
    else:
        imgio.save_pfm(os.path.join(out_dir, "image.pfm"), render.image.values)

    _write_metrics(
        out_dir,
        [
            ("exposure", preset, render.exposure),
            ("valid_pixels", preset, int(render.image.mask.sum())),
        ],
    )
    print(f"dataset '{preset}' written to {out_dir}")
    return EXIT_OK


def _reconstruct_common(args, kind, ablation=None):
    cfg, out_dir = _start_run(args, kind)
    import numpy as np

    from . import config as cfgmod
    from . import imgio, rendering
    from .checkpoint import load_checkpoint, save_checkpoint
    from .crosstalk import CrosstalkCorrector, apply_ccm

    captured, cam, rig = _load_dataset(args.data)
    opt_config = cfgmod.optimize_config_from(cfg)
    if ablation:
        from dataclasses import replace

        opt_config = replace(opt_config, ablation=ablation)

    ccm_path = getattr(args, "ccm", None) or cfg["paths"]["ccm"]
    if ccm_path:
        params, meta = load_checkpoint(ccm_path)
        corrector = CrosstalkCorrector(params=params)
        captured = apply_ccm(corrector, captured)
        log.info("applied crosstalk correction from %s", ccm_path)

    result = rendering.optimize(captured, cam, rig, opt_config, run_dir=out_dir)

    rendering.write_history_csv(result.history, os.path.join(out_dir, "loss_history.csv"))
    normals = result.depth_field.normal_map(result.params)
    normals.mask &= captured.mask
    z, _, _ = result.depth_field.depth_map(result.params)
    imgio.export_normal_map(
        normals,
        png_path=os.path.join(out_dir, "normals.png"),
        pfm_path=os.path.join(out_dir, "normals.pfm"),
    )
    imgio.save_pfm(os.path.join(out_dir, "depth.pfm"), z.astype(np.float32))
    imgio.export_mesh(z, cam, os.path.join(out_dir, "mesh.obj"), mask=captured.mask)
    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), result.params, config=cfg)

    metrics = [
        ("loss_mean_l1", "final", result.stats["final_loss_mean"]),
        ("iterations", "run", result.stats["iterations_run"]),
        ("clamp_floor_hits", "depth", result.stats["floor_clamp_hits"]),
        ("valid_pixels", "input", result.stats["n_valid_pixels"]),
    ]
    if result.albedo is not None:
        for c, name in enumerate("rgb"):
            metrics.append(("albedo", name, float(result.albedo[c])))
    _write_metrics(out_dir, metrics)
    print(f"reconstruction written to {out_dir} "
          f"(final per-pixel L1 {result.stats['final_loss_mean']:.3e})")
    return EXIT_OK


def cmd_reconstruct(args):
    return _reconstruct_common(args, "reconstruct")


def cmd_ablate(args):
    mode = args.mode
    return _reconstruct_common(args, f"ablate-{mode}", ablation=mode)


def cmd_ccm_train(args):
    cfg, out_dir = _start_run(args, "ccm-train")
    from . import config as cfgmod
    from . import imgio
    from .checkpoint import save_checkpoint
    from .crosstalk import train_ccm
    from .errors import DataError
    from .rendering import CapturedImage

    observed, ideal = [], []
    for channel in "rgb":
        obs_path = os.path.join(args.baselines, f"observed_{channel}.pfm")
        ideal_path = os.path.join(args.baselines, f"ideal_{channel}.pfm")
        if not (os.path.exists(obs_path) and os.path.exists(ideal_path)):
            raise DataError(f"missing baseline pair for channel '{channel}' in {args.baselines}")
        observed.append(CapturedImage(imgio.load_pfm(obs_path)))
        ideal.append(CapturedImage(imgio.load_pfm(ideal_path)))

    corrector = train_ccm(observed, ideal, cfgmod.ccm_config_from(cfg))
    save_checkpoint(os.path.join(out_dir, "ccm.npz"), corrector.params, config=cfg["ccm"])
    _write_metrics(
        out_dir,
        [("off_energy_ratio", "holdout", corrector.report["holdout_off_energy_ratio"]),
         ("l1", "train_final", corrector.report["final_train_l1"])],
    )
    print(f"CCM written to {out_dir} "
          f"(holdout off-channel energy ratio {corrector.report['holdout_off_energy_ratio']:.4f})")
    return EXIT_OK


def cmd_ccm_apply(args):
    cfg, out_dir = _start_run(args, "ccm-apply")
    from . import imgio
    from .checkpoint import load_checkpoint
    from .crosstalk import CrosstalkCorrector, apply_ccm
    from .rendering import CapturedImage

    params, _ = load_checkpoint(args.ccm)
    corrector = CrosstalkCorrector(params=params)
    image = CapturedImage(imgio.load_pfm(args.image))
    corrected = apply_ccm(corrector, image)
    out_path = os.path.join(out_dir, "corrected.pfm")
    imgio.save_pfm(out_path, corrected.values)
    _write_metrics(out_dir, [("pixels", "corrected", int(corrected.values.size // 3))])
    print(f"corrected image written to {out_path}")
    return EXIT_OK


def cmd_eval(args):
    cfg, out_dir = _start_run(args, "eval")
    from . import imgio
    from .rendering import evaluate_mae

    est_path = args.estimated
    if os.path.isdir(est_path):
        est_path = os.path.join(est_path, "normals.pfm")
    truth_path = args.truth
    mask = None
    if os.path.isdir(truth_path):
        mask_path = os.path.join(truth_path, "mask.png")
        if os.path.exists(mask_path):
            mask = imgio.load_png16(mask_path) > 0.5
            if mask.ndim == 3:
                mask = mask[:, :, 0]
        truth_path = os.path.join(truth_path, "normals_gt.pfm")
    estimated = imgio.load_normal_map_pfm(est_path)
    truth = imgio.load_normal_map_pfm(truth_path, mask=mask)
    mae = evaluate_mae(estimated, truth)
    _write_metrics(out_dir, [("mae_degrees", "normals", mae)])
    print(f"MAE {mae:.4f} degrees")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="colorps",
        description="Single-image near-light color photometric stereo toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render an analytic oracle dataset")
    p.add_argument("--preset", help="scene preset name (overrides config)")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output dataset directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("reconstruct", help="optimize depth and BRDF on one image")
    p.add_argument("--data", required=True, help="dataset directory (image.pfm + rig.json)")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="run directory")
    p.add_argument("--ccm", help="apply this crosstalk-corrector checkpoint first")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("ablate", help="reconstruction with an ablated model")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True, choices=["no_brdf", "shared_channels"])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="run directory")
    p.add_argument("--ccm", help="apply this crosstalk-corrector checkpoint first")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("ccm-train", help="train the crosstalk corrector from baselines")
    p.add_argument("--baselines", required=True, help="directory of observed_*/ideal_* PFMs")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="run directory")
    p.set_defaults(fn=cmd_ccm_train)

    p = sub.add_parser("ccm-apply", help="apply a trained corrector to an image")
    p.add_argument("--ccm", required=True, help="corrector checkpoint (.npz)")
    p.add_argument("--image", required=True, help="input PFM image")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="run directory")
    p.set_defaults(fn=cmd_ccm_apply)

    p = sub.add_parser("eval", help="mean angular error of estimated normals")
    p.add_argument("--estimated", required=True, help="run directory or normals PFM")
    p.add_argument("--truth", required=True, help="dataset directory or normals PFM")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="run directory")
    p.set_defaults(fn=cmd_eval)

    return parser


def _error_exit(category, exc, code):
    sys.stderr.write(json.dumps({"error_category": category, "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    _setup_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    from .errors import ConfigError, DataError, DivergenceError, DomainError, ParseError

    try:
        return args.fn(args)
    except ConfigError as exc:
        return _error_exit("config", exc, EXIT_CONFIG)
    except (DataError, ParseError, DomainError, FileNotFoundError) as exc:
        return _error_exit("data", exc, EXIT_DATA)
    except DivergenceError as exc:
        return _error_exit("divergence", exc, EXIT_DIVERGENCE)


if __name__ == "__main__":
    sys.exit(main())

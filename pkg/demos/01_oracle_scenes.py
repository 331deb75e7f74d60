"""Render every analytic scene preset and save preview images.

The oracle scenes have closed-form depth and gradients, so they double as
ground truth: alongside each capture we export the exact normal map and
depth map the reconstruction will later be measured against.
"""

import os

import numpy as np

from colorps.geometry import default_camera
from colorps.imgio import export_normal_map, save_pfm, save_png16
from colorps.oracle import PRESETS, make_preset, render_scene

out_dir = os.path.join(os.path.dirname(__file__), "output", "01_oracle_scenes")
os.makedirs(out_dir, exist_ok=True)

cam = default_camera(160, 120)

for name in PRESETS:
    scene = make_preset(name, cam=cam)
    render = render_scene(scene)
    values = render.image.values

    print(f"{name:24s} exposure {render.exposure:8.1f}  "
          f"mean {values[render.image.mask].mean():.3f}  "
          f"valid {render.image.mask.mean():5.1%}  "
          f"depth [{render.depth[render.image.mask].min():.1f}, "
          f"{render.depth[render.image.mask].max():.1f}] mm")

    save_pfm(os.path.join(out_dir, f"{name}.pfm"), values)
    # 2.2 gamma preview so the linear radiance is viewable
    save_png16(os.path.join(out_dir, f"{name}.png"), np.clip(values, 0, 1) ** (1 / 2.2))
    export_normal_map(render.normals, png_path=os.path.join(out_dir, f"{name}_normals.png"))

print(f"\nwrote previews to {out_dir}")

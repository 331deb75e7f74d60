"""Single-image near-light color photometric stereo.

One RGB capture under three colored near-point lights, calibrated camera
intrinsics, and light positions go in; a jointly optimized neural depth
field and neural BRDF come out, along with normal maps, depth maps, and
meshes.  An analytic scene oracle generates verifiable synthetic data
through the identical image formation model.
"""

__version__ = "0.1.0"

from .autodiff import ParamStore, Tape, grad, grad_wrt_input
from .brdf import BRDFConfig, BRDFField, RusinkiewiczAngles, rusinkiewicz
from .crosstalk import CCMConfig, CrosstalkCorrector, apply_ccm, train_ccm
from .geometry import (
    CameraModel,
    LightRig,
    LightSource,
    NormalMap,
    back_project,
    default_camera,
    default_rig,
    light_direction,
    normal_from_depth,
    project,
)
from .oracle import (
    CrosstalkMatrix,
    SceneOracle,
    apply_crosstalk,
    make_baseline_captures,
    make_preset,
    make_scene,
    render_scene,
)
from .rendering import (
    CapturedImage,
    OptimizeConfig,
    ablate_no_brdf,
    evaluate_mae,
    optimize,
    photometric_loss,
    render_image,
    render_pixel,
)
from .surface import DepthField, DepthFieldConfig, HashEncoding, SirenMLP

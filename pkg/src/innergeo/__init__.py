"""Inner-geometry distillation losses for camera BEV detectors.

Depth supervision relative to a per-target reference pixel, Gram-matrix
distillation of BEV keypoint features, the depth metric suite, and a
synthetic harness to exercise them without real data.
"""

from .bev import (
    BevFeatureGrid,
    bev_distill_loss,
    bev_distill_loss_grad,
    bilinear_sample,
    bilinear_sample_grad,
    gram_inter_channel,
    gram_inter_keypoint,
    inter_channel_loss,
    inter_keypoint_loss,
    sample_keypoint_coords,
)
from .depth import (
    CategoricalDepthMap,
    DepthBinSpec,
    GroundTruthDepthMap,
    TargetPixelSet,
    absolute_depth_bce,
    expected_depth,
    expected_depth_grad,
    inner_depth_loss,
    inner_depth_loss_grad,
    inner_depth_residuals,
    localize_foreground,
    rasterize_gt_depth,
    select_reference,
)
from .errors import DomainError, FormatError
from .fit import FitConfig, FitTrace, distill_fit
from .geometry import (
    BevSpec,
    Box3D,
    CameraModel,
    PointCloud,
    backproject_pixel,
    bev_world_to_grid,
    enlarge_box_bev,
    points_in_box,
    project_points,
)
from .gradcheck import finite_diff_check
from .losses import LossReport, LossWeights, evaluate, total_grad, total_loss
from .metrics import DepthMetricReport, depth_metrics
from .synthetic import Scene, SceneSpec, StudentState, gen_scene, gen_teacher_bev, init_student_state

__version__ = "0.1.0"

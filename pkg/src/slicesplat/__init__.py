"""Time-conditioned 2D Gaussian splatting for grayscale slice stacks.

The library models a stack of parallel slices as a set of folded
gaussians (2D gaussians whose mean and covariance are polynomial
functions of time), fits them by gradient descent with in-between-frame
regularization, and uses the fitted scene for frame interpolation,
isosurface meshing and declarative geometric editing.
"""

from .core import (
    ConditionedGaussian,
    FoldedGaussian,
    Scene,
    condition_at_time,
    cov_from_params,
    eval_density,
    poly_eval,
)
from .edit import ControlTriangle, EditSpec, apply_edits, control_points, \
    gaussian_from_control_points
from .evaluate import leave_frame_out, linear_baseline
from .io import FrameStack, load_frame_stack, load_scene, read_pgm, \
    save_scene, subsample, write_pgm
from .mesh import ScalarVolume, TriMesh, chamfer, hausdorff, hd95, \
    marching_cubes, read_obj, render_volume, sample_surface, write_obj
from .metrics import MetricReport, dice, evaluate_frames, iou, psnr
from .render import GradientBuffer, cull, render_frame, render_with_grad
from .ssim import ssim
from .train import AdamState, FramePair, TrainConfig, adam_step, \
    densify_and_prune, ibfr_sample, loss_interp, loss_mesh, loss_sigma, train

__version__ = "0.1.0"

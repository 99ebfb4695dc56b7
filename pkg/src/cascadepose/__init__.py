"""Cascade-transformer pose recognition: person detection transformer,
differentiable cropping, keypoint detection transformer, Hungarian readout."""

from .cascade import (BoundingBox, CascadeModel, CropTransform, PoseInstance,
                      detect_persons, flip_test_average, full_pipeline,
                      grid_sample, make_grid, readout_keypoints)
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .estimator import CascadePoseEstimator
from .matcher import brute_force_match, cost_infer, cost_train, hungarian_solve
from .metrics import OksParams, coco_ap, oks, pck
from .nn import ModelConfig
from .tensor import Tensor

__all__ = [
    "BoundingBox", "CascadeModel", "CascadePoseEstimator", "ConfigError",
    "ContractError", "CropTransform", "DimensionError", "ModelConfig",
    "NumericError", "OksParams", "PoseInstance", "Tensor",
    "brute_force_match", "coco_ap", "cost_infer", "cost_train",
    "detect_persons", "flip_test_average", "full_pipeline", "grid_sample",
    "hungarian_solve", "make_grid", "oks", "pck", "readout_keypoints",
]

__version__ = "0.1.0"

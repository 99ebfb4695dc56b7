"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .cascade import BoundingBox, PoseInstance
from .data import Dataset, Sample
from .errors import ContractError


def check_image(x):
    """Coerce an image to [3, H, W] float64 in [0, 1]."""
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ContractError(f"image must be 3-D, got shape {arr.shape}")
    if arr.shape[-1] == 3 and arr.shape[0] != 3:
        arr = arr.transpose(2, 0, 1)
    if arr.shape[0] != 3:
        raise ContractError(f"image must have 3 channels, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
        raise ContractError("image values must lie in [0, 1] (or be uint8)")
    return arr


def check_instance(y, n_joints):
    """Coerce one annotation (PoseInstance or dict) to a PoseInstance."""
    if isinstance(y, PoseInstance):
        inst = y
    elif isinstance(y, dict):
        box = y["box"]
        if not isinstance(box, BoundingBox):
            box = BoundingBox(*box)
        inst = PoseInstance(
            box=box,
            keypoints=np.asarray(y["keypoints"], dtype=np.float64),
            visibility=np.asarray(y.get("visibility", np.ones(n_joints, dtype=bool))),
        )
    else:
        raise ContractError(f"cannot interpret annotation of type {type(y).__name__}")
    if len(inst.visibility) != n_joints:
        raise ContractError(
            f"expected {n_joints} joints, got {len(inst.visibility)}")
    return inst


def build_dataset(X, y, n_joints, joint_names=None, swap_pairs=None):
    """Assemble a Dataset from parallel lists of images and annotations."""
    if len(X) != len(y):
        raise ContractError(f"X and y lengths differ: {len(X)} vs {len(y)}")
    if joint_names is None:
        joint_names = [f"kp_{j}" for j in range(n_joints)]
    if swap_pairs is None:
        swap_pairs = np.arange(n_joints)
    samples = []
    for i, (img, anns) in enumerate(zip(X, y)):
        samples.append(Sample(
            image=check_image(img),
            instances=[check_instance(a, n_joints) for a in anns],
            name=f"sample_{i:05d}"))
    return Dataset(samples=samples, joint_names=list(joint_names),
                   swap_pairs=np.asarray(swap_pairs))

"""Decoder-layer visualization: per-layer query snapshots, stacked Gaussian
probability maps, and the Hungarian-selected keypoint trajectory."""

from __future__ import annotations

import numpy as np
from PIL import Image

from . import cascade
from . import tensor as T
from .cascade import CropTransform
from .errors import ContractError
from .tensor import Tensor


def layer_snapshots(model, image, person_index=0, gt_boxes=None):
    """Keypoint-stage predictions for one person at every decoder depth.

    Layer 0 is the initial query embedding pushed through the heads; layers
    1..n are the decoder states. Returns (snapshots, crop transform) where
    each snapshot holds class probabilities [Q, J+1] and crop-frame
    coordinates [Q, 2].
    """
    cfg = model.config
    with T.no_grad():
        if gt_boxes is not None:
            detections = [(1.0, b.clamped(), -1) for b in gt_boxes]
            out = model.person_forward(image) if cfg.variant == "end_to_end" else None
        else:
            detections, out = cascade.detect_persons(model, image)
        if person_index >= len(detections):
            raise ContractError(
                f"person index {person_index} out of range ({len(detections)} detected)")
        _, box, _ = detections[person_index]
        if cfg.variant == "end_to_end":
            layers, used_box = model.keypoint_forward_box(
                out["maps"], Tensor(np.asarray(box.corners())))
            xl, xr, yt, yd = used_box.data.tolist()
            transform = CropTransform.from_box(cascade.BoundingBox(xl, xr, yt, yd))
        else:
            patch, transform = cascade.crop_image_twostage(
                np.asarray(image, dtype=cfg.np_dtype), box,
                cfg.patch_h / cfg.patch_w, (cfg.patch_h, cfg.patch_w))
            layers = model.keypoint_forward_patch(patch)
        initial = model.kp_head(model.kp_queries())
        snapshots = []
        for layer_idx, (logits, coords) in enumerate([initial] + list(layers)):
            snapshots.append({
                "layer": layer_idx,
                "probs": cascade._np_softmax(logits.data.astype(np.float64)),
                "coords": coords.data.astype(np.float64).copy(),
            })
    return snapshots, transform


def gaussian_map(probs, coords_px, size, sigma, stack="max"):
    """Stack per-query Gaussians (peak = class probability) into one map.

    ``probs``: [Q] probability of the chosen class; ``coords_px``: [Q, 2]
    pixel coordinates; ``stack``: "max" (default) or "sum" across queries.
    """
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    centers = np.asarray(coords_px, dtype=np.float64)
    heat = np.zeros((h, w))
    for p, (cx, cy) in zip(np.asarray(probs), centers):
        g = p * np.exp(-(((xs + 0.5 - cx) ** 2) + ((ys + 0.5 - cy) ** 2)) / (2 * sigma**2))
        heat = np.maximum(heat, g) if stack == "max" else heat + g
    return heat


def render_heatmap(heat, path):
    scaled = np.clip(heat / max(heat.max(), 1e-9), 0, 1)
    rgb = np.stack([scaled, scaled**2, scaled**3], axis=-1)  # warm ramp
    Image.fromarray((rgb * 255).round().astype(np.uint8)).save(path)


def keypoint_trajectory(snapshots, transform, exclude_background=True,
                        class_specific=False):
    """Track each finally-selected query's prediction across all layers."""
    final = snapshots[-1]
    _, _, sigma = cascade.readout_keypoints(
        np.log(np.clip(final["probs"], 1e-12, None)), final["coords"], transform,
        exclude_background=exclude_background, class_specific=class_specific)
    n_joints = final["probs"].shape[1] - 1
    traj = []
    for j in range(n_joints):
        q = int(sigma[j])
        points = [transform.apply(s["coords"][q]).tolist() for s in snapshots]
        probs = [float(s["probs"][q, j]) for s in snapshots]
        traj.append({"joint": j, "query": q, "points": points, "probs": probs})
    return traj

"""Dataset ingestion (COCO keypoint schema), synthetic stick-figure corpus
generation, and training augmentation.

Keypoints are stored normalized to [0, 1] by the image extent. The synthetic
corpus uses J=5 joints: head, left_hand, right_hand, left_foot, right_foot,
with "left" meaning the smaller-x hand/foot at render time so that flip
label-swapping stays consistent with appearance.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import tensor as T
from .cascade import BoundingBox, PoseInstance
from .errors import ContractError
from .tensor import Tensor

SYNTH_JOINTS = ["head", "left_hand", "right_hand", "left_foot", "right_foot"]
SYNTH_SWAP = np.array([0, 2, 1, 4, 3])

COCO_JOINTS = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]
COCO_SWAP = np.array([0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15])


@dataclass
class Sample:
    image: np.ndarray  # [3, H, W] float in [0, 1]
    instances: list
    name: str = ""


@dataclass
class Dataset:
    samples: list
    joint_names: list
    swap_pairs: np.ndarray
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        swap = np.asarray(self.swap_pairs)
        if not np.array_equal(swap[swap], np.arange(len(swap))):
            raise ContractError("swap pairs must form an involution")

    def __len__(self):
        return len(self.samples)


def load_coco_keypoints(annotation_path, image_root, treat_labeled_as_visible=True):
    """Load a COCO-format keypoint annotation file.

    Instances with zero visible keypoints are dropped. Missing image files
    are collected in ``Dataset.skipped`` rather than raised.
    """
    with open(annotation_path, "rb") as f:
        raw = f.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ContractError(
            f"malformed annotation file {annotation_path} at byte offset {e.pos}: {e.msg}"
        ) from e
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise ContractError(f"annotation file missing {key!r} section")
    cat = doc["categories"][0]
    joint_names = cat.get("keypoints", COCO_JOINTS)
    n_joints = len(joint_names)
    swap = _swap_from_names(joint_names)
    images = {im["id"]: im for im in doc["images"]}
    per_image = {im_id: [] for im_id in images}
    for ann in doc["annotations"]:
        kps = np.asarray(ann["keypoints"], dtype=np.float64).reshape(n_joints, 3)
        vis_threshold = 1 if treat_labeled_as_visible else 2
        vis = kps[:, 2] >= vis_threshold
        if not vis.any():
            continue  # person without visible keypoints
        im = images[ann["image_id"]]
        w, h = im["width"], im["height"]
        bx, by, bw, bh = ann["bbox"]
        try:
            box = BoundingBox(bx / w, (bx + bw) / w, by / h, (by + bh) / h)
        except ContractError:
            continue
        per_image[ann["image_id"]].append(PoseInstance(
            box=box,
            keypoints=np.stack([kps[:, 0] / w, kps[:, 1] / h], axis=1),
            visibility=vis,
        ))
    samples = []
    skipped = []
    for im_id, im in images.items():
        path = os.path.join(image_root, im["file_name"])
        if not os.path.exists(path):
            skipped.append(im["file_name"])
            continue
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        samples.append(Sample(image=arr.transpose(2, 0, 1), instances=per_image[im_id],
                              name=im["file_name"]))
    return Dataset(samples=samples, joint_names=list(joint_names), swap_pairs=swap,
                   skipped=skipped)


def _swap_from_names(names):
    swap = np.arange(len(names))
    for i, name in enumerate(names):
        if name.startswith("left_"):
            partner = "right_" + name[5:]
            if partner in names:
                swap[i] = names.index(partner)
                swap[names.index(partner)] = i
    return swap


# -- synthetic corpus -----------------------------------------------------


def _paint_disk(canvas, cx, cy, radius, color):
    h, w, _ = canvas.shape
    x0 = max(int(np.floor(cx - radius)), 0)
    x1 = min(int(np.ceil(cx + radius)) + 1, w)
    y0 = max(int(np.floor(cy - radius)), 0)
    y1 = min(int(np.ceil(cy + radius)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    mask = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= radius**2
    canvas[y0:y1, x0:x1][mask] = color


def _paint_segment(canvas, p0, p1, radius, color):
    n = int(np.ceil(np.hypot(p1[0] - p0[0], p1[1] - p0[1]) * 2)) + 2
    for t in np.linspace(0.0, 1.0, n):
        _paint_disk(canvas, p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]),
                    radius, color)


def _render_figure(canvas, rng, size):
    """One articulated stick figure; returns (keypoints [5,2] px, points for bbox)."""
    s = size * rng.uniform(0.22, 0.38)  # body scale in pixels
    cx = rng.uniform(0.25 * size, 0.75 * size)
    cy = rng.uniform(0.3 * size, 0.7 * size)
    neck = np.array([cx, cy - 0.45 * s])
    hip = np.array([cx, cy + 0.25 * s])
    head = neck + np.array([0.0, -0.28 * s])
    limb = 0.55 * s

    def limb_end(origin, base_angle, jitter):
        ang = base_angle + rng.uniform(-jitter, jitter)
        return origin + limb * np.array([np.cos(ang), np.sin(ang)])

    hand_a = limb_end(neck, np.deg2rad(150), np.deg2rad(35))
    hand_b = limb_end(neck, np.deg2rad(30), np.deg2rad(35))
    foot_a = limb_end(hip, np.deg2rad(115), np.deg2rad(20))
    foot_b = limb_end(hip, np.deg2rad(65), np.deg2rad(20))
    left_hand, right_hand = sorted([hand_a, hand_b], key=lambda p: p[0])
    left_foot, right_foot = sorted([foot_a, foot_b], key=lambda p: p[0])

    white = np.array([0.9, 0.9, 0.85])
    _paint_segment(canvas, neck, hip, 1.2, white)
    for end in (left_hand, right_hand):
        _paint_segment(canvas, neck, end, 1.0, white)
    for end in (left_foot, right_foot):
        _paint_segment(canvas, hip, end, 1.0, white)
    _paint_disk(canvas, head[0], head[1], 0.16 * s, np.array([0.1, 0.85, 0.2]))
    for p in (left_hand, right_hand):
        _paint_disk(canvas, p[0], p[1], 1.8, np.array([0.15, 0.35, 0.95]))
    for p in (left_foot, right_foot):
        _paint_disk(canvas, p[0], p[1], 1.8, np.array([0.95, 0.2, 0.25]))

    kps = np.stack([head, left_hand, right_hand, left_foot, right_foot])
    extremes = np.vstack([kps, neck[None, :], hip[None, :]])
    return kps, extremes


def synth_stickfigures(n_images, seed, size=64, max_people=3):
    """Deterministic synthetic corpus: 1..max_people figures per image."""
    rng = np.random.default_rng(seed)
    samples = []
    for idx in range(n_images):
        canvas = np.full((size, size, 3), 0.12)
        canvas += rng.uniform(0, 0.03, size=(size, size, 3))  # mild noise floor
        n_people = int(rng.integers(1, max_people + 1))
        instances = []
        for _ in range(n_people):
            kps, extremes = _render_figure(canvas, rng, size)
            margin = 2.5
            xl = max((extremes[:, 0].min() - margin) / size, 0.0)
            xr = min((extremes[:, 0].max() + margin) / size, 1.0)
            yt = max((extremes[:, 1].min() - margin) / size, 0.0)
            yd = min((extremes[:, 1].max() + margin) / size, 1.0)
            instances.append(PoseInstance(
                box=BoundingBox(xl, xr, yt, yd),
                keypoints=kps / size,
                visibility=np.ones(5, dtype=bool),
            ))
        samples.append(Sample(image=np.clip(canvas, 0, 1).transpose(2, 0, 1),
                              name=f"synth_{idx:05d}.png", instances=instances))
    return Dataset(samples=samples, joint_names=list(SYNTH_JOINTS), swap_pairs=SYNTH_SWAP)


def write_corpus(dataset, out_dir):
    """Write a dataset as COCO-schema annotations plus an image directory."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    images, annotations = [], []
    ann_id = 1
    for i, sample in enumerate(dataset.samples):
        arr = (sample.image.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
        h, w = arr.shape[:2]
        Image.fromarray(arr).save(os.path.join(img_dir, sample.name))
        images.append({"id": i + 1, "file_name": sample.name, "width": w, "height": h})
        for inst in sample.instances:
            kps = []
            for (x, y), v in zip(inst.keypoints, inst.visibility):
                kps.extend([x * w, y * h, 2 if v else 0])
            annotations.append({
                "id": ann_id,
                "image_id": i + 1,
                "category_id": 1,
                "bbox": [inst.box.x_left * w, inst.box.y_top * h,
                         inst.box.width * w, inst.box.height * h],
                "keypoints": kps,
                "num_keypoints": int(inst.visibility.sum()),
            })
            ann_id += 1
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person", "keypoints": dataset.joint_names,
                        "skeleton": []}],
    }
    ann_path = os.path.join(out_dir, "annotations.json")
    with open(ann_path, "w") as f:
        json.dump(doc, f)
    return ann_path


# -- augmentation ---------------------------------------------------------


def warp_affine(image, matrix, out_shape=None):
    """Resample ``image`` [C,H,W] through the normalized-coordinate affine
    (output -> input) ``matrix`` (2x3), bilinear, zero padding."""
    c, h, w = image.shape
    oh, ow = out_shape or (h, w)
    us = (np.arange(ow) + 0.5) / ow
    vs = (np.arange(oh) + 0.5) / oh
    uu, vv = np.meshgrid(us, vs)
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    src = pts @ matrix[:, :2].T + matrix[:, 2]
    with T.no_grad():
        out = T.bilinear_sample(Tensor(image), Tensor(src[:, 0] * w - 0.5),
                                Tensor(src[:, 1] * h - 0.5)).data
    return out.reshape(c, oh, ow)


def augmentation_matrix(rotation_deg, scale, flip, center=(0.5, 0.5)):
    """Forward affine (input coords -> augmented coords) about ``center``."""
    ang = np.deg2rad(rotation_deg)
    ca, sa = np.cos(ang), np.sin(ang)
    lin = scale * np.array([[ca, -sa], [sa, ca]])
    if flip:
        lin = lin @ np.diag([-1.0, 1.0])
    cvec = np.asarray(center, dtype=np.float64)
    offset = cvec - lin @ cvec
    return np.hstack([lin, offset[:, None]])


def augment(sample, swap_pairs, seed, max_rotation=40.0, scale_range=(0.7, 1.3),
            allow_flip=True):
    """Random rotation, isotropic scale and horizontal flip, applied
    consistently to pixels and keypoint coordinates."""
    rng = np.random.default_rng(seed)
    rot = rng.uniform(-max_rotation, max_rotation)
    sc = rng.uniform(*scale_range)
    flip = bool(allow_flip and rng.random() < 0.5)
    fwd = augmentation_matrix(rot, sc, flip)
    inv_lin = np.linalg.inv(fwd[:, :2])
    inv = np.hstack([inv_lin, (-inv_lin @ fwd[:, 2])[:, None]])
    image = warp_affine(sample.image, inv)
    instances = []
    for inst in sample.instances:
        kp = inst.keypoints @ fwd[:, :2].T + fwd[:, 2]
        vis = inst.visibility
        if flip:
            kp = kp[swap_pairs]
            vis = vis[swap_pairs]
        corners = np.array([[inst.box.x_left, inst.box.y_top],
                            [inst.box.x_right, inst.box.y_top],
                            [inst.box.x_left, inst.box.y_down],
                            [inst.box.x_right, inst.box.y_down]])
        tc = corners @ fwd[:, :2].T + fwd[:, 2]
        instances.append(PoseInstance(
            box=BoundingBox(tc[:, 0].min(), tc[:, 0].max(), tc[:, 1].min(), tc[:, 1].max()),
            keypoints=kp, visibility=vis.copy(), scores=inst.scores.copy(),
            person_score=inst.person_score))
    return Sample(image=image, instances=instances, name=sample.name)

"""Composition of the two transformers: person detection, crop generation,
differentiable multi-scale sampling, keypoint detection, Hungarian readout
and flip-test averaging.

All coordinates are normalized to [0, 1] by the image extent, with pixel i
centered at (i + 0.5) / W. Boxes are corner-form (x_left, x_right, y_top,
y_down).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matcher, nn
from . import tensor as T
from .errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass
class BoundingBox:
    x_left: float
    x_right: float
    y_top: float
    y_down: float

    def __post_init__(self):
        if not (self.x_left < self.x_right and self.y_top < self.y_down):
            raise ContractError(f"degenerate box {self.corners()}")

    def corners(self):
        return (self.x_left, self.x_right, self.y_top, self.y_down)

    @classmethod
    def from_cxcywh(cls, cx, cy, w, h):
        return cls(cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2)

    def to_cxcywh(self):
        return ((self.x_left + self.x_right) / 2, (self.y_top + self.y_down) / 2,
                self.x_right - self.x_left, self.y_down - self.y_top)

    @property
    def width(self):
        return self.x_right - self.x_left

    @property
    def height(self):
        return self.y_down - self.y_top

    @property
    def area(self):
        return self.width * self.height

    def clamped(self):
        xl = min(max(self.x_left, 0.0), 1.0)
        xr = min(max(self.x_right, 0.0), 1.0)
        yt = min(max(self.y_top, 0.0), 1.0)
        yd = min(max(self.y_down, 0.0), 1.0)
        if xl >= xr or yt >= yd:
            raise ContractError(f"box {self.corners()} lies outside the image")
        return BoundingBox(xl, xr, yt, yd)

    def enlarged(self, factor):
        cx, cy, w, h = self.to_cxcywh()
        w *= 1.0 + factor
        h *= 1.0 + factor
        return BoundingBox.from_cxcywh(cx, cy, w, h)

    def iou(self, other):
        ix = max(0.0, min(self.x_right, other.x_right) - max(self.x_left, other.x_left))
        iy = max(0.0, min(self.y_down, other.y_down) - max(self.y_top, other.y_top))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


@dataclass
class PoseInstance:
    box: BoundingBox
    keypoints: np.ndarray  # [J, 2] normalized image coordinates
    visibility: np.ndarray  # [J] bool
    scores: np.ndarray = None  # [J] per-keypoint scores
    person_score: float = 1.0

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.keypoints.shape != (self.visibility.shape[0], 2):
            raise ContractError(
                f"keypoints {self.keypoints.shape} inconsistent with visibility {self.visibility.shape}")
        if self.scores is None:
            self.scores = np.ones(len(self.visibility))
        self.scores = np.asarray(self.scores, dtype=np.float64)


@dataclass
class CropTransform:
    """Affine map from crop-frame coordinates (u, v in [0,1]) to image frame."""

    matrix: np.ndarray  # 2x3, [x; y] = M @ [u, v, 1]

    @classmethod
    def from_box(cls, box):
        return cls(np.array([[box.width, 0.0, box.x_left],
                             [0.0, box.height, box.y_top]]))

    def apply(self, uv):
        uv = np.asarray(uv, dtype=np.float64)
        return uv @ self.matrix[:, :2].T + self.matrix[:, 2]

    def invert(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        inv = np.linalg.inv(self.matrix[:, :2])
        return (xy - self.matrix[:, 2]) @ inv.T


@dataclass
class CropGrid:
    xs: object  # [w] tensor, normalized image x of sample columns
    ys: object  # [h] tensor, normalized image y of sample rows
    w: int
    h: int


def _as_box_tensor(box):
    if isinstance(box, Tensor):
        return box
    return Tensor(np.asarray(box.corners() if isinstance(box, BoundingBox) else box,
                             dtype=np.float64))


def make_grid(box, w, h, align_corners=False):
    """Sample grid for a box: x_i = ((w-i)/w) x_left + (i/w) x_right.

    With ``align_corners`` the denominator is w-1 so the last sample reaches
    x_right exactly. ``box`` may be a 4-tensor for the differentiable path.
    """
    if w < 1 or h < 1:
        raise ContractError(f"grid size {w}x{h} invalid")
    b = _as_box_tensor(box)
    if float(b.data[0]) >= float(b.data[1]) or float(b.data[2]) >= float(b.data[3]):
        raise ContractError(f"degenerate box {b.data.tolist()}")
    tx = np.arange(w) / (w - 1 if align_corners and w > 1 else w)
    ty = np.arange(h) / (h - 1 if align_corners and h > 1 else h)
    xs = b[0] * (1.0 - tx) + b[1] * tx
    ys = b[2] * (1.0 - ty) + b[3] * ty
    return CropGrid(xs=xs, ys=ys, w=w, h=h)


def grid_sample(u, grid):
    """Bilinear sampling of feature map ``u`` [C,Hf,Wf] at the grid, -> [C,h,w].

    Grid coordinates are normalized; the scaling into source pixel
    coordinates (center convention: px = x * Wf - 0.5) happens here.
    """
    _, hf, wf = u.shape
    col = np.tile(np.arange(grid.w), grid.h)
    row = np.repeat(np.arange(grid.h), grid.w)
    gx = T.gather(grid.xs * float(wf) - 0.5, col)
    gy = T.gather(grid.ys * float(hf) - 0.5, row)
    sampled = T.bilinear_sample(u, gx, gy)
    return T.reshape(sampled, (u.shape[0], grid.h, grid.w))


def enlarge_and_clamp(box_t, factor):
    """Differentiable enlarge-about-center then clamp to the unit image."""
    cx = (box_t[0] + box_t[1]) * 0.5
    cy = (box_t[2] + box_t[3]) * 0.5
    hw = (box_t[1] - box_t[0]) * (0.5 * (1.0 + factor))
    hh = (box_t[3] - box_t[2]) * (0.5 * (1.0 + factor))
    xl = T.maximum(cx - hw, 0.0)
    xr = T.minimum(cx + hw, 1.0)
    yt = T.maximum(cy - hh, 0.0)
    yd = T.minimum(cy + hh, 1.0)
    return T.stack([xl, xr, yt, yd])


def crop_features_multiscale(maps, box_t, enlarge_factor, w, h, align_corners=False):
    """Enlarge + clamp the box, sample every map on one grid, concat channels."""
    box_t = enlarge_and_clamp(_as_box_tensor(box_t), enlarge_factor)
    if float(box_t.data[0]) >= float(box_t.data[1]) or float(box_t.data[2]) >= float(box_t.data[3]):
        raise ContractError("box lies fully outside the image")
    grid = make_grid(box_t, w, h, align_corners=align_corners)
    pieces = [grid_sample(m, grid) for m in maps]
    return T.concat(pieces, axis=0), box_t


def crop_image_twostage(image, box, aspect, target_size, rotation=0.0, scale=1.0, flip=False):
    """Crop an image patch for the two-stage variant.

    The box is symmetrically extended along one axis to ``aspect`` (h/w),
    optionally rotated/scaled/flipped about its center, then resampled to
    ``target_size`` (h, w) pixels. Returns (patch [3,h,w], CropTransform).
    """
    box = extend_to_aspect(box, aspect)
    th, tw = target_size
    cx, cy, bw, bh = box.to_cxcywh()
    ang = np.deg2rad(rotation)
    ca, sa = np.cos(ang), np.sin(ang)
    sx = bw * scale * (-1.0 if flip else 1.0)
    sy = bh * scale
    # crop frame (u,v) in [0,1] -> center at 0.5; rotate/scale about center
    rot = np.array([[ca, -sa], [sa, ca]])
    lin = rot @ np.diag([sx, sy])
    offset = np.array([cx, cy]) - lin @ np.array([0.5, 0.5])
    transform = CropTransform(np.hstack([lin, offset[:, None]]))
    _, ih, iw = image.shape
    us = (np.arange(tw) + 0.5) / tw
    vs = (np.arange(th) + 0.5) / th
    uu, vv = np.meshgrid(us, vs)
    xy = transform.apply(np.stack([uu.ravel(), vv.ravel()], axis=1))
    with T.no_grad():
        patch = T.bilinear_sample(Tensor(image), Tensor(xy[:, 0] * iw - 0.5),
                                  Tensor(xy[:, 1] * ih - 0.5)).data
    return patch.reshape(image.shape[0], th, tw), transform


def extend_to_aspect(box, aspect):
    """Symmetrically extend the shorter side so height/width == aspect."""
    cx, cy, w, h = box.to_cxcywh()
    if h / w < aspect:
        h = w * aspect
    else:
        w = h / aspect
    return BoundingBox.from_cxcywh(cx, cy, w, h)


def generalized_iou_matrix(boxes_a, boxes_b):
    """GIoU between corner-form box arrays [N,4] and [M,4] -> [N,M]."""
    a = np.asarray(boxes_a, dtype=np.float64)
    b = np.asarray(boxes_b, dtype=np.float64)
    ax1, ax2, ay1, ay2 = a[:, 0:1], a[:, 1:2], a[:, 2:3], a[:, 3:4]
    bx1, bx2, by1, by2 = b[None, :, 0], b[None, :, 1], b[None, :, 2], b[None, :, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    hull = (np.maximum(ax2, bx2) - np.minimum(ax1, bx1)) * (np.maximum(ay2, by2) - np.minimum(ay1, by1))
    return iou - np.where(hull > 0, (hull - union) / np.where(hull > 0, hull, 1.0), 0.0)


def cxcywh_to_corners(cxcywh):
    c = np.asarray(cxcywh, dtype=np.float64)
    return np.stack([c[..., 0] - c[..., 2] / 2, c[..., 0] + c[..., 2] / 2,
                     c[..., 1] - c[..., 3] / 2, c[..., 1] + c[..., 3] / 2], axis=-1)


class CascadeModel(nn.Module):
    """Person-detection transformer -> crop -> keypoint-detection transformer."""

    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config
        dtype = config.np_dtype
        rng = np.random.default_rng(seed)
        c0, c1, c2, c3 = config.backbone_channels
        self.backbone = nn.Backbone(config, rng, dtype)
        self.person_proj = nn.Linear(c3, config.d_model, rng, dtype)
        self.person_encoder = nn.Encoder(config, rng, dtype)
        self.person_decoder = nn.Decoder(config, rng, dtype)
        self.person_queries = nn.QueryEmbedding(config.n_person_queries, config.d_model, rng, dtype)
        self.person_head = nn.PredictionHead(config, "person", rng, dtype)
        if config.variant == "end_to_end":
            self.kp_proj = nn.Linear(c1 + c2 + c3, config.d_model, rng, dtype)
        else:
            self.kp_backbone = nn.Backbone(config, rng, dtype)
            self.kp_proj = nn.Linear(c3, config.d_model, rng, dtype)
        self.kp_encoder = nn.Encoder(config, rng, dtype)
        self.kp_decoder = nn.Decoder(config, rng, dtype)
        self.kp_queries = nn.QueryEmbedding(config.n_keypoint_queries, config.d_model, rng, dtype)
        self.kp_head = nn.PredictionHead(config, "keypoint", rng, dtype)

    # -- person stage -----------------------------------------------------

    def person_forward(self, image):
        """Full-image forward. Returns backbone maps and per-layer person preds."""
        if not isinstance(image, Tensor):
            image = Tensor(np.asarray(image, dtype=self.config.np_dtype))
        maps = self.backbone(image)
        feat = maps[2]
        c, h, w = feat.shape
        tokens = T.transpose(T.reshape(feat, (c, h * w)))  # [HW, C]
        pe = nn.positional_encoding_2d(h, w, self.config.d_model).reshape(h * w, -1)
        x = self.person_proj(tokens) + pe.astype(self.config.np_dtype)
        memory = self.person_encoder(x)
        states = self.person_decoder(self.person_queries(), memory)
        layer_preds = [self.person_head(s) for s in states]
        return {"maps": maps, "memory": memory, "layers": layer_preds}

    def keypoint_forward(self, crop_feat, n_tokens_hw):
        """Keypoint transformer over projected crop features [C,h,w]."""
        h, w = n_tokens_hw
        c = crop_feat.shape[0]
        tokens = T.transpose(T.reshape(crop_feat, (c, h * w)))
        pe = nn.positional_encoding_2d(h, w, self.config.d_model).reshape(h * w, -1)
        x = self.kp_proj(tokens) + pe.astype(self.config.np_dtype)
        memory = self.kp_encoder(x)
        states = self.kp_decoder(self.kp_queries(), memory)
        return [self.kp_head(s) for s in states]

    def keypoint_forward_box(self, maps, box_t):
        """End-to-end path: multi-scale STN crop of backbone maps inside box."""
        cfg = self.config
        crop, used_box = crop_features_multiscale(
            maps, box_t, cfg.enlarge_factor, cfg.crop_w, cfg.crop_h,
            align_corners=cfg.align_corners)
        crop = Tensor(crop.data.astype(cfg.np_dtype)) if not crop.requires_grad else crop
        return self.keypoint_forward(crop, (cfg.crop_h, cfg.crop_w)), used_box

    def keypoint_forward_patch(self, patch):
        """Two-stage path: dedicated backbone over an RGB patch."""
        if not isinstance(patch, Tensor):
            patch = Tensor(np.asarray(patch, dtype=self.config.np_dtype))
        maps = self.kp_backbone(patch)
        feat = maps[2]
        return self.keypoint_forward(feat, feat.shape[1:])


# -- inference operations -------------------------------------------------


def detect_persons(model, image, threshold=None):
    """Run the person stage; return (instances above threshold, raw final preds)."""
    cfg = model.config
    threshold = cfg.person_threshold if threshold is None else threshold
    out = model.person_forward(image)
    logits, boxes = out["layers"][-1]
    probs = _np_softmax(logits.data.astype(np.float64))
    detections = []
    for q in range(cfg.n_person_queries):
        score = float(probs[q, 0])
        if score >= threshold:
            xl, xr, yt, yd = cxcywh_to_corners(boxes.data[q].astype(np.float64))
            try:
                detections.append((score, BoundingBox(xl, xr, yt, yd).clamped(), q))
            except ContractError:
                continue
    detections.sort(key=lambda d: (-d[0], d[2]))
    return detections, out


def readout_keypoints(class_logits, coords, transform, exclude_background=True,
                      class_specific=False):
    """Hungarian readout: one query per joint class, mapped to image frame."""
    logits = np.asarray(class_logits, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    n_classes = logits.shape[1]
    n_joints = n_classes - 1
    probs = _np_softmax(logits)
    if class_specific:
        sigma = np.arange(n_joints)
    else:
        cost = matcher.cost_infer(np.arange(n_joints), probs,
                                  exclude_background=exclude_background)
        sigma = matcher.hungarian_solve(cost).assignment
    sel = coords[sigma]
    kp = transform.apply(sel)
    scores = probs[sigma, np.arange(n_joints)]
    return kp, scores, sigma


def full_pipeline(model, image, threshold=None, gt_boxes=None, exclude_background=None):
    """Detect persons, crop per person, detect keypoints, read out skeletons."""
    cfg = model.config
    if exclude_background is None:
        exclude_background = cfg.exclude_background_at_readout
    with T.no_grad():
        if gt_boxes is not None:
            out = model.person_forward(image) if cfg.variant == "end_to_end" else None
            detections = [(1.0, b.clamped(), -1) for b in gt_boxes]
        else:
            detections, out = detect_persons(model, image, threshold=threshold)
        instances = []
        for score, box, _q in detections:
            if cfg.variant == "end_to_end":
                layers, used_box = model.keypoint_forward_box(
                    out["maps"], Tensor(np.asarray(box.corners())))
                xl, xr, yt, yd = used_box.data.tolist()
                transform = CropTransform.from_box(BoundingBox(xl, xr, yt, yd))
            else:
                patch, transform = crop_image_twostage(
                    np.asarray(image, dtype=cfg.np_dtype), box,
                    cfg.patch_h / cfg.patch_w, (cfg.patch_h, cfg.patch_w))
                layers = model.keypoint_forward_patch(patch)
            logits, coords = layers[-1]
            kp, kp_scores, _ = readout_keypoints(
                logits.data, coords.data, transform,
                exclude_background=exclude_background,
                class_specific=cfg.class_specific_queries)
            instances.append(PoseInstance(
                box=box, keypoints=kp, visibility=np.ones(cfg.n_joints, dtype=bool),
                scores=kp_scores, person_score=score))
    return instances


# -- flip test ------------------------------------------------------------


def mirror_image(image):
    return np.ascontiguousarray(np.asarray(image)[:, :, ::-1])


def mirror_box(box):
    return BoundingBox(1.0 - box.x_right, 1.0 - box.x_left, box.y_top, box.y_down)


def mirror_instance(inst, swap):
    """Mirror x coordinates and permute left/right joint classes."""
    perm = np.asarray(swap, dtype=np.intp)
    kp = inst.keypoints[perm].copy()
    kp[:, 0] = 1.0 - kp[:, 0]
    return PoseInstance(
        box=mirror_box(inst.box),
        keypoints=kp,
        visibility=inst.visibility[perm].copy(),
        scores=inst.scores[perm].copy(),
        person_score=inst.person_score,
    )


def _average_instances(a, b):
    return PoseInstance(
        box=BoundingBox((a.box.x_left + b.box.x_left) / 2, (a.box.x_right + b.box.x_right) / 2,
                        (a.box.y_top + b.box.y_top) / 2, (a.box.y_down + b.box.y_down) / 2),
        keypoints=(a.keypoints + b.keypoints) / 2,
        visibility=a.visibility & b.visibility,
        scores=(a.scores + b.scores) / 2,
        person_score=(a.person_score + b.person_score) / 2,
    )


def flip_test_average(image, pipeline, swap, mirror_pipeline=None):
    """Average pipeline outputs on the image and its horizontal mirror.

    The merge pairs instances across the two branches by optimal matching on
    box-center distance and is symmetric in its arguments, so the whole
    operation commutes with mirroring by construction. When the pipeline
    carries image-frame state that must flip with the image (ground-truth
    boxes), pass a ``mirror_pipeline`` holding the mirrored state; it runs on
    the mirrored image and defaults to ``pipeline``.
    """
    swap = np.asarray(swap, dtype=np.intp)
    if not np.array_equal(swap[swap], np.arange(len(swap))):
        raise ConfigError("left/right swap permutation must be an involution")
    if mirror_pipeline is None:
        mirror_pipeline = pipeline
    branch_a = list(pipeline(image))
    branch_b = [mirror_instance(p, swap)
                for p in mirror_pipeline(mirror_image(image))]
    merged = _merge_branches(branch_a, branch_b)
    merged.sort(key=lambda p: (-p.person_score, round(p.keypoints[:, 0].mean(), 9),
                               round(p.keypoints[:, 1].mean(), 9)))
    return merged


def _merge_branches(a, b):
    if not a or not b:
        return list(a) + list(b)
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    centers_s = np.array([[(p.box.x_left + p.box.x_right) / 2,
                           (p.box.y_top + p.box.y_down) / 2] for p in small])
    centers_l = np.array([[(p.box.x_left + p.box.x_right) / 2,
                           (p.box.y_top + p.box.y_down) / 2] for p in large])
    cost = matcher.CostMatrix(
        np.linalg.norm(centers_s[:, None, :] - centers_l[None, :, :], axis=2), mode="infer")
    sigma = matcher.hungarian_solve(cost).assignment
    merged = [_average_instances(small[i], large[sigma[i]]) for i in range(len(small))]
    unmatched = set(range(len(large))) - set(int(s) for s in sigma)
    merged.extend(large[j] for j in sorted(unmatched))
    return merged


def _np_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)

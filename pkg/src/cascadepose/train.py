"""Training loops for both cascade variants, plus dataset evaluation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import cascade, data, loss as loss_mod, matcher, metrics
from . import tensor as T
from .cascade import CascadeModel, CropTransform, cxcywh_to_corners
from .checkpoint import save_checkpoint
from .errors import ConfigError
from .nn import ModelConfig
from .optim import AdamW, MultiStepLR
from .tensor import Tensor

GIOU_WEIGHT = 2.0
MAX_PEOPLE_PER_STEP = 5


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    backbone_lr: float = None  # defaults to lr
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    milestones: tuple = ()
    gamma: float = 0.5

    _KNOWN = {"lr", "backbone_lr", "weight_decay", "betas", "milestones", "gamma"}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - cls._KNOWN
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        return cls(**d)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "n_images": 64, "seed": 7})
    steps: int = 3000
    seed: int = 0
    log_every: int = 25
    augment: bool = True
    flip_test: bool = False
    gt_box: bool = False
    out_dir: str = "run"

    _KNOWN = {"model", "optimizer", "dataset", "steps", "seed", "log_every",
              "augment", "flip_test", "gt_box", "out_dir"}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - cls._KNOWN
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig(**d["model"])
        if "optimizer" in d:
            d["optimizer"] = OptimizerConfig.from_dict(d["optimizer"])
        return cls(**d)


def load_dataset(spec):
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        return data.synth_stickfigures(
            spec.get("n_images", 64), spec.get("seed", 7),
            size=spec.get("size", 64), max_people=spec.get("max_people", 3))
    if kind == "coco":
        return data.load_coco_keypoints(spec["annotations"], spec["image_root"])
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _corners_tensor(cxcywh_row):
    """Corner-form [4] tensor (xl, xr, yt, yd) from a cxcywh tensor row."""
    xl = cxcywh_row[0] - cxcywh_row[2] * 0.5
    xr = cxcywh_row[0] + cxcywh_row[2] * 0.5
    yt = cxcywh_row[1] - cxcywh_row[3] * 0.5
    yd = cxcywh_row[1] + cxcywh_row[3] * 0.5
    return T.stack([xl, xr, yt, yd])


def person_match(instances, logits, boxes_cxcywh, giou_weight=GIOU_WEIGHT):
    """Match gt persons to queries: class/coord matching cost plus a GIoU term."""
    classes = np.zeros(len(instances), dtype=np.intp)
    t_boxes = np.array([list(inst.box.to_cxcywh()) for inst in instances])
    probs = cascade._np_softmax(np.asarray(logits, dtype=np.float64))
    cost = matcher.cost_train(classes, t_boxes, probs, np.asarray(boxes_cxcywh, dtype=np.float64))
    giou = cascade.generalized_iou_matrix(
        cxcywh_to_corners(t_boxes), cxcywh_to_corners(np.asarray(boxes_cxcywh)))
    cost = matcher.CostMatrix(cost.values - giou_weight * giou, mode="train")
    return matcher.hungarian_solve(cost).assignment


def keypoint_match(target_classes, target_coords, logits, coords):
    probs = cascade._np_softmax(np.asarray(logits, dtype=np.float64))
    cost = matcher.cost_train(target_classes, target_coords, probs,
                              np.asarray(coords, dtype=np.float64))
    return matcher.hungarian_solve(cost).assignment


def _keypoint_targets(inst, transform, swap=None):
    """Visible gt joints expressed in the crop frame, restricted to [0,1]^2."""
    uv = transform.invert(inst.keypoints)
    keep = inst.visibility & (uv >= 0.0).all(axis=1) & (uv <= 1.0).all(axis=1)
    classes = np.flatnonzero(keep)
    coords = uv[keep]
    if swap is not None:
        classes = swap[classes]
    return classes, coords


class Trainer:
    def __init__(self, run_config, dataset=None):
        self.cfg = run_config
        self.dataset = dataset if dataset is not None else load_dataset(run_config.dataset)
        self.model = CascadeModel(run_config.model, seed=run_config.seed)
        opt = run_config.optimizer
        params = self.model.named_parameters()
        backbone = {k: p for k, p in params.items() if "backbone" in k}
        rest = {k: p for k, p in params.items() if "backbone" not in k}
        self.optimizer = AdamW(
            [{"params": backbone, "lr": opt.backbone_lr or opt.lr},
             {"params": rest, "lr": opt.lr}],
            lr=opt.lr, betas=opt.betas, weight_decay=opt.weight_decay)
        self.scheduler = MultiStepLR(self.optimizer, opt.milestones, opt.gamma)
        self.rng = np.random.default_rng(run_config.seed)
        self.mcfg = run_config.model

    # -- per-variant step losses -----------------------------------------

    def _person_loss(self, out, instances):
        classes = np.zeros(len(instances), dtype=np.intp)
        t_boxes = np.array([list(inst.box.to_cxcywh()) for inst in instances])
        parts = []
        for logits, boxes in out["layers"]:
            sigma = person_match(instances, logits.data, boxes.data)
            parts.append(loss_mod.set_loss(classes, t_boxes, logits, boxes, sigma))
        total = parts[0].total
        for p in parts[1:]:
            total = total + p.total
        n = len(parts)
        return loss_mod.LossBreakdown(
            total=total * (1.0 / n),
            class_term=sum(p.class_term for p in parts) / n,
            coord_term=sum(p.coord_term for p in parts) / n)

    def _kp_loss_layers(self, layers, target_classes, target_coords):
        if self.mcfg.class_specific_queries:
            def match_fn(logits, coords):
                return np.asarray(target_classes, dtype=np.intp)
        else:
            def match_fn(logits, coords):
                return keypoint_match(target_classes, target_coords,
                                      logits.data, coords.data)
        return loss_mod.deep_supervision_loss(
            target_classes, target_coords,
            [lg for lg, _ in layers], [co for _, co in layers],
            lambda lg, co: match_fn(lg, co))

    def step_end_to_end(self, sample):
        image = Tensor(sample.image.astype(self.mcfg.np_dtype))
        out = self.model.person_forward(image)
        person = self._person_loss(out, sample.instances)
        logits, boxes = out["layers"][-1]
        sigma = person_match(sample.instances, logits.data, boxes.data)
        order = np.arange(len(sample.instances))
        if len(order) > MAX_PEOPLE_PER_STEP:
            order = self.rng.choice(order, size=MAX_PEOPLE_PER_STEP, replace=False)
        kp_parts = []
        for i in order:
            box_t = _corners_tensor(boxes[int(sigma[i])])
            try:
                layers, used_box = self.model.keypoint_forward_box(out["maps"], box_t)
            except Exception:
                continue  # degenerate predicted box early in training
            xl, xr, yt, yd = used_box.data.tolist()
            transform = CropTransform(np.array([[xr - xl, 0.0, xl], [0.0, yd - yt, yt]]))
            classes, coords = _keypoint_targets(sample.instances[int(i)], transform)
            kp_parts.append(self._kp_loss_layers(layers, classes, coords))
        total = person.total
        class_term, coord_term = person.class_term, person.coord_term
        if kp_parts:
            kp_total = kp_parts[0].total
            for p in kp_parts[1:]:
                kp_total = kp_total + p.total
            total = total + kp_total * (1.0 / len(kp_parts))
            class_term += sum(p.class_term for p in kp_parts) / len(kp_parts)
            coord_term += sum(p.coord_term for p in kp_parts) / len(kp_parts)
        return loss_mod.LossBreakdown(total=total, class_term=class_term, coord_term=coord_term)

    def step_two_stage(self, sample, step_idx):
        image = Tensor(sample.image.astype(self.mcfg.np_dtype))
        out = self.model.person_forward(image)
        person = self._person_loss(out, sample.instances)
        order = np.arange(len(sample.instances))
        if len(order) > MAX_PEOPLE_PER_STEP:
            order = self.rng.choice(order, size=MAX_PEOPLE_PER_STEP, replace=False)
        kp_parts = []
        aspect = self.mcfg.patch_h / self.mcfg.patch_w
        for i in order:
            inst = sample.instances[int(i)]
            if self.cfg.augment:
                rot = float(self.rng.uniform(-40.0, 40.0))
                sc = float(self.rng.uniform(0.7, 1.3))
                flip = bool(self.rng.random() < 0.5)
            else:
                rot, sc, flip = 0.0, 1.0, False
            patch, transform = cascade.crop_image_twostage(
                sample.image, inst.box, aspect,
                (self.mcfg.patch_h, self.mcfg.patch_w), rotation=rot, scale=sc, flip=flip)
            swap = self.dataset.swap_pairs if flip else None
            classes, coords = _keypoint_targets(inst, transform, swap=swap)
            layers = self.model.keypoint_forward_patch(patch.astype(self.mcfg.np_dtype))
            kp_parts.append(self._kp_loss_layers(layers, classes, coords))
        total = person.total
        class_term, coord_term = person.class_term, person.coord_term
        if kp_parts:
            kp_total = kp_parts[0].total
            for p in kp_parts[1:]:
                kp_total = kp_total + p.total
            total = total + kp_total * (1.0 / len(kp_parts))
            class_term += sum(p.class_term for p in kp_parts) / len(kp_parts)
            coord_term += sum(p.coord_term for p in kp_parts) / len(kp_parts)
        return loss_mod.LossBreakdown(total=total, class_term=class_term, coord_term=coord_term)

    # -- loop -------------------------------------------------------------

    def train(self, log_file=None):
        n = len(self.dataset.samples)
        order = self.rng.permutation(n)
        pos = 0
        best = np.inf
        history = []
        os.makedirs(self.cfg.out_dir, exist_ok=True)
        for step in range(self.cfg.steps):
            if pos == n:
                order = self.rng.permutation(n)
                pos = 0
            sample = self.dataset.samples[order[pos]]
            pos += 1
            if self.mcfg.variant == "end_to_end":
                breakdown = self.step_end_to_end(sample)
            else:
                breakdown = self.step_two_stage(sample, step)
            self.optimizer.zero_grad()
            breakdown.total.backward()
            self.optimizer.step()
            self.scheduler.step()
            value = breakdown.total.item()
            history.append(value)
            if log_file is not None and (step % self.cfg.log_every == 0
                                         or step == self.cfg.steps - 1):
                log_file.write(json.dumps({
                    "schema": "train-log/1", "step": step, "total": value,
                    "class_term": breakdown.class_term,
                    "coord_term": breakdown.coord_term}) + "\n")
                log_file.flush()
            window = float(np.mean(history[-n:]))
            if step >= n and window < best:
                best = window
                self.save(os.path.join(self.cfg.out_dir, "best.ckpt"))
        self.save(os.path.join(self.cfg.out_dir, "last.ckpt"))
        return history

    def save(self, path):
        save_checkpoint(path, self.mcfg, self.model.named_parameters())


def evaluate(model, dataset, flip_test=False, gt_box=False, exclude_background=True,
             alpha=0.2, workers=1):
    """Run the full pipeline over a dataset and compute PCK and AP."""
    def run_one(sample):
        boxes = [inst.box for inst in sample.instances] if gt_box else None

        def pipe_with(gt_boxes):
            def pipe(img):
                return cascade.full_pipeline(
                    model, img, gt_boxes=gt_boxes,
                    exclude_background=exclude_background)
            return pipe

        if flip_test:
            # the mirrored branch must crop with mirrored gt boxes
            mirrored = None if boxes is None else [cascade.mirror_box(b)
                                                   for b in boxes]
            return cascade.flip_test_average(
                sample.image, pipe_with(boxes), dataset.swap_pairs,
                mirror_pipeline=pipe_with(mirrored))
        return pipe_with(boxes)(sample.image)

    samples = dataset.samples
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as ex:
            predictions = list(ex.map(run_one, samples))
    else:
        predictions = [run_one(s) for s in samples]
    ground_truth = [s.instances for s in samples]
    if not any(gt for gt in ground_truth):
        return {"no_instances": True}
    n_joints = model.config.n_joints
    image_area = float(np.prod(samples[0].image.shape[1:])) if samples else 0.0
    oks_k = (2.0 * metrics.COCO_SIGMAS if n_joints == 17
             else np.full(n_joints, 2.0 * 0.1))
    report = metrics.coco_ap(predictions, ground_truth, image_area, oks_k=oks_k)
    report[f"PCK@{alpha}"] = metrics.dataset_pck(predictions, ground_truth, alpha=alpha)
    return report


def sweep_eval_flags(model, dataset, alpha=0.2, workers=1):
    """All 8 combinations of (gt_box, include background logit, flip test)."""
    rows = []
    for gt_box in (False, True):
        for include_bg in (False, True):
            for flip in (False, True):
                report = evaluate(model, dataset, flip_test=flip, gt_box=gt_box,
                                  exclude_background=not include_bg, alpha=alpha,
                                  workers=workers)
                rows.append({"gt_box": gt_box, "include_bg_logit": include_bg,
                             "flip_test": flip, **report})
    return rows

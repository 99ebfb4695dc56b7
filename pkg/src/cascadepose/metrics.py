"""Keypoint evaluation metrics: OKS, COCO-style average precision, PCK."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

# Official COCO keypoint sigmas (17 joints, in annotation order).
COCO_SIGMAS = np.array([
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
])

OKS_THRESHOLDS = np.arange(0.50, 0.951, 0.05)
AREA_MEDIUM = 32.0**2
AREA_LARGE = 96.0**2


@dataclass
class OksParams:
    k: np.ndarray  # per-joint constants
    scale: float  # object scale s = sqrt(area)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if np.any(self.k <= 0) or self.scale <= 0:
            raise ContractError("OKS constants and scale must be positive")

    @classmethod
    def coco(cls, area):
        return cls(k=2.0 * COCO_SIGMAS, scale=np.sqrt(area))

    @classmethod
    def uniform(cls, n_joints, area, k=0.1):
        return cls(k=np.full(n_joints, k), scale=np.sqrt(area))


def oks(pred_keypoints, gt_keypoints, visibility, params):
    """Mean over visible joints of exp(-d^2 / (2 s^2 k^2))."""
    pred = np.asarray(pred_keypoints, dtype=np.float64)
    gt = np.asarray(gt_keypoints, dtype=np.float64)
    vis = np.asarray(visibility, dtype=bool)
    if not vis.any():
        raise ContractError("OKS undefined without visible ground-truth keypoints")
    d2 = ((pred - gt) ** 2).sum(axis=1)
    e = d2 / (2.0 * params.scale**2 * params.k**2)
    return float(np.exp(-e[vis]).mean())


def pck(pred_keypoints, gt_keypoints, visibility, alpha, reference_length):
    """Fraction of visible joints within alpha * reference_length of gt."""
    if reference_length <= 0:
        raise ContractError("reference length must be positive")
    pred = np.asarray(pred_keypoints, dtype=np.float64)
    gt = np.asarray(gt_keypoints, dtype=np.float64)
    vis = np.asarray(visibility, dtype=bool)
    if not vis.any():
        raise ContractError("PCK undefined without visible joints")
    d = np.linalg.norm(pred - gt, axis=1)
    return float((d[vis] <= alpha * reference_length).mean())


def _instance_oks(pred, gt, oks_k):
    """OKS of a predicted instance against a gt instance (box-area scale)."""
    params = OksParams(k=oks_k[: len(gt.visibility)], scale=max(np.sqrt(gt.box.area), 1e-9))
    return oks(pred.keypoints, gt.keypoints, gt.visibility, params)


def _match_image(preds, gts, threshold, oks_k):
    """COCO-style greedy matching for one image at one OKS threshold.

    ``preds`` sorted by descending score. Returns tp flags aligned with preds
    and the count of matched gts.
    """
    matched = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(preds), dtype=bool)
    for pi, pred in enumerate(preds):
        best = -1
        best_oks = threshold
        for gi, gt in enumerate(gts):
            if matched[gi] or not gt.visibility.any():
                continue
            val = _instance_oks(pred, gt, oks_k)
            if val >= best_oks:
                best_oks = val
                best = gi
        if best >= 0:
            matched[best] = True
            tp[pi] = True
    return tp, int(matched.sum())


def _average_precision(scores, tp_flags, n_gt):
    """101-point interpolated AP over globally score-ranked detections."""
    if n_gt == 0:
        return 0.0
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.asarray(tp_flags)[order]
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # enforce monotone precision envelope
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = 0.0
    recall_points = np.linspace(0, 1, 101)
    idx = np.searchsorted(recall, recall_points, side="left")
    for i in idx:
        ap += precision[i] if i < len(precision) else 0.0
    return ap / 101.0


def coco_ap(predictions, ground_truth, image_area, oks_k=None,
            thresholds=OKS_THRESHOLDS):
    """AP/AR summary over a dataset.

    ``predictions``/``ground_truth``: lists (per image) of PoseInstance lists.
    ``image_area``: pixel area of the images, used to convert normalized box
    areas to the COCO medium/large pixel cutoffs. Scores for ranking are the
    instances' person_score.
    """
    if oks_k is None:
        oks_k = 2.0 * COCO_SIGMAS

    def evaluate(area_range):
        aps = []
        recalls = []
        for t in thresholds:
            scores, flags = [], []
            n_gt = 0
            matched_total = 0
            for preds, gts in zip(predictions, ground_truth):
                gts_in = [g for g in gts
                          if area_range[0] <= g.box.area * image_area < area_range[1]
                          and g.visibility.any()]
                n_gt += len(gts_in)
                preds_sorted = sorted(preds, key=lambda p: -p.person_score)
                tp, matched = _match_image(preds_sorted, gts_in, t, oks_k)
                matched_total += matched
                scores.extend(p.person_score for p in preds_sorted)
                flags.extend(tp.tolist())
            aps.append(_average_precision(scores, flags, n_gt))
            recalls.append(matched_total / n_gt if n_gt else 0.0)
        return float(np.mean(aps)), aps, float(np.mean(recalls))

    full = (0.0, np.inf)
    ap, per_t, ar = evaluate(full)
    ap_m = evaluate((AREA_MEDIUM, AREA_LARGE))[0]
    ap_l = evaluate((AREA_LARGE, np.inf))[0]
    i50 = int(np.argmin(np.abs(thresholds - 0.50)))
    i75 = int(np.argmin(np.abs(thresholds - 0.75)))
    return {
        "AP": ap,
        "AP50": per_t[i50],
        "AP75": per_t[i75],
        "AP_M": ap_m,
        "AP_L": ap_l,
        "AR": ar,
    }


def dataset_pck(predictions, ground_truth, alpha=0.2):
    """Train-set style PCK: each gt instance scored against the predicted
    instance with the nearest box center, reference = gt box diagonal."""
    correct = 0
    total = 0
    for preds, gts in zip(predictions, ground_truth):
        for gt in gts:
            if not gt.visibility.any():
                continue
            total += int(gt.visibility.sum())
            if not preds:
                continue
            gc = np.array([(gt.box.x_left + gt.box.x_right) / 2,
                           (gt.box.y_top + gt.box.y_down) / 2])
            best = min(preds, key=lambda p: float(np.hypot(
                (p.box.x_left + p.box.x_right) / 2 - gc[0],
                (p.box.y_top + p.box.y_down) / 2 - gc[1])))
            ref = float(np.hypot(gt.box.width, gt.box.height))
            frac = pck(best.keypoints[: len(gt.visibility)], gt.keypoints,
                       gt.visibility, alpha, ref)
            correct += frac * int(gt.visibility.sum())
    return correct / total if total else 0.0

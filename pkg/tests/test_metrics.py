import numpy as np
import pytest

from cascadepose.cascade import BoundingBox, PoseInstance
from cascadepose.errors import ContractError
from cascadepose.metrics import (AREA_LARGE, AREA_MEDIUM, COCO_SIGMAS,
                                 OKS_THRESHOLDS, OksParams, coco_ap,
                                 dataset_pck, oks, pck)


def test_coco_constants():
    assert len(COCO_SIGMAS) == 17
    assert COCO_SIGMAS[0] == 0.026  # nose
    assert len(OKS_THRESHOLDS) == 10
    assert OKS_THRESHOLDS[0] == pytest.approx(0.50)
    assert OKS_THRESHOLDS[-1] == pytest.approx(0.95)
    assert (AREA_MEDIUM, AREA_LARGE) == (1024.0, 9216.0)


def test_oks_perfect_is_one():
    kp = np.array([[0.2, 0.3], [0.5, 0.5]])
    params = OksParams.uniform(2, area=1.0)
    assert oks(kp, kp, [True, True], params) == 1.0


def test_oks_characteristic_distance_gives_inv_sqrt_e():
    # d = s*k puts the exponent at -1/2
    params = OksParams(k=[0.1], scale=1.0)
    out = oks([[0.1, 0.0]], [[0.0, 0.0]], [True], params)
    assert out == pytest.approx(np.exp(-0.5))


def test_oks_averages_only_visible_joints():
    params = OksParams(k=[0.1, 0.1], scale=1.0)
    out = oks([[0.0, 0.0], [5.0, 5.0]], [[0.0, 0.0], [0.0, 0.0]],
              [True, False], params)
    assert out == 1.0


def test_oks_monotone_in_distance():
    params = OksParams(k=[0.1], scale=1.0)
    vals = [oks([[d, 0.0]], [[0.0, 0.0]], [True], params)
            for d in np.linspace(0.0, 0.5, 11)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_oks_requires_visible_joints():
    with pytest.raises(ContractError):
        oks([[0.0, 0.0]], [[0.0, 0.0]], [False], OksParams(k=[0.1], scale=1.0))
    with pytest.raises(ContractError):
        OksParams(k=[0.0], scale=1.0)


def test_pck_counts_within_radius():
    gt = np.zeros((4, 2))
    pred = np.array([[0.05, 0.0], [0.3, 0.0], [0.0, 0.19], [0.0, 0.21]])
    # radius = 0.2 * 1.0; distances 0.05, 0.3, 0.19, 0.21 -> 2 of 4
    assert pck(pred, gt, [True] * 4, alpha=0.2, reference_length=1.0) == 0.5


def test_pck_translation_invariance():
    rng = np.random.default_rng(60)
    gt = rng.uniform(size=(5, 2))
    pred = gt + rng.normal(0, 0.05, size=(5, 2))
    shift = np.array([0.3, -0.2])
    a = pck(pred, gt, [True] * 5, 0.2, 1.0)
    b = pck(pred + shift, gt + shift, [True] * 5, 0.2, 1.0)
    assert a == b


def test_pck_rejects_bad_reference():
    with pytest.raises(ContractError):
        pck([[0.0, 0.0]], [[0.0, 0.0]], [True], 0.2, 0.0)


def _inst(box, kp, score=1.0, vis=None):
    kp = np.asarray(kp, dtype=np.float64)
    return PoseInstance(box=box, keypoints=kp,
                        visibility=np.ones(len(kp), dtype=bool) if vis is None else vis,
                        person_score=score)


def _scene(rng, n=3):
    gts = []
    for i in range(n):
        xl = 0.05 + 0.3 * i
        box = BoundingBox(xl, xl + 0.25, 0.2, 0.8)
        kp = np.stack([rng.uniform(xl, xl + 0.25, size=4),
                       rng.uniform(0.2, 0.8, size=4)], axis=1)
        gts.append(_inst(box, kp))
    return gts


def test_ap_self_match_is_one():
    rng = np.random.default_rng(61)
    gts = _scene(rng)
    report = coco_ap([gts], [gts], image_area=64 * 64,
                     oks_k=np.full(4, 0.2))
    assert report["AP"] == pytest.approx(1.0)
    assert report["AP50"] == pytest.approx(1.0)
    assert report["AR"] == pytest.approx(1.0)


def test_ap_no_predictions_is_zero():
    rng = np.random.default_rng(62)
    gts = _scene(rng)
    report = coco_ap([[]], [gts], image_area=64 * 64, oks_k=np.full(4, 0.2))
    assert report["AP"] == 0.0 and report["AR"] == 0.0


def test_ap_hand_traced_half_recall():
    # two gts, one perfect prediction, one grossly wrong but lower scored:
    # precision 1 at recall points up to 0.5; recall beyond 0.5 is never
    # reached so those 50 interpolation points contribute 0
    gt_a = _inst(BoundingBox(0.1, 0.3, 0.1, 0.3), [[0.2, 0.2]])
    gt_b = _inst(BoundingBox(0.6, 0.8, 0.6, 0.8), [[0.7, 0.7]])
    pred_good = _inst(BoundingBox(0.1, 0.3, 0.1, 0.3), [[0.2, 0.2]], score=0.9)
    pred_bad = _inst(BoundingBox(0.6, 0.8, 0.6, 0.8), [[0.1, 0.9]], score=0.5)
    report = coco_ap([[pred_good, pred_bad]], [[gt_a, gt_b]],
                     image_area=64 * 64, oks_k=np.array([0.2]))
    want = 51 / 101.0
    assert report["AP"] == pytest.approx(want)
    assert report["AR"] == pytest.approx(0.5)


def test_ap_score_rank_transform_invariance():
    # AP depends on the ranking of scores, not their values
    rng = np.random.default_rng(63)
    gts = _scene(rng)
    noisy = [_inst(g.box, g.keypoints + rng.normal(0, 0.02, g.keypoints.shape),
                   score=s) for g, s in zip(gts, (0.9, 0.6, 0.3))]
    rescored = [_inst(p.box, p.keypoints, score=p.person_score ** 3) for p in noisy]
    a = coco_ap([noisy], [gts], 64 * 64, oks_k=np.full(4, 0.2))
    b = coco_ap([rescored], [gts], 64 * 64, oks_k=np.full(4, 0.2))
    assert a == b


def test_ap_area_buckets():
    # a gt box of normalized area 0.5 in a 64x64 image covers 2048 px:
    # medium bucket only
    gt = _inst(BoundingBox(0.0, 1.0, 0.25, 0.75), [[0.5, 0.5]])
    report = coco_ap([[gt]], [[gt]], image_area=64 * 64, oks_k=np.array([0.2]))
    assert report["AP_M"] == pytest.approx(1.0)
    assert report["AP_L"] == 0.0


def test_dataset_pck_matches_by_nearest_box_center():
    gt = _inst(BoundingBox(0.1, 0.3, 0.1, 0.3), [[0.2, 0.2], [0.25, 0.25]])
    near = _inst(BoundingBox(0.12, 0.32, 0.1, 0.3), [[0.2, 0.2], [0.25, 0.25]])
    far = _inst(BoundingBox(0.6, 0.9, 0.6, 0.9), [[0.9, 0.9], [0.9, 0.9]])
    assert dataset_pck([[far, near]], [[gt]], alpha=0.2) == 1.0
    assert dataset_pck([[far]], [[gt]], alpha=0.2) == 0.0


def test_dataset_pck_empty_predictions_count_as_misses():
    gt = _inst(BoundingBox(0.1, 0.3, 0.1, 0.3), [[0.2, 0.2]])
    assert dataset_pck([[]], [[gt]], alpha=0.2) == 0.0


def test_dataset_pck_reference_is_box_diagonal():
    box = BoundingBox(0.0, 0.3, 0.0, 0.4)  # diagonal 0.5
    gt = _inst(box, [[0.1, 0.1]])
    hit = _inst(box, [[0.1 + 0.099, 0.1]])  # within 0.2 * 0.5
    miss = _inst(box, [[0.1 + 0.101, 0.1]])
    assert dataset_pck([[hit]], [[gt]], alpha=0.2) == 1.0
    assert dataset_pck([[miss]], [[gt]], alpha=0.2) == 0.0

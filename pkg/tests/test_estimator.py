import numpy as np
import pytest
from sklearn.base import clone

from cascadepose.cascade import BoundingBox, PoseInstance
from cascadepose.data import SYNTH_SWAP, synth_stickfigures
from cascadepose.errors import ContractError
from cascadepose.estimator import CascadePoseEstimator
from cascadepose.validation import build_dataset, check_image, check_instance


def _xy(n_images, seed):
    ds = synth_stickfigures(n_images, seed=seed)
    X = [s.image for s in ds.samples]
    y = [s.instances for s in ds.samples]
    return X, y


SMALL_KW = dict(d_model=16, n_heads=2, steps=5, seed=0,
                swap_pairs=SYNTH_SWAP.tolist())


def test_get_params_round_trip_and_clone():
    est = CascadePoseEstimator(n_joints=5, steps=7, lr=2e-3)
    params = est.get_params()
    assert params["steps"] == 7 and params["lr"] == 2e-3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(steps=9)
    assert est.get_params()["steps"] == 9


def test_predict_before_fit_raises():
    with pytest.raises(ContractError, match="fit"):
        CascadePoseEstimator().predict([np.zeros((3, 64, 64))])


def test_fit_predict_score_smoke():
    X, y = _xy(2, seed=30)
    est = CascadePoseEstimator(**SMALL_KW).fit(X, y)
    preds = est.predict(X)
    assert len(preds) == 2
    for instances in preds:
        for inst in instances:
            assert isinstance(inst, PoseInstance)
            assert inst.keypoints.shape == (5, 2)
    score = est.score(X, y)
    assert 0.0 <= score <= 1.0


def test_fit_accepts_dict_annotations():
    X, y = _xy(1, seed=31)
    y_dicts = [[{"box": inst.box.corners(),
                 "keypoints": inst.keypoints,
                 "visibility": inst.visibility} for inst in anns]
               for anns in y]
    est = CascadePoseEstimator(**SMALL_KW).fit(X, y_dicts)
    assert hasattr(est, "model_")


def test_flip_test_flag_used_in_predict():
    X, y = _xy(1, seed=32)
    est = CascadePoseEstimator(flip_test=True, **SMALL_KW).fit(X, y)
    preds = est.predict(X)
    assert isinstance(preds[0], list)


# -- validation helpers ------------------------------------------------------

def test_check_image_accepts_hwc_uint8():
    img = np.random.default_rng(33).integers(0, 256, size=(64, 64, 3),
                                             dtype=np.uint8)
    out = check_image(img)
    assert out.shape == (3, 64, 64)
    assert out.dtype == np.float64
    assert out.max() <= 1.0


def test_check_image_rejects_bad_shapes_and_ranges():
    with pytest.raises(ContractError):
        check_image(np.zeros((64, 64)))
    with pytest.raises(ContractError):
        check_image(np.zeros((4, 64, 64)))
    with pytest.raises(ContractError):
        check_image(np.full((3, 8, 8), 2.0))


def test_check_instance_joint_count_enforced():
    inst = PoseInstance(box=BoundingBox(0.1, 0.5, 0.1, 0.5),
                        keypoints=np.full((3, 2), 0.3),
                        visibility=np.ones(3, dtype=bool))
    assert check_instance(inst, 3) is inst
    with pytest.raises(ContractError):
        check_instance(inst, 5)
    with pytest.raises(ContractError):
        check_instance(42, 3)


def test_build_dataset_length_mismatch():
    with pytest.raises(ContractError):
        build_dataset([np.zeros((3, 64, 64))], [], n_joints=5)

import numpy as np
import pytest

from cascadepose.cascade import BoundingBox, CropTransform, PoseInstance
from cascadepose.data import synth_stickfigures
from cascadepose.errors import ConfigError
from cascadepose.nn import ModelConfig
from cascadepose.train import (GIOU_WEIGHT, MAX_PEOPLE_PER_STEP,
                               OptimizerConfig, RunConfig, Trainer,
                               _keypoint_targets, evaluate, load_dataset,
                               person_match)

SMALL = ModelConfig(backbone_channels=(4, 6, 8, 12), d_model=16, ffn_dim=16,
                    n_heads=2)


def test_constants():
    assert GIOU_WEIGHT == 2.0
    assert MAX_PEOPLE_PER_STEP == 5


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="nesterov"):
        OptimizerConfig.from_dict({"lr": 0.1, "nesterov": True})


def test_run_config_from_dict_nested():
    cfg = RunConfig.from_dict({
        "model": {"n_joints": 3, "n_keypoint_queries": 7},
        "optimizer": {"lr": 0.01, "milestones": [10, 20]},
        "steps": 5,
    })
    assert cfg.model.n_joints == 3
    assert cfg.optimizer.milestones == (10, 20)
    assert cfg.steps == 5


def test_load_dataset_kinds():
    ds = load_dataset({"kind": "synthetic", "n_images": 2, "seed": 1})
    assert len(ds) == 2
    with pytest.raises(ConfigError):
        load_dataset({"kind": "imagenet"})


def test_person_match_prefers_overlapping_box():
    inst = PoseInstance(box=BoundingBox(0.1, 0.4, 0.1, 0.5),
                        keypoints=np.full((5, 2), 0.25),
                        visibility=np.ones(5, dtype=bool))
    # query 1 overlaps the gt box; query 0 is far away
    logits = np.array([[2.0, 0.0], [2.0, 0.0]])
    boxes = np.array([[0.8, 0.8, 0.2, 0.2], [0.25, 0.3, 0.3, 0.4]])
    sigma = person_match([inst], logits, boxes)
    assert sigma.tolist() == [1]


def test_keypoint_targets_filters_and_maps():
    inst = PoseInstance(
        box=BoundingBox(0.0, 1.0, 0.0, 1.0),
        keypoints=np.array([[0.3, 0.4], [0.9, 0.9], [0.1, 0.1]]),
        visibility=np.array([True, True, False]))
    transform = CropTransform.from_box(BoundingBox(0.2, 0.6, 0.2, 0.6))
    classes, coords = _keypoint_targets(inst, transform)
    # joint 1 maps outside [0,1]^2, joint 2 is invisible -> only joint 0 kept
    assert classes.tolist() == [0]
    assert np.allclose(coords, [[0.25, 0.5]])


def test_keypoint_targets_flip_swap():
    inst = PoseInstance(
        box=BoundingBox(0.0, 1.0, 0.0, 1.0),
        keypoints=np.array([[0.3, 0.4], [0.5, 0.5]]),
        visibility=np.ones(2, dtype=bool))
    transform = CropTransform.from_box(BoundingBox(0.0, 1.0, 0.0, 1.0))
    classes, _ = _keypoint_targets(inst, transform, swap=np.array([1, 0]))
    assert classes.tolist() == [1, 0]


@pytest.mark.parametrize("variant", ["end_to_end", "two_stage"])
def test_one_step_reduces_nothing_but_runs(variant):
    cfg = RunConfig(
        model=ModelConfig(backbone_channels=(4, 6, 8, 12), d_model=16,
                          ffn_dim=16, n_heads=2, variant=variant),
        dataset={"kind": "synthetic", "n_images": 2, "seed": 1},
        steps=1, out_dir="/tmp/cascadepose_test_step")
    trainer = Trainer(cfg)
    sample = trainer.dataset.samples[0]
    if variant == "end_to_end":
        breakdown = trainer.step_end_to_end(sample)
    else:
        breakdown = trainer.step_two_stage(sample, 0)
    assert np.isfinite(breakdown.total.item())
    assert breakdown.total.item() >= 0.0
    trainer.optimizer.zero_grad()
    breakdown.total.backward()
    trainer.optimizer.step()  # every parameter has a (possibly zero) gradient


def test_training_decreases_loss_on_one_image():
    cfg = RunConfig(
        model=ModelConfig(backbone_channels=(4, 6, 8, 12), d_model=16,
                          ffn_dim=16, n_heads=2),
        optimizer=OptimizerConfig(lr=3e-3),
        dataset={"kind": "synthetic", "n_images": 1, "seed": 2},
        steps=40, seed=0, out_dir="/tmp/cascadepose_test_decrease")
    trainer = Trainer(cfg)
    history = trainer.train()
    assert np.mean(history[-5:]) < np.mean(history[:5])


def test_backbone_lr_group():
    cfg = RunConfig(
        model=SMALL,
        optimizer=OptimizerConfig(lr=1e-3, backbone_lr=1e-4),
        dataset={"kind": "synthetic", "n_images": 1, "seed": 1},
        out_dir="/tmp/cascadepose_test_lr")
    trainer = Trainer(cfg)
    lrs = {g["lr"] for g in trainer.optimizer.groups}
    assert lrs == {1e-3, 1e-4}
    backbone_group = [g for g in trainer.optimizer.groups if g["lr"] == 1e-4][0]
    assert all("backbone" in name for name in backbone_group["params"])


def test_evaluate_report_keys_and_flip_variant():
    ds = synth_stickfigures(2, seed=3)
    from cascadepose.cascade import CascadeModel
    model = CascadeModel(SMALL, seed=17)
    report = evaluate(model, ds, gt_box=True)
    for key in ("AP", "AP50", "AP75", "AP_M", "AP_L", "AR", "PCK@0.2"):
        assert key in report
    flip_report = evaluate(model, ds, gt_box=True, flip_test=True)
    assert "PCK@0.2" in flip_report


def test_evaluate_workers_match_serial():
    ds = synth_stickfigures(3, seed=4)
    from cascadepose.cascade import CascadeModel
    model = CascadeModel(SMALL, seed=18)
    serial = evaluate(model, ds, gt_box=True, workers=1)
    parallel = evaluate(model, ds, gt_box=True, workers=3)
    assert serial == parallel

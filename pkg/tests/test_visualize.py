import numpy as np
import pytest

from cascadepose.cascade import BoundingBox, CascadeModel, CropTransform, PoseInstance
from cascadepose.data import synth_stickfigures
from cascadepose.errors import ContractError
from cascadepose.nn import ModelConfig
from cascadepose.render import class_colors, draw_overlay
from cascadepose.visualize import (gaussian_map, keypoint_trajectory,
                                   layer_snapshots)

SMALL = ModelConfig(backbone_channels=(4, 6, 8, 12), d_model=16, ffn_dim=16,
                    n_heads=2)


def _image():
    return synth_stickfigures(1, seed=20).samples[0]


def test_layer_snapshots_count_includes_initial_queries():
    model = CascadeModel(SMALL, seed=13)
    sample = _image()
    box = sample.instances[0].box
    snapshots, transform = layer_snapshots(model, sample.image, gt_boxes=[box])
    assert len(snapshots) == SMALL.n_decoder_layers + 1
    assert snapshots[0]["layer"] == 0
    for snap in snapshots:
        assert snap["probs"].shape == (SMALL.n_keypoint_queries, SMALL.n_joints + 1)
        assert snap["coords"].shape == (SMALL.n_keypoint_queries, 2)
        assert np.abs(snap["probs"].sum(axis=1) - 1.0).max() < 1e-9


def test_layer_snapshots_layer0_is_query_prior():
    # layer 0 comes from the query embeddings alone, so it cannot depend on
    # the image content
    model = CascadeModel(SMALL, seed=14)
    box = BoundingBox(0.2, 0.8, 0.2, 0.8)
    a, _ = layer_snapshots(model, _image().image, gt_boxes=[box])
    b, _ = layer_snapshots(model, np.zeros((3, 64, 64)), gt_boxes=[box])
    assert np.array_equal(a[0]["probs"], b[0]["probs"])
    assert not np.array_equal(a[-1]["probs"], b[-1]["probs"])


def test_layer_snapshots_person_index_out_of_range():
    model = CascadeModel(SMALL, seed=15)
    with pytest.raises(ContractError, match="person index"):
        layer_snapshots(model, _image().image, person_index=3,
                        gt_boxes=[BoundingBox(0.2, 0.8, 0.2, 0.8)])


def test_gaussian_map_peak_at_center():
    heat = gaussian_map([1.0], [[8.5, 4.5]], (10, 16), sigma=1.5)
    assert heat.shape == (10, 16)
    assert heat[4, 8] == pytest.approx(1.0)
    assert heat.argmax() == 4 * 16 + 8


def test_gaussian_map_max_vs_sum_stacking():
    probs = [0.8, 0.6]
    coords = [[4.5, 4.5], [4.5, 4.5]]
    mx = gaussian_map(probs, coords, (9, 9), sigma=2.0, stack="max")
    sm = gaussian_map(probs, coords, (9, 9), sigma=2.0, stack="sum")
    assert mx[4, 4] == pytest.approx(0.8)
    assert sm[4, 4] == pytest.approx(1.4)


def test_gaussian_map_scales_with_probability():
    lo = gaussian_map([0.25], [[4.5, 4.5]], (9, 9), sigma=2.0)
    hi = gaussian_map([0.5], [[4.5, 4.5]], (9, 9), sigma=2.0)
    assert np.allclose(hi, 2.0 * lo)


def test_trajectory_tracks_selected_queries():
    model = CascadeModel(SMALL, seed=16)
    sample = _image()
    snapshots, transform = layer_snapshots(
        model, sample.image, gt_boxes=[sample.instances[0].box])
    traj = keypoint_trajectory(snapshots, transform)
    assert len(traj) == SMALL.n_joints
    queries = [row["query"] for row in traj]
    assert len(set(queries)) == SMALL.n_joints  # distinct queries per joint
    for row in traj:
        assert len(row["points"]) == len(snapshots)
        assert len(row["probs"]) == len(snapshots)
        # final point equals the tracked query's final prediction in image frame
        want = transform.apply(snapshots[-1]["coords"][row["query"]])
        assert np.allclose(row["points"][-1], want, atol=1e-12)


def test_class_colors_distinct():
    cols = class_colors(6)
    assert len(set(cols)) == 6


def test_draw_overlay_paints_keypoint_pixels():
    image = np.zeros((3, 32, 32))
    inst = PoseInstance(box=BoundingBox(0.1, 0.9, 0.1, 0.9),
                        keypoints=[[0.5, 0.5]],
                        visibility=np.ones(1, dtype=bool))
    out = draw_overlay(image, [inst], radius=2)
    # keypoint at normalized 0.5 -> pixel round(0.5*32 - 0.5) = 16
    assert tuple(out[16, 16]) == class_colors(1)[0]
    assert out.shape == (32, 32, 3)
    assert (out[0, 0] == 0).all()

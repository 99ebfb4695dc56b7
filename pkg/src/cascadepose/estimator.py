"""Scikit-learn style facade over the cascade pipeline.

The heavy lifting lives in the domain modules; this wrapper exposes
fit/predict/score with get_params/set_params so the model composes with the
wider ecosystem (grid search, pipelines, cloning).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import cascade
from .errors import ContractError
from .metrics import dataset_pck
from .nn import ModelConfig
from .train import OptimizerConfig, RunConfig, Trainer
from .validation import build_dataset, check_image


class CascadePoseEstimator(BaseEstimator):
    """Person + keypoint detection with cascaded transformers.

    Parameters mirror the model/run configuration; ``fit`` trains from
    scratch on (images, annotations), ``predict`` returns per-image lists of
    PoseInstance, ``score`` reports train-style PCK@alpha.
    """

    def __init__(self, variant="end_to_end", n_joints=5, d_model=32, n_heads=4,
                 n_encoder_layers=2, n_decoder_layers=2, n_keypoint_queries=12,
                 n_person_queries=8, image_size=64, steps=500, lr=1e-3,
                 weight_decay=1e-4, seed=0, flip_test=False, swap_pairs=None,
                 alpha=0.2):
        self.variant = variant
        self.n_joints = n_joints
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_encoder_layers = n_encoder_layers
        self.n_decoder_layers = n_decoder_layers
        self.n_keypoint_queries = n_keypoint_queries
        self.n_person_queries = n_person_queries
        self.image_size = image_size
        self.steps = steps
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed
        self.flip_test = flip_test
        self.swap_pairs = swap_pairs
        self.alpha = alpha

    def _model_config(self):
        return ModelConfig(
            variant=self.variant, n_joints=self.n_joints, d_model=self.d_model,
            n_heads=self.n_heads, n_encoder_layers=self.n_encoder_layers,
            n_decoder_layers=self.n_decoder_layers,
            n_keypoint_queries=self.n_keypoint_queries,
            n_person_queries=self.n_person_queries, image_size=self.image_size)

    def fit(self, X, y):
        dataset = build_dataset(X, y, self.n_joints, swap_pairs=self.swap_pairs)
        run = RunConfig(
            model=self._model_config(),
            optimizer=OptimizerConfig(lr=self.lr, weight_decay=self.weight_decay),
            steps=self.steps, seed=self.seed, out_dir="/tmp/cascadepose_fit")
        trainer = Trainer(run, dataset=dataset)
        n = len(dataset.samples)
        order = trainer.rng.permutation(n)
        pos = 0
        for _ in range(self.steps):
            if pos == n:
                order = trainer.rng.permutation(n)
                pos = 0
            sample = dataset.samples[order[pos]]
            pos += 1
            if run.model.variant == "end_to_end":
                breakdown = trainer.step_end_to_end(sample)
            else:
                breakdown = trainer.step_two_stage(sample, 0)
            trainer.optimizer.zero_grad()
            breakdown.total.backward()
            trainer.optimizer.step()
        self.model_ = trainer.model
        self.swap_pairs_ = dataset.swap_pairs
        return self

    def predict(self, X):
        self._check_fitted()
        out = []
        for img in X:
            arr = check_image(img)
            if self.flip_test:
                out.append(cascade.flip_test_average(
                    arr, lambda im: cascade.full_pipeline(self.model_, im),
                    self.swap_pairs_))
            else:
                out.append(cascade.full_pipeline(self.model_, arr))
        return out

    def score(self, X, y):
        self._check_fitted()
        dataset = build_dataset(X, y, self.n_joints, swap_pairs=self.swap_pairs)
        preds = self.predict(X)
        return dataset_pck(preds, [s.instances for s in dataset.samples],
                           alpha=self.alpha)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractError("estimator is not fitted; call fit first")

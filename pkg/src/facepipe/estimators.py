"""scikit-learn style estimator facades.

Thin wrappers over the functional core so the pipeline steps and the
classifier compose with sklearn Pipelines, clone() and get_params().
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from . import pipeline, trainer
from .equalize import equalize
from .pipeline import BatchFailure, NormalizeConfig, mask_half, normalize_batch


def _map_images(X, fn):
    """Apply fn to one image, a stacked (N, H, W, 3) array, or a list."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return np.stack([fn(img) for img in X])
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return fn(X)
    return [fn(img) for img in X]


class HistogramEqualizer(TransformerMixin, BaseEstimator):
    """Stateless per-channel histogram equalization transformer."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return _map_images(X, equalize)


class HalfFaceMasker(TransformerMixin, BaseEstimator):
    """Zeroes the non-kept half of each image at the horizontal midpoint."""

    def __init__(self, mode: str = "top"):
        self.mode = mode

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return _map_images(X, lambda img: mask_half(img, self.mode))


class FaceNormalizer(TransformerMixin, BaseEstimator):
    """Full normalization pipeline over (image, box, landmarks) samples.

    transform returns NormalizedSample objects; with errors='raise' any
    per-sample failure aborts, with errors='collect' failing slots hold
    BatchFailure records instead.
    """

    def __init__(self, zoom_factor: float = 1.10, output_size: int = 64,
                 mask_mode: str = "none", errors: str = "raise"):
        self.zoom_factor = zoom_factor
        self.output_size = output_size
        self.mask_mode = mask_mode
        self.errors = errors

    def _config(self) -> NormalizeConfig:
        return NormalizeConfig(
            zoom_factor=self.zoom_factor,
            output_size=self.output_size,
            mask_mode=self.mask_mode,
        )

    def fit(self, X, y=None):
        self._config().validate()
        return self

    def transform(self, X):
        if self.errors not in ("raise", "collect"):
            raise ValueError(f"errors must be 'raise' or 'collect', got {self.errors!r}")
        results = normalize_batch(X, self._config(), workers=pipeline.default_workers())
        if self.errors == "raise":
            for res in results:
                if isinstance(res, BatchFailure):
                    raise RuntimeError(f"sample {res.index} failed: {res.error}")
        return results


class TwoStageSAMClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained head-first then end-to-end with SAM updates.

    fit accepts an optional held-out eval_set=(X_val, y_val) to drive
    early stopping; without one, both stages run their full epoch budget.
    """

    def __init__(self, hidden_sizes=(128, 64), batch_size: int = 16,
                 stage_a_epochs: int = 20, stage_b_epochs: int = 50,
                 learning_rate: float = 0.05, sam_rho: float = 0.05,
                 class_weighting: str = "inverse_frequency",
                 early_stop_patience: int = 5, seed: int = 0):
        self.hidden_sizes = hidden_sizes
        self.batch_size = batch_size
        self.stage_a_epochs = stage_a_epochs
        self.stage_b_epochs = stage_b_epochs
        self.learning_rate = learning_rate
        self.sam_rho = sam_rho
        self.class_weighting = class_weighting
        self.early_stop_patience = early_stop_patience
        self.seed = seed

    def _config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            batch_size=self.batch_size,
            stage_a_epochs=self.stage_a_epochs,
            stage_b_epochs=self.stage_b_epochs,
            learning_rate=self.learning_rate,
            sam_rho=self.sam_rho,
            class_weighting=self.class_weighting,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
            hidden_sizes=tuple(self.hidden_sizes),
        )

    def fit(self, X, y, eval_set=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        init = trainer.init_params(
            X.shape[1], len(self.classes_), tuple(self.hidden_sizes), seed=self.seed
        )
        val = None
        if eval_set is not None:
            Xv = check_array(eval_set[0], dtype=np.float64)
            yv = np.searchsorted(self.classes_, np.asarray(eval_set[1]))
            val = (Xv, yv)
        self.params_, self.history_ = trainer.train_two_stage(init, (X, y_idx), val, self._config())
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit must be called before predict")

    def predict_proba(self, X):
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        return np.stack([trainer.forward(self.params_, row) for row in X])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

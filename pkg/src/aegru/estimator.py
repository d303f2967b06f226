"""scikit-learn estimator wrapper around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionError
from .metrics import r2_score
from .model import AegruParams, ModelConfig, init_params
from .training import TrainConfig, _init_seed, fit_params, predict


def _check_windows(X):
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if X.ndim != 3:
        raise DimensionError(f"expected raw window counts shaped (n_windows, n_steps, n_channels), got {X.shape}")
    if np.any(X < 0):
        raise ValueError("window counts must be non-negative")
    return X


class AEGRURegressor(RegressorMixin, BaseEstimator):
    """Velocity decoder on raw sub-window spike counts.

    ``X`` is ``(n_windows, n_steps, n_channels)`` as produced by
    :class:`aegru.preprocess.SpikeWindower`; the softplus-log transform is
    applied internally so the reconstruction loss can see the raw counts.
    ``y`` is ``(n_windows, 2)``.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`;
    ``variant="vanilla"`` trains the GRU-plus-readout baseline.
    """

    def __init__(self, c_f=32, c_h=32, c_sigma=32, variant="aegru", epochs=50, lr=1e-3,
                 weight_decay=1e-3, batch_size=64, w_v=1.0, w_x=1.0, random_state=0):
        self.c_f = c_f
        self.c_h = c_h
        self.c_sigma = c_sigma
        self.variant = variant
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.w_v = w_v
        self.w_x = w_x
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, lr=self.lr, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, w_v=self.w_v, w_x=self.w_x,
                           seed=int(self.random_state or 0))

    def fit(self, X, y, eval_set=None):
        X = _check_windows(X)
        y = check_array(y, dtype=np.float64, ensure_2d=True)
        if y.shape != (X.shape[0], 2):
            raise DimensionError(f"y must be ({X.shape[0]}, 2), got {y.shape}")
        tcfg = self._train_config()
        mcfg = ModelConfig(c_i=X.shape[2], c_f=self.c_f, c_h=self.c_h, c_sigma=self.c_sigma,
                           variant=self.variant)
        params = init_params(mcfg, seed=_init_seed(tcfg.seed))
        params.metadata["n"] = X.shape[1]
        val = None
        if eval_set is not None:
            val = (_check_windows(eval_set[0]), np.asarray(eval_set[1], dtype=np.float64))
        self.history_ = fit_params(params, X, y, tcfg, val=val)
        self.params_ = params
        self.n_features_in_ = X.shape[2]
        return self

    @classmethod
    def from_params(cls, params: AegruParams):
        """Wrap already-trained parameters (e.g. a loaded checkpoint)."""
        cfg = params.config
        est = cls(c_f=cfg.c_f, c_h=cfg.c_h, c_sigma=cfg.c_sigma, variant=cfg.variant)
        est.params_ = params
        est.history_ = []
        est.n_features_in_ = cfg.c_i
        return est

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = _check_windows(X)
        if X.shape[2] != self.n_features_in_:
            raise DimensionError(f"X has {X.shape[2]} channels, estimator was fitted with {self.n_features_in_}")
        return predict(self.params_, X)

    def score(self, X, y, sample_weight=None):
        """Mean of the x- and y-axis R^2."""
        return r2_score(self.predict(X), y)[2]

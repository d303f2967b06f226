"""Sub-window binning and the softplus-log input transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import Recording
from .errors import ConfigError, InsufficientDataError
from .numerics import softplus_array


@dataclass
class PreprocessConfig:
    ws: int = 20
    n: int = 5
    stride: int = 1

    def __post_init__(self):
        for name in ("ws", "n", "stride"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")

    @property
    def span(self):
        return self.ws * self.n


@dataclass
class WindowedSample:
    counts: np.ndarray  # N x C raw sub-window sums
    features: np.ndarray  # N x C after softplus_log
    target: np.ndarray  # (vx, vy) at t_end
    t_end: int


class WindowedDataset:
    """All windows of one recording, stored as stacked arrays.

    ``counts`` is ``M x N x C``; ``targets`` is ``M x 2``.
    """

    def __init__(self, counts, targets, t_end):
        self.counts = counts
        self.targets = targets
        self.t_end = t_end

    def __len__(self):
        return len(self.t_end)

    def __getitem__(self, i):
        c = self.counts[i]
        return WindowedSample(c, softplus_log(c), self.targets[i], int(self.t_end[i]))

    @property
    def features(self):
        return softplus_log(self.counts)

    @property
    def n_steps(self):
        return self.counts.shape[1]

    @property
    def channel_count(self):
        return self.counts.shape[2]


def bin_windows(spikes, cfg: PreprocessConfig):
    """Sum the latest ``ws * n`` samples into ``n`` sub-windows per prediction.

    Returns ``(windows, t_end)`` where ``windows`` is ``M x n x C`` (oldest
    sub-window first) and ``t_end`` holds the last sample index of each window.
    """
    spikes = np.asarray(spikes)
    if spikes.ndim == 1:
        spikes = spikes[:, None]
    n_samples = spikes.shape[0]
    if n_samples < cfg.span:
        raise InsufficientDataError(
            f"need at least ws*n = {cfg.span} samples of history, got {n_samples}")
    t_end = np.arange(cfg.span - 1, n_samples, cfg.stride)
    csum = np.zeros((n_samples + 1, spikes.shape[1]), dtype=np.int64)
    np.cumsum(spikes, axis=0, out=csum[1:])
    # boundaries[j] is the exclusive end of sub-window j relative to t_end + 1
    offsets = np.arange(-cfg.n, 1) * cfg.ws
    edges = csum[(t_end + 1)[:, None] + offsets[None, :]]
    windows = np.diff(edges, axis=1)
    return windows.astype(np.float64), t_end


def softplus_log(x):
    """``log(softplus(x))``; finite for every real input."""
    return np.log(softplus_array(x))


def make_dataset(rec: Recording, cfg: PreprocessConfig) -> WindowedDataset:
    counts, t_end = bin_windows(rec.spikes, cfg)
    return WindowedDataset(counts, rec.velocity[t_end], t_end)


class SpikeWindower(TransformerMixin, BaseEstimator):
    """Transformer from a ``T x C`` spike-count array to ``M x n x C`` windows.

    Stateless apart from recording the channel count seen in ``fit``. Use
    :meth:`window_targets` to pick the matching velocity rows.
    """

    def __init__(self, ws=20, n=5, stride=1):
        self.ws = ws
        self.n = n
        self.stride = stride

    def _config(self):
        return PreprocessConfig(self.ws, self.n, self.stride)

    def fit(self, X, y=None):
        X = np.asarray(X)
        self._config()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return bin_windows(X, self._config())[0]

    def window_targets(self, y):
        """Rows of ``y`` aligned with the windows produced by :meth:`transform`."""
        cfg = self._config()
        y = np.asarray(y)
        return y[np.arange(cfg.span - 1, len(y), cfg.stride)]

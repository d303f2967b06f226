import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from aegru.data import Recording
from aegru.errors import ConfigError, InsufficientDataError
from aegru.preprocess import PreprocessConfig, SpikeWindower, bin_windows, make_dataset, softplus_log


def _naive_windows(spikes, ws, n, stride):
    """Direct per-window summation used as the reference."""
    out = []
    for t_end in range(ws * n - 1, len(spikes), stride):
        rows = [spikes[t_end - (n - j) * ws + 1: t_end - (n - j - 1) * ws + 1].sum(axis=0) for j in range(n)]
        out.append(rows)
    return np.array(out, dtype=float)


def test_hand_summed_example():
    spikes = np.array([1, 2, 3, 4, 5])
    windows, t_end = bin_windows(spikes, PreprocessConfig(ws=2, n=2))
    assert t_end.tolist() == [3, 4]
    assert windows[:, :, 0].tolist() == [[3, 7], [5, 9]]


def test_identity_windowing():
    spikes = np.random.default_rng(0).integers(0, 5, (30, 4))
    windows, t_end = bin_windows(spikes, PreprocessConfig(ws=1, n=1))
    assert np.array_equal(windows[:, 0, :], spikes)
    assert t_end.tolist() == list(range(30))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3), st.integers(0, 40), st.integers(0, 10_000))
def test_matches_naive_summation(ws, n, stride, extra, seed):
    spikes = np.random.default_rng(seed).integers(0, 9, (ws * n + extra, 3))
    windows, t_end = bin_windows(spikes, PreprocessConfig(ws, n, stride))
    assert np.array_equal(windows, _naive_windows(spikes, ws, n, stride))
    assert len(windows) == (len(spikes) - ws * n) // stride + 1
    # the rows of a window partition its span
    span_totals = np.array([spikes[t - ws * n + 1: t + 1].sum(axis=0) for t in t_end])
    assert np.array_equal(windows.sum(axis=1), span_totals)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_sliding_consistency(ws, n, stride, seed):
    spikes = np.random.default_rng(seed).integers(0, 9, (ws * n + 12, 2))
    full, _ = bin_windows(spikes, PreprocessConfig(ws, n, stride))
    shifted, _ = bin_windows(spikes[stride:], PreprocessConfig(ws, n, stride))
    assert np.array_equal(shifted, full[1:])


def test_insufficient_history():
    with pytest.raises(InsufficientDataError):
        bin_windows(np.zeros((99, 2)), PreprocessConfig(ws=20, n=5))


def test_config_validation():
    with pytest.raises(ConfigError) as info:
        PreprocessConfig(ws=0)
    assert info.value.field == "ws"


class TestSoftplusLog:
    def test_zero(self):
        assert softplus_log(np.array(0.0)) == pytest.approx(math.log(math.log(2.0)), abs=1e-15)
        assert softplus_log(np.array(0.0)) == pytest.approx(-0.366513, abs=1e-6)

    def test_large(self):
        assert softplus_log(np.array(100.0)) == pytest.approx(math.log(100.0), abs=1e-12)

    def test_monotone_example(self):
        assert softplus_log(np.array(1.0)) < softplus_log(np.array(2.0))

    @given(arrays(np.float64, 20, elements=st.floats(0, 1e6)))
    def test_finite_on_count_range(self, x):
        assert np.all(np.isfinite(softplus_log(x)))

    @given(st.floats(-700, 1e6), st.floats(-700, 1e6))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert softplus_log(np.array(lo)) <= softplus_log(np.array(hi))


class TestMakeDataset:
    def test_count(self):
        rec = Recording(np.zeros((1000, 2)), np.zeros((1000, 2)))
        assert len(make_dataset(rec, PreprocessConfig(20, 5, 1))) == 901

    def test_boundary(self):
        rec = Recording(np.zeros((100, 2)), np.zeros((100, 2)))
        assert len(make_dataset(rec, PreprocessConfig(20, 5, 1))) == 1

    def test_targets_and_features(self, small_recording):
        ds = make_dataset(small_recording, PreprocessConfig(4, 3, 2))
        assert np.array_equal(ds.targets, small_recording.velocity[ds.t_end])
        sample = ds[5]
        assert sample.t_end == ds.t_end[5]
        assert np.array_equal(sample.features, softplus_log(sample.counts))
        assert ds.features.shape == (len(ds), 3, small_recording.channel_count)


class TestSpikeWindower:
    def test_transform_matches_bin_windows(self, small_recording):
        tr = SpikeWindower(ws=3, n=2, stride=4)
        out = tr.fit_transform(small_recording.spikes)
        expected, t_end = bin_windows(small_recording.spikes, PreprocessConfig(3, 2, 4))
        assert np.array_equal(out, expected)
        assert np.array_equal(tr.window_targets(small_recording.velocity), small_recording.velocity[t_end])

    def test_clone_and_params(self):
        tr = clone(SpikeWindower(ws=7, n=3))
        assert tr.get_params() == {"ws": 7, "n": 3, "stride": 1}

    def test_bad_params_fail_at_fit(self):
        with pytest.raises(ConfigError):
            SpikeWindower(n=0).fit(np.zeros((10, 2)))

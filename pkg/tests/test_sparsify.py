import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aegru.data import SynthConfig, generate_synthetic
from aegru.errors import ConfigError
from aegru.model import ModelConfig, init_params
from aegru.preprocess import PreprocessConfig
from aegru.sparsify import (PruneConfig, QuantConfig, finetune, l1_prune, quantize, sparsity_report,
                            write_sparsity_csv)
from aegru.training import TrainConfig


def _params(seed=0):
    return init_params(ModelConfig(c_i=6, c_f=4, c_h=5, c_sigma=3), seed=seed)


class TestPrune:
    def test_four_weight_example(self):
        params = init_params(ModelConfig(c_i=1, c_f=4, c_h=1, c_sigma=1))
        params["fc_up.weight"] = np.array([[0.5, -0.1, 0.3, -0.05]])
        l1_prune(params, PruneConfig(tpr=0.5))
        assert params["fc_up.weight"].tolist() == [[0.5, 0.0, 0.3, 0.0]]

    def test_ties_prune_lower_index(self):
        params = init_params(ModelConfig(c_i=1, c_f=4, c_h=1, c_sigma=1))
        params["fc_up.weight"] = np.array([[0.2, -0.2, 0.2, -0.2]])
        masks = l1_prune(params, PruneConfig(tpr=0.5))
        assert masks["fc_up.weight"].tolist() == [[0.0, 0.0, 1.0, 1.0]]

    def test_zero_rate(self):
        params = _params()
        before = params.copy()
        assert l1_prune(params, PruneConfig(tpr=0.0)) == {}
        assert params.allclose(before)

    @pytest.mark.parametrize("tpr", [0.2, 0.5, 0.75])
    def test_exact_counts_and_scope(self, tpr):
        params = _params(3)
        l1_prune(params, PruneConfig(tpr=tpr))
        rows = {r["tensor"]: r for r in sparsity_report(params)}
        assert set(params.masks) == set(params.prunable_names)
        for name in params.prunable_names:
            assert rows[name]["zeros"] == int(np.floor(tpr * params[name].size))
        assert "fc1.weight" not in params.masks and "gru.b_h" not in params.masks
        assert np.all(params["fc1.weight"] != 0)

    def test_global_mode(self):
        params = _params(4)
        l1_prune(params, PruneConfig(tpr=0.5), mode="global")
        total = sum(params[n].size for n in params.prunable_names)
        assert sparsity_report(params)[-1]["zeros"] == total // 2

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
    def test_scale_equivariant(self, seed, factor):
        a = _params(seed)
        b = a.copy()
        b["gru.w_hc"] = b["gru.w_hc"] * factor
        ma = l1_prune(a, PruneConfig(tpr=0.4))
        mb = l1_prune(b, PruneConfig(tpr=0.4))
        assert np.array_equal(ma["gru.w_hc"], mb["gru.w_hc"])

    def test_bad_rate(self):
        with pytest.raises(ConfigError) as info:
            PruneConfig(tpr=1.0)
        assert info.value.field == "tpr"


class TestQuantize:
    def test_examples(self):
        params = init_params(ModelConfig(c_i=1, c_f=3, c_h=1, c_sigma=1))
        params["fc_up.weight"] = np.array([[0.1234, 0.0, 3.7]])
        q = quantize(params)
        assert q["fc_up.weight"].tolist() == [[0.125, 0.0, 0.9921875]]
        assert q.quant == (7, 8) and params.quant is None

    def test_lower_clamp(self):
        params = init_params(ModelConfig(c_i=1, c_f=2, c_h=1, c_sigma=1))
        params["fc_up.weight"] = np.array([[-1.0, -2.5]])
        assert quantize(params)["fc_up.weight"].tolist() == [[-1.0, -1.0]]

    @given(arrays(np.float64, (6, 4), elements=st.floats(-1.0, 1.0 - 2 ** -7)))
    def test_half_step_error(self, w):
        params = _params()
        params["fc_up.weight"] = w
        q = quantize(params)
        assert np.max(np.abs(q["fc_up.weight"] - w)) <= 2 ** -8
        assert quantize(q).allclose(q)
        assert np.all(q["fc_up.weight"] * 128 == np.round(q["fc_up.weight"] * 128))

    def test_only_prunable_weights_change(self):
        params = _params(1)
        params["gru.b_i"] = params["gru.b_i"] + 0.01234
        q = quantize(params)
        assert np.array_equal(q["gru.b_i"], params["gru.b_i"])
        assert np.array_equal(q["fc3.weight"], params["fc3.weight"])

    def test_pruned_zeros_survive(self):
        params = _params(2)
        l1_prune(params, PruneConfig(tpr=0.5))
        before = sparsity_report(params)
        assert sparsity_report(quantize(params)) == before

    def test_only_signed_q7_format(self):
        with pytest.raises(ConfigError):
            QuantConfig(bits=4)
        assert QuantConfig().range == (-1.0, 1.0 - 2 ** -7)


def test_fresh_init_is_dense(tmp_path):
    rows = sparsity_report(init_params(ModelConfig(c_i=96)))
    assert rows[-1]["tensor"] == "global" and rows[-1]["fraction"] < 1e-3
    write_sparsity_csv(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "tensor,total,zeros,fraction"


@pytest.fixture(scope="module")
def pruned_setup():
    rec = generate_synthetic(SynthConfig(channel_count=6, duration_samples=1000, seed=5))
    params = init_params(ModelConfig(c_i=6, c_f=4, c_h=4, c_sigma=4), seed=1)
    masks = l1_prune(params, PruneConfig(tpr=0.5))
    return rec, params, masks


class TestFinetune:
    def test_zero_epochs_is_identity(self, pruned_setup):
        rec, params, masks = pruned_setup
        tuned = finetune(params, masks, rec, TrainConfig(), PreprocessConfig(3, 2), epochs=0)
        assert tuned.allclose(params)

    def test_masks_hold(self, pruned_setup):
        rec, params, masks = pruned_setup
        tuned = finetune(params, masks, rec, TrainConfig(lr=1e-2), PreprocessConfig(3, 2), epochs=2)
        assert not tuned.allclose(params)
        for name, mask in masks.items():
            assert np.all(tuned[name][mask == 0] == 0.0)
        assert len(tuned.metadata["finetune_history"]) == 2

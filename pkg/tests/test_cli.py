import csv
import json
import struct

import pytest

from aegru.cli import main, summarize_ablation
from aegru.config import RunConfig, read_config_file
from aegru.data import load_ndr
from aegru.errors import ConfigError
from aegru.model import load_checkpoint

SMALL = ["--channels", "6", "--samples", "600"]
FAST = ["--ws", "3", "--n", "2", "--epochs", "1", "--c-f", "4", "--c-h", "4"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", *SMALL, "--seed", "7", "--out", str(d / "rec.ndr")]) == 0
    assert main(["train", str(d / "rec.ndr"), *FAST, "--out", str(d / "m.aegw")]) == 0
    return d


def test_synth_deterministic(workdir, capsys):
    assert main(["synth", *SMALL, "--seed", "7", "--out", str(workdir / "again.ndr")]) == 0
    assert (workdir / "again.ndr").read_bytes() == (workdir / "rec.ndr").read_bytes()
    assert "channels=6" in capsys.readouterr().out
    assert load_ndr(workdir / "rec.ndr").channel_count == 6


def test_train_records_windowing(workdir):
    params = load_checkpoint(workdir / "m.aegw")
    assert params.metadata == {"ws": 3, "n": 2}
    assert (workdir / "m.aegw.history.csv").exists()


def test_invalid_tpr_names_field(workdir, capsys):
    code = main(["train", str(workdir / "rec.ndr"), *FAST, "--tpr", "1.5", "--out", str(workdir / "x.aegw")])
    assert code == 2
    assert "tpr" in capsys.readouterr().err
    assert not (workdir / "x.aegw").exists()


def test_unknown_config_key(workdir, tmp_path, capsys):
    (tmp_path / "run.cfg").write_text("# comment\nepochs = 1\ncolour = blue\n")
    assert main(["synth", "--config", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "r.ndr")]) == 2
    assert "colour" in capsys.readouterr().err


def test_flags_override_file(tmp_path):
    (tmp_path / "run.cfg").write_text("channels = 4  # inline\nsamples = 300\nseed = 3\n")
    assert main(["synth", "--config", str(tmp_path / "run.cfg"), "--channels", "5",
                 "--out", str(tmp_path / "r.ndr")]) == 0
    rec = load_ndr(tmp_path / "r.ndr")
    assert rec.channel_count == 5 and rec.n_samples == 300


def test_prune_zero_then_bench_matches(workdir, capsys):
    base, pruned = workdir / "base.json", workdir / "p0.json"
    assert main(["bench", str(workdir / "m.aegw"), str(workdir / "rec.ndr"), "--out", str(base)]) == 0
    assert main(["prune", str(workdir / "m.aegw"), str(workdir / "rec.ndr"), "--tpr", "0", "--no-finetune",
                 "--out", str(workdir / "p0.aegw")]) == 0
    assert main(["bench", str(workdir / "p0.aegw"), str(workdir / "rec.ndr"), "--out", str(pruned)]) == 0
    a, b = json.loads(base.read_text()), json.loads(pruned.read_text())
    assert a["effective_macs"] == b["effective_macs"]
    assert a["metadata"]["n"] == 2


def test_prune_finetune_quantize_bench(workdir):
    assert main(["prune", str(workdir / "m.aegw"), str(workdir / "rec.ndr"), "--tpr", "0.5",
                 "--finetune-epochs", "1", "--sparsity-csv", str(workdir / "s.csv"),
                 "--out", str(workdir / "p.aegw")]) == 0
    assert main(["quantize", str(workdir / "p.aegw"), "--out", str(workdir / "q.aegw")]) == 0
    assert load_checkpoint(workdir / "q.aegw").quant == (7, 8)
    assert main(["bench", str(workdir / "q.aegw"), str(workdir / "rec.ndr"), "--csv", str(workdir / "q.csv"),
                 "--out", str(workdir / "q.json")]) == 0
    report = json.loads((workdir / "q.json").read_text())
    assert report["metadata"]["quantized"] is True
    rows = list(csv.DictReader(open(workdir / "s.csv")))
    assert rows[-1]["tensor"] == "global"


def test_grid_rows(workdir):
    out = workdir / "grid.csv"
    assert main(["grid", str(workdir / "rec.ndr"), "--ws-list", "2,3", "--n-list", "2,3", "--epochs", "1",
                 "--c-f", "3", "--c-h", "3", "--out", str(out)]) == 0
    assert len(list(csv.DictReader(open(out)))) == 4


def test_sweep_tpr(workdir):
    out = workdir / "sweep.csv"
    assert main(["sweep-tpr", str(workdir / "rec.ndr"), "--checkpoint", str(workdir / "m.aegw"),
                 "--tpr-list", "0,0.5", "--finetune-epochs", "1", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [float(r["tpr"]) for r in rows] == [0.0, 0.5]
    assert float(rows[0]["effective_macs"]) > float(rows[1]["effective_macs"])


def test_ablation_rows(workdir):
    out = workdir / "ablate.csv"
    assert main(["ablate", str(workdir / "rec.ndr"), *FAST, "--runs", "5", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2 * 5 + 4
    assert [r["seed"] for r in rows[-4:]] == ["mean", "std", "mean", "std"]


def test_missing_checkpoint_field_is_format_error(workdir, tmp_path, capsys):
    raw = (workdir / "m.aegw").read_bytes()
    (tmp_path / "cut.aegw").write_bytes(raw[:8 + 20])
    assert main(["quantize", str(tmp_path / "cut.aegw"), "--out", str(tmp_path / "q.aegw")]) == 3
    assert "offset" in capsys.readouterr().err


def test_wrong_version_is_format_error(workdir, tmp_path):
    raw = bytearray((workdir / "m.aegw").read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    (tmp_path / "v2.aegw").write_bytes(bytes(raw))
    assert main(["quantize", str(tmp_path / "v2.aegw"), "--out", str(tmp_path / "q.aegw")]) == 3


def test_missing_file_exit_code(tmp_path):
    assert main(["quantize", str(tmp_path / "nope.aegw"), "--out", str(tmp_path / "q")]) == 3


def test_missing_out(workdir):
    assert main(["synth"]) == 2


def test_run_config_rejects_unknown():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_values({"bogus": "1"})
    assert info.value.field == "bogus"
    with pytest.raises(ConfigError):
        RunConfig.from_values({"epochs": "many"})
    cfg = RunConfig.from_values({"seed": "9"})
    assert cfg.synth.seed == 9 and cfg.train.seed == 9


def test_read_config_file_errors(tmp_path):
    (tmp_path / "bad.cfg").write_text("epochs 3\n")
    with pytest.raises(ConfigError, match=":1:"):
        read_config_file(tmp_path / "bad.cfg")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")


def test_summarize_ablation():
    rows = [{"model": m, "seed": s, "r2_mean": v, "r2_x": v, "r2_y": v, "footprint_bytes": 10}
            for s, (a, b) in enumerate([(0.1, 0.3), (0.2, 0.5)]) for m, v in (("vanilla", a), ("aegru", b))]
    summary = {(r["model"], r["seed"]): r for r in summarize_ablation(rows)}
    assert summary[("aegru", "mean")]["r2_mean"] == pytest.approx(0.4)
    assert summary[("vanilla", "std")]["r2_mean"] == pytest.approx(0.0707106781)

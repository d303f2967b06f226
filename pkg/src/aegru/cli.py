"""Command-line entry point: ``aegru <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data or file-format error,
4 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, read_config_file
from .data import generate_synthetic, load_ndr, save_ndr
from .errors import AegruError, ConfigError
from .metrics import benchmark, write_reports_csv
from .model import load_checkpoint, save_checkpoint
from .preprocess import PreprocessConfig
from .sparsify import finetune, l1_prune, quantize, sparsity_report, write_sparsity_csv
from .training import evaluate, grid_search, heldout_dataset, train_model, write_grid_csv, write_history_csv

log = logging.getLogger("aegru")

# CLI flag -> config key
COMMON_FLAGS = {"seed": "seed", "ws": "ws", "n": "n", "tpr": "tpr", "epochs": "epochs"}
EXTRA_FLAGS = {
    "channels": "channels", "samples": "samples", "tuning_gain": "tuning_gain",
    "baseline_log_rate": "baseline_log_rate", "velocity_smoothness": "velocity_smoothness",
    "lr": "lr", "weight_decay": "weight_decay", "batch_size": "batch_size",
    "w_v": "w_v", "w_x": "w_x", "finetune_epochs": "finetune_epochs", "prune_mode": "prune_mode",
    "variant": "variant", "c_f": "c_f", "c_h": "c_h",
}


def _common(parser):
    parser.add_argument("--config", type=Path, help="key = value configuration file")
    parser.add_argument("--seed", help="unsigned 64-bit seed")
    parser.add_argument("--out", type=Path, help="output path")
    parser.add_argument("--ws", help="samples per sub-window")
    parser.add_argument("--n", help="number of sub-windows (GRU steps)")
    parser.add_argument("--tpr", help="target pruning rate in [0, 1)")
    parser.add_argument("--epochs", help="training epochs")
    for flag in EXTRA_FLAGS:
        parser.add_argument("--" + flag.replace("_", "-"), dest=flag, help=argparse.SUPPRESS)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")


def build_parser():
    parser = argparse.ArgumentParser(prog="aegru", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic NDR recording")
    _common(p)

    p = sub.add_parser("train", help="train a model on the first half of a recording")
    p.add_argument("data", type=Path)
    p.add_argument("--history", type=Path, help="history CSV (default: <out>.history.csv)")
    _common(p)

    p = sub.add_parser("prune", help="L1-prune a checkpoint and fine-tune it")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data", type=Path)
    p.add_argument("--no-finetune", action="store_true")
    p.add_argument("--sparsity-csv", type=Path)
    _common(p)

    p = sub.add_parser("quantize", help="round prunable weights to 8-bit fixed point")
    p.add_argument("checkpoint", type=Path)
    _common(p)

    p = sub.add_parser("bench", help="R^2, footprint and MAC report on the test split")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("data", type=Path)
    p.add_argument("--csv", type=Path, help="also write a one-row CSV report")
    _common(p)

    p = sub.add_parser("grid", help="test R^2 over a WS x N grid")
    p.add_argument("data", type=Path)
    p.add_argument("--ws-list", default="10,20", help="comma-separated window sizes")
    p.add_argument("--n-list", default="3,5", help="comma-separated step counts")
    p.add_argument("--jobs", type=int, default=1)
    _common(p)

    p = sub.add_parser("sweep-tpr", help="prune-and-fine-tune curve over pruning rates")
    p.add_argument("data", type=Path)
    p.add_argument("--tpr-list", default="0,0.2,0.4,0.5,0.6,0.8")
    p.add_argument("--checkpoint", type=Path, help="start from this model instead of training one")
    _common(p)

    p = sub.add_parser("ablate", help="AEGRU vs vanilla GRU over matched seeds")
    p.add_argument("data", type=Path)
    p.add_argument("--runs", type=int, default=5, help="number of seeds")
    _common(p)
    return parser


def load_run_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for flag, key in {**COMMON_FLAGS, **EXTRA_FLAGS}.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return RunConfig.from_values(values)


def _require_out(args, default=None):
    if args.out is None:
        if default is None:
            raise ConfigError("out", "an output path is required (--out PATH)")
        return default
    return args.out


def _float_list(key, text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(key, f"{text!r} is not a comma-separated list of numbers") from None
    if not values:
        raise ConfigError(key, "list is empty")
    return values


def _int_list(key, text):
    values = _float_list(key, text)
    if any(v != int(v) for v in values):
        raise ConfigError(key, f"{text!r} must contain integers")
    return [int(v) for v in values]


def _pcfg_for(params, cfg: RunConfig, args):
    """Windowing of a checkpoint: its recorded ws/n unless overridden on the command line."""
    ws = cfg.preprocess.ws if args.ws is not None or "ws" not in params.metadata else params.metadata["ws"]
    n = cfg.preprocess.n if args.n is not None or "n" not in params.metadata else params.metadata["n"]
    return PreprocessConfig(ws=ws, n=n, stride=cfg.preprocess.stride)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig):
    out = _require_out(args)
    rec = generate_synthetic(cfg.synth)
    save_ndr(rec, out)
    print(f"wrote {out}: channels={rec.channel_count} samples={rec.n_samples} "
          f"mean_rate={rec.spikes.mean():.4f} counts/bin")


def cmd_train(args, cfg: RunConfig):
    out = _require_out(args)
    rec = load_ndr(args.data)
    params, history = train_model(rec, cfg.preprocess, cfg.model, cfg.train)
    save_checkpoint(params, out)
    hist_path = args.history or out.with_name(out.name + ".history.csv")
    write_history_csv(history, hist_path)
    r2x, r2y, r2m = evaluate(params, heldout_dataset(rec, cfg.preprocess))
    print(f"test r2_mean={r2m:.4f} (x={r2x:.4f}, y={r2y:.4f}); checkpoint {out}, history {hist_path}")


def cmd_prune(args, cfg: RunConfig):
    out = _require_out(args)
    params = load_checkpoint(args.checkpoint)
    rec = load_ndr(args.data)
    l1_prune(params, cfg.prune, mode=cfg.prune_mode)
    if not args.no_finetune:
        params = finetune(params, params.masks, rec, cfg.train, _pcfg_for(params, cfg, args),
                          epochs=cfg.prune.finetune_epochs)
        params.metadata.pop("finetune_history", None)
    save_checkpoint(params, out)
    rows = sparsity_report(params)
    if args.sparsity_csv:
        write_sparsity_csv(rows, args.sparsity_csv)
    print(f"pruned at tpr={cfg.prune.tpr} ({cfg.prune_mode}); global zero fraction "
          f"{rows[-1]['fraction']:.4f}; checkpoint {out}")


def cmd_quantize(args, cfg: RunConfig):
    out = _require_out(args)
    params = quantize(load_checkpoint(args.checkpoint), cfg.quant)
    save_checkpoint(params, out)
    print(f"quantized to {cfg.quant.bits}-bit (qf={cfg.quant.qf}); checkpoint {out}")


def cmd_bench(args, cfg: RunConfig):
    params = load_checkpoint(args.checkpoint)
    rec = load_ndr(args.data)
    pcfg = _pcfg_for(params, cfg, args)
    report = benchmark(params, heldout_dataset(rec, pcfg), pcfg=pcfg)
    if args.out:
        report.write_json(args.out)
    else:
        print(report.to_json())
    if args.csv:
        write_reports_csv([report], args.csv, names=[args.checkpoint.stem])
    return report


def cmd_grid(args, cfg: RunConfig):
    out = _require_out(args)
    rec = load_ndr(args.data)
    rows = grid_search(rec, _int_list("ws_list", args.ws_list), _int_list("n_list", args.n_list),
                       cfg.model, cfg.train, n_jobs=args.jobs)
    write_grid_csv(rows, out)
    best = max(rows, key=lambda r: r["r2_mean"])
    print(f"wrote {len(rows)} cells to {out}; best ws={best['ws']} n={best['n']} r2_mean={best['r2_mean']:.4f}")


def cmd_sweep_tpr(args, cfg: RunConfig):
    from .sparsify import PruneConfig

    out = _require_out(args)
    rec = load_ndr(args.data)
    tprs = _float_list("tpr_list", args.tpr_list)
    if args.checkpoint:
        base = load_checkpoint(args.checkpoint)
    else:
        base, _ = train_model(rec, cfg.preprocess, cfg.model, cfg.train)
    pcfg = _pcfg_for(base, cfg, args)
    test = heldout_dataset(rec, pcfg)
    rows = []
    for tpr in tprs:
        pruned = base.copy()
        l1_prune(pruned, PruneConfig(tpr=tpr, finetune_epochs=cfg.prune.finetune_epochs), mode=cfg.prune_mode)
        tuned = finetune(pruned, pruned.masks, rec, cfg.train, pcfg, epochs=cfg.prune.finetune_epochs)
        rep = benchmark(tuned, test, pcfg=pcfg)
        rows.append({"tpr": tpr, "r2_mean": rep.r2_mean, "r2_x": rep.r2_x, "r2_y": rep.r2_y,
                     "effective_macs": rep.effective_macs, "footprint_bytes": rep.footprint_bytes,
                     "zero_fraction": sparsity_report(tuned)[-1]["fraction"]})
        log.info("tpr %.2f -> r2 %.4f, macs %.1f", tpr, rep.r2_mean, rep.effective_macs)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} pruning rates to {out}")


def run_ablation(rec, cfg: RunConfig, runs=5):
    """Train both variants on ``runs`` matched seeds; returns per-run rows."""
    rows = []
    test = heldout_dataset(rec, cfg.preprocess)
    for i in range(runs):
        seed = cfg.seed + i
        for variant in ("vanilla", "aegru"):
            params, _ = train_model(rec, cfg.preprocess, replace(cfg.model, variant=variant),
                                    replace(cfg.train, seed=seed))
            rep = benchmark(params, test, pcfg=cfg.preprocess)
            rows.append({"model": variant, "seed": seed, "r2_mean": rep.r2_mean, "r2_x": rep.r2_x,
                         "r2_y": rep.r2_y, "footprint_bytes": rep.footprint_bytes})
            log.info("%s seed %d -> r2 %.4f", variant, seed, rep.r2_mean)
    return rows


def summarize_ablation(rows):
    summary = []
    keys = ("r2_mean", "r2_x", "r2_y", "footprint_bytes")
    for variant in ("vanilla", "aegru"):
        runs = [r for r in rows if r["model"] == variant]
        summary.append({"model": variant, "seed": "mean", **{k: statistics.fmean(r[k] for r in runs) for k in keys}})
        summary.append({"model": variant, "seed": "std",
                        **{k: statistics.stdev([r[k] for r in runs]) if len(runs) > 1 else 0.0 for k in keys}})
    return summary


def cmd_ablate(args, cfg: RunConfig):
    out = _require_out(args)
    if args.runs < 1:
        raise ConfigError("runs", "must be >= 1")
    rows = run_ablation(load_ndr(args.data), cfg, args.runs)
    summary = summarize_ablation(rows)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["model", "seed", "r2_mean", "r2_x", "r2_y", "footprint_bytes"])
        writer.writeheader()
        writer.writerows(rows + summary)
    means = {r["model"]: r["r2_mean"] for r in summary if r["seed"] == "mean"}
    print(f"wrote {out}: mean r2 vanilla={means['vanilla']:.4f} aegru={means['aegru']:.4f}")


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "prune": cmd_prune, "quantize": cmd_quantize,
    "bench": cmd_bench, "grid": cmd_grid, "sweep-tpr": cmd_sweep_tpr, "ablate": cmd_ablate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_run_config(args)
        COMMANDS[args.command](args, cfg)
    except AegruError as exc:
        print(f"aegru {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"aegru {args.command}: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

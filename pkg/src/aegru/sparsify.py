"""Post-training magnitude pruning, masked fine-tuning and 8-bit weight rounding."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .model import AegruParams
from .training import TrainConfig, finetune_data, fit_params


@dataclass
class PruneConfig:
    tpr: float = 0.5
    finetune_epochs: int = 10

    def __post_init__(self):
        if not 0 <= self.tpr < 1:
            raise ConfigError("tpr", f"target pruning rate must lie in [0, 1), got {self.tpr!r}")
        if int(self.finetune_epochs) != self.finetune_epochs or self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs", f"must be an integer >= 0, got {self.finetune_epochs!r}")


@dataclass
class QuantConfig:
    bits: int = 8
    qf: int = 7

    def __post_init__(self):
        if (self.bits, self.qf) != (8, 7):
            raise ConfigError("bits/qf", f"only the signed 8-bit format with 7 fractional bits is supported, "
                                         f"got bits={self.bits}, qf={self.qf}")

    @property
    def step(self):
        return 2.0 ** -self.qf

    @property
    def range(self):
        half = 2 ** (self.bits - 1)
        return -half * self.step, (half - 1) * self.step


def l1_prune(params: AegruParams, cfg: PruneConfig, mode="local"):
    """Zero the smallest-magnitude FC and GRU weights in place.

    ``mode="local"`` removes ``floor(tpr * n)`` weights from every prunable
    tensor; ``mode="global"`` ranks all prunable weights together. Ties go
    to the lower flat index (tensor order first in global mode). Masks are
    attached to ``params`` and returned.
    """
    if not 0 <= cfg.tpr < 1:
        raise ConfigError("tpr", f"target pruning rate must lie in [0, 1), got {cfg.tpr!r}")
    names = params.prunable_names
    if cfg.tpr == 0:
        params.masks = {}
        return {}
    if mode == "local":
        masks = {}
        for name in names:
            w = params[name]
            k = int(np.floor(cfg.tpr * w.size))
            mask = np.ones(w.size)
            mask[np.argsort(np.abs(w).ravel(), kind="stable")[:k]] = 0.0
            masks[name] = mask.reshape(w.shape)
    elif mode == "global":
        flat = np.concatenate([np.abs(params[n]).ravel() for n in names])
        k = int(np.floor(cfg.tpr * flat.size))
        keep = np.ones(flat.size)
        keep[np.argsort(flat, kind="stable")[:k]] = 0.0
        masks, offset = {}, 0
        for name in names:
            size = params[name].size
            masks[name] = keep[offset:offset + size].reshape(params[name].shape)
            offset += size
    else:
        raise ConfigError("mode", f"expected 'local' or 'global', got {mode!r}")
    params.masks = masks
    params.apply_masks()
    return masks


def finetune(params: AegruParams, masks, rec, tcfg: TrainConfig, pcfg, epochs=10):
    """Retrain a pruned copy of ``params`` on the train+val span of ``rec``.

    The cosine schedule restarts at ``tcfg.lr`` over ``epochs``; masked
    weights stay exactly zero after every update.
    """
    tuned = params.copy()
    tuned.masks = {k: np.asarray(v, dtype=np.float64).copy() for k, v in (masks or {}).items()}
    if epochs == 0:
        return tuned
    data, _ = finetune_data(rec, pcfg)
    tuned.metadata["finetune_history"] = fit_params(
        tuned, data.counts, data.targets, replace(tcfg, epochs=epochs), epochs=epochs)
    return tuned


def quantize(params: AegruParams, cfg: QuantConfig = None):
    """Round every prunable weight to the signed fixed-point grid.

    Returns a copy with ``round(2^qf * w) / 2^qf`` clamped to the format's
    range and the quantization descriptor recorded.
    """
    cfg = cfg or QuantConfig()
    out = params.copy()
    lo, hi = cfg.range
    scale = 2.0 ** cfg.qf
    for name in out.prunable_names:
        out[name] = np.clip(np.round(out[name] * scale) / scale, lo, hi)
    out.quant = (cfg.qf, cfg.bits)
    return out


def sparsity_report(params: AegruParams):
    """Rows of ``(tensor, total, zeros, fraction)`` plus a ``global`` row."""
    rows = []
    total_all = zeros_all = 0
    for name in params.prunable_names:
        w = params[name]
        zeros = int(np.count_nonzero(w == 0))
        rows.append({"tensor": name, "total": w.size, "zeros": zeros, "fraction": zeros / w.size})
        total_all += w.size
        zeros_all += zeros
    rows.append({"tensor": "global", "total": total_all, "zeros": zeros_all,
                 "fraction": zeros_all / total_all if total_all else 0.0})
    return rows


def write_sparsity_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tensor", "total", "zeros", "fraction"])
        writer.writeheader()
        writer.writerows(rows)

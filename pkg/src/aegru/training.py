"""Losses, Adam with cosine annealing, and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .data import Recording, concat_recordings, split_recording
from .errors import ConfigError, ContractError, DomainError, NumericError
from .metrics import r2_score
from .model import AegruParams, ModelConfig, forward, as_tensors, init_params
from .numerics import Tensor
from .preprocess import PreprocessConfig, WindowedDataset, make_dataset, softplus_log

logger = logging.getLogger(__name__)

INIT_STREAM, SHUFFLE_STREAM, SAMPLER_STREAM = 1, 2, 3
EVAL_CHUNK = 4096


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 64
    w_v: float = 1.0
    w_x: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError("epochs", f"must be an integer >= 1, got {self.epochs!r}")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be > 0, got {self.lr!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be >= 0, got {self.weight_decay!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError("batch_size", f"must be an integer >= 1, got {self.batch_size!r}")
        if self.w_v < 0:
            raise ConfigError("w_v", f"must be >= 0, got {self.w_v!r}")
        if self.w_x < 0:
            raise ConfigError("w_x", f"must be >= 0, got {self.w_x!r}")


# ---------------------------------------------------------------------------
# losses


def mse_loss(v_hat, v):
    """Mean over the batch of squared 2-norms ``||v_hat_t - v_t||^2``.

    Accepts tensors (differentiable) or arrays (returns a float).
    """
    if not isinstance(v_hat, Tensor):
        v_hat, v = np.atleast_2d(v_hat), np.atleast_2d(v)
        if v_hat.shape != v.shape:
            raise ContractError(f"mse_loss: shapes differ {v_hat.shape} vs {v.shape}")
        if v.shape[0] == 0:
            raise ContractError("mse_loss: empty batch")
        return float(((v_hat - v) ** 2).sum() / v.shape[0])
    if v_hat.shape[0] == 0:
        raise ContractError("mse_loss: empty batch")
    v = v if isinstance(v, Tensor) else Tensor(v)
    diff = nx.sub(v_hat, v)
    return nx.scale(nx.sum_all(nx.hadamard(diff, diff)), 1.0 / v_hat.shape[0])


def poisson_nll(r_hat, x):
    """Mean of ``r_hat - x * log(r_hat)``; the ``log(x!)`` term is dropped."""
    r_hat = np.asarray(r_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if r_hat.shape != x.shape:
        raise ContractError(f"poisson_nll: shapes differ {r_hat.shape} vs {x.shape}")
    if np.any(~(r_hat > 0)):
        bad = np.unravel_index(np.flatnonzero(~(r_hat > 0))[0], r_hat.shape)
        raise DomainError(f"poisson_nll: rate must be positive, got {r_hat[bad]!r} at {tuple(map(int, bad))}")
    return float(np.mean(r_hat - x * np.log(r_hat)))


def poisson_nll_from_log_rate(log_rate, x):
    """Tape version of :func:`poisson_nll` taking ``log(r_hat)``."""
    x = Tensor(x)
    return nx.mean_all(nx.sub(nx.exp(log_rate), nx.hadamard(x, log_rate)))


def combined_loss(batch, params: AegruParams, cfg: TrainConfig, seed, tensors=None, training=True):
    """``w_v * L_v + w_x * L_x`` for one mini-batch.

    ``batch`` is ``(counts, targets)`` with raw sub-window counts
    ``B x N x C_i``; the reconstruction term is scored against those counts.
    Returns ``(loss_tensor, forward_outputs)``.
    """
    counts, targets = batch
    counts = np.asarray(counts, dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else nx.make_rng(seed)
    aux = params.config.variant == "aegru" and cfg.w_x > 0
    out = forward(params, softplus_log(counts), tensors=tensors, training=training, rng=rng if aux else None)
    loss = nx.scale(mse_loss(out["v"], targets), cfg.w_v)
    if aux:
        b, n, c = counts.shape
        x2 = counts.transpose(1, 0, 2).reshape(n * b, c)
        loss = nx.add(loss, nx.scale(poisson_nll_from_log_rate(out["log_rate"], x2), cfg.w_x))
    return loss, out


# ---------------------------------------------------------------------------
# optimiser


class AdamState:
    def __init__(self, params: AegruParams):
        self.step = 0
        self.m = {k: np.zeros_like(params[k]) for k in params.trainable_names}
        self.v = {k: np.zeros_like(params[k]) for k in params.trainable_names}


def adam_step(params: AegruParams, grads, state: AdamState, lr_t, cfg: TrainConfig):
    """Adam with bias correction and decoupled weight decay, in place.

    Positions with a zero in ``params.masks`` stay exactly zero.
    """
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for name, g in grads.items():
        w = params[name]
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay:
            w *= 1.0 - lr_t * cfg.weight_decay
        w -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        mask = params.masks.get(name)
        if mask is not None:
            w *= mask
            m *= mask
            v *= mask


def cosine_lr(epoch, cfg: TrainConfig):
    if not 0 <= epoch < cfg.epochs:
        raise ContractError(f"cosine_lr: epoch {epoch} outside [0, {cfg.epochs})")
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


# ---------------------------------------------------------------------------
# loops


def predict(params: AegruParams, counts):
    """Velocity predictions for raw window counts ``M x N x C_i``."""
    counts = np.asarray(counts)
    if counts.shape[0] == 0:
        raise ContractError("predict: empty dataset")
    outs = [forward(params, softplus_log(counts[i:i + EVAL_CHUNK]))["v"].value
            for i in range(0, len(counts), EVAL_CHUNK)]
    return np.concatenate(outs)


def evaluate(params: AegruParams, dataset: WindowedDataset):
    """``(r2_x, r2_y, r2_mean)`` of the model on every window of ``dataset``."""
    if len(dataset) == 0:
        raise ContractError("evaluate: empty dataset")
    return r2_score(predict(params, dataset.counts), dataset.targets)


def fit_params(params: AegruParams, counts, targets, cfg: TrainConfig, val=None, epochs=None):
    """Train ``params`` in place with shuffled mini-batches.

    ``val`` is an optional ``(counts, targets)`` pair scored after each epoch.
    Returns the history as a list of ``{"epoch", "train_loss", "val_r2"}``.
    """
    epochs = cfg.epochs if epochs is None else epochs
    if epochs == 0:
        return []
    sched = replace(cfg, epochs=epochs)
    shuffle_rng = nx.make_rng(cfg.seed, SHUFFLE_STREAM)
    sampler_rng = nx.make_rng(cfg.seed, SAMPLER_STREAM)
    state = AdamState(params)
    params.apply_masks()
    m = len(counts)
    history = []
    for epoch in range(epochs):
        lr_t = cosine_lr(epoch, sched)
        order = shuffle_rng.permutation(m)
        total, seen = 0.0, 0
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tensors = as_tensors(params, requires_grad=True)
            loss, _ = combined_loss((counts[idx], targets[idx]), params, cfg, sampler_rng, tensors=tensors)
            value = float(loss.value[0, 0])
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            nx.backward(loss)
            grads = {k: tensors[k].grad for k in params.trainable_names}
            adam_step(params, grads, state, lr_t, cfg)
            total += value * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "train_loss": total / seen, "val_r2": float("nan")}
        if val is not None:
            row["val_r2"] = r2_score(predict(params, val[0]), val[1])[2]
        history.append(row)
        logger.info("epoch %d loss %.5f val_r2 %.4f", epoch, row["train_loss"], row["val_r2"])
    return history


def train_model(rec: Recording, pcfg: PreprocessConfig, mcfg: ModelConfig, tcfg: TrainConfig):
    """Split ``rec``, train on the first half, monitor R^2 on the middle quarter.

    Returns ``(params, history)``.
    """
    train, val, _ = split_recording(rec)
    tr = make_dataset(train, pcfg)
    va = make_dataset(val, pcfg)
    mcfg = replace(mcfg, c_i=rec.channel_count)
    params = init_params(mcfg, seed=_init_seed(tcfg.seed))
    params.metadata.update(ws=pcfg.ws, n=pcfg.n)
    history = fit_params(params, tr.counts, tr.targets, tcfg, val=(va.counts, va.targets))
    return params, history


def finetune_data(rec: Recording, pcfg: PreprocessConfig):
    """Windows over the contiguous train+val span and over the test span."""
    train, val, test = split_recording(rec)
    return make_dataset(concat_recordings(train, val), pcfg), make_dataset(test, pcfg)


def heldout_dataset(rec: Recording, pcfg: PreprocessConfig):
    return make_dataset(split_recording(rec)[2], pcfg)


def _init_seed(seed):
    return int(nx.make_rng(seed, INIT_STREAM).integers(2 ** 63))


def grid_search(rec: Recording, ws_list, n_list, mcfg: ModelConfig, tcfg: TrainConfig, n_jobs=1):
    """Train one model per ``(ws, n)`` cell and score it on the test split.

    Every cell draws from its own generators seeded by ``tcfg.seed`` alone,
    so serial and parallel runs give the same rows, ordered ws-major.
    """
    if not ws_list or not n_list:
        raise ContractError("grid_search: ws_list and n_list must be non-empty")
    cells = [(ws, n) for ws in ws_list for n in n_list]
    if n_jobs == 1:
        scores = [_grid_cell(rec, ws, n, mcfg, tcfg) for ws, n in cells]
    else:
        from joblib import Parallel, delayed

        scores = Parallel(n_jobs=n_jobs)(delayed(_grid_cell)(rec, ws, n, mcfg, tcfg) for ws, n in cells)
    return [{"ws": ws, "n": n, "r2_mean": s[2], "r2_x": s[0], "r2_y": s[1]}
            for (ws, n), s in zip(cells, scores)]


def _grid_cell(rec, ws, n, mcfg, tcfg):
    pcfg = PreprocessConfig(ws=ws, n=n)
    params, _ = train_model(rec, pcfg, mcfg, tcfg)
    return evaluate(params, heldout_dataset(rec, pcfg))


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_r2"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_r2"])])


def write_grid_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["ws", "n", "r2_mean", "r2_x", "r2_y"])
        writer.writeheader()
        writer.writerows(rows)

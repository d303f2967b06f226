"""Challenge metrics: R^2, memory footprint and effective MAC/AC counts.

Footprint accounting (bytes):

* parameters: every backbone parameter element, pruned ones included and the
  auxiliary branch excluded, plus the four batch-norm state vectors
  (scale, shift, running mean, running variance) stored alongside; 4 bytes
  per element, or 1 byte once the model is quantized to 8 bits;
* activations for one inference, 4 bytes each: input ``N x C_i``, latent
  ``N x C_f``, hidden state ``C_h``, gates ``3 C_h`` and the 2 outputs.

MAC accounting per inference: one MAC per (weight, activation) pair of every
matrix-vector product where both are non-zero, plus one per element of the
three gate Hadamard products where both operands are non-zero. Bias
additions and nonlinearities are free. The batch-norm affine is reported
separately in ``metadata["bn_macs"]`` and is not part of the total.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, UndefinedScoreError

BYTES_FP32 = 4
BYTES_Q8 = 1


def r2_score(v_hat, v):
    """Per-axis coefficient of determination and its mean.

    Returns ``(r2_x, r2_y, r2_mean)``. Raises :class:`UndefinedScoreError`
    when an axis of ``v`` is constant.
    """
    v_hat = np.asarray(v_hat, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v_hat.shape != v.shape or v.ndim != 2 or v.shape[1] != 2:
        raise ContractError(f"r2_score: expected matching T x 2 arrays, got {v_hat.shape} and {v.shape}")
    if v.shape[0] < 2:
        raise ContractError("r2_score: need at least 2 time steps")
    resid = ((v - v_hat) ** 2).sum(axis=0)
    total = ((v - v.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(total == 0):
        axis = "xy"[int(np.flatnonzero(total == 0)[0])]
        raise UndefinedScoreError(f"r2_score: ground truth {axis} velocity has zero variance")
    r2 = 1.0 - resid / total
    return float(r2[0]), float(r2[1]), float((r2[0] + r2[1]) / 2.0)


# ---------------------------------------------------------------------------
# footprint


def parameter_elements(params, include_bn_state=True):
    names = [k for k in params.backbone_names if not k.startswith("bn.running")]
    count = sum(params[k].size for k in names)
    if include_bn_state and params.config.variant == "aegru":
        count += 4 * params.config.c_f
    return count


def activation_elements(mcfg, pcfg):
    latent = pcfg.n * mcfg.c_f if mcfg.variant == "aegru" else 0
    return pcfg.n * mcfg.c_i + latent + mcfg.c_h + 3 * mcfg.c_h + 2


def memory_footprint(params, mcfg=None, pcfg=None, include_bn_state=True):
    """Bytes for the inference backbone's parameters plus one inference's activations."""
    mcfg = params.config if mcfg is None else mcfg
    if pcfg is None:
        from .preprocess import PreprocessConfig

        pcfg = PreprocessConfig(ws=params.metadata.get("ws", 20), n=params.metadata.get("n", 5))
    per_param = BYTES_Q8 if params.quant is not None else BYTES_FP32
    return (parameter_elements(params, include_bn_state) * per_param
            + activation_elements(mcfg, pcfg) * BYTES_FP32)


# ---------------------------------------------------------------------------
# operation counts


def dense_macs(mcfg, n_steps):
    """Analytic MACs per inference with every weight and activation non-zero."""
    d_in = mcfg.gru_input
    up = n_steps * mcfg.c_i * mcfg.c_f if mcfg.variant == "aegru" else 0
    gru = n_steps * (3 * d_in * mcfg.c_h + 3 * mcfg.c_h * mcfg.c_h)
    gates = n_steps * 3 * mcfg.c_h
    return up + gru + gates + mcfg.c_h * 2


def _pairs(x, w):
    """Per-row count of (k, m) with ``x[k] != 0`` and ``w[k, m] != 0``."""
    return (x != 0).astype(np.int64) @ (w != 0).sum(axis=1)


def _both(a, b):
    return ((a != 0) & (b != 0)).sum(axis=1)


def count_macs(params, x_prime):
    """Effective MACs for each window of ``x_prime`` (``B x N x C_i``).

    Returns a dict of int arrays, one entry per window: ``matrix``,
    ``elementwise``, ``bn`` and ``total`` (``matrix + elementwise``).
    """
    from .model import BN_EPS, GATES

    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x_prime.ndim == 2:
        x_prime = x_prime[None]
    batch, n_steps, _ = x_prime.shape
    cfg = params.config
    h_dim = cfg.c_h
    w_i = np.concatenate([params[f"gru.w_i{g}"] for g in GATES], axis=1)
    w_h = np.concatenate([params[f"gru.w_h{g}"] for g in GATES], axis=1)
    b_i, b_h = params["gru.b_i"], params["gru.b_h"]
    matrix = np.zeros(batch, dtype=np.int64)
    elementwise = np.zeros(batch, dtype=np.int64)
    bn = np.zeros(batch, dtype=np.int64)
    h = np.zeros((batch, h_dim))
    if cfg.variant == "aegru":
        bn_scale = params["bn.weight"] / np.sqrt(params["bn.running_var"] + BN_EPS)
        bn_shift = params["bn.bias"] - params["bn.running_mean"] * bn_scale
    for t in range(n_steps):
        x = x_prime[:, t]
        if cfg.variant == "aegru":
            matrix += _pairs(x, params["fc_up.weight"])
            lin = x @ params["fc_up.weight"] + params["fc_up.bias"]
            bn += _both(lin, np.broadcast_to(bn_scale, lin.shape))
            f = lin * bn_scale + bn_shift
        else:
            f = x
        matrix += _pairs(f, w_i) + _pairs(h, w_h)
        gi = f @ w_i + b_i
        gh = h @ w_h + b_h
        r = _sigmoid(gi[:, :h_dim] + gh[:, :h_dim])
        u = _sigmoid(gi[:, h_dim:2 * h_dim] + gh[:, h_dim:2 * h_dim])
        gh_c = gh[:, 2 * h_dim:]
        c = np.tanh(gi[:, 2 * h_dim:] + r * gh_c)
        one_minus_u = 1.0 - u
        elementwise += _both(r, gh_c) + _both(u, h) + _both(one_minus_u, c)
        h = one_minus_u * c + u * h
    matrix += _pairs(h, params["fc_down.weight"])
    return {"matrix": matrix, "elementwise": elementwise, "bn": bn, "total": matrix + elementwise}


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def effective_macs(params, dataset, chunk=4096):
    """Mean effective MAC count per inference over ``dataset`` (a WindowedDataset)."""
    return _mac_breakdown(params, dataset, chunk)["total"]


def effective_acs(params, dataset):
    """Accumulate-only operations; the network has no spiking layer, so always 0."""
    return 0.0


def _mac_breakdown(params, dataset, chunk=4096):
    if len(dataset) == 0:
        raise ContractError("effective_macs: empty dataset")
    from .preprocess import softplus_log

    sums = {"matrix": 0, "elementwise": 0, "bn": 0, "total": 0}
    for start in range(0, len(dataset), chunk):
        counts = count_macs(params, softplus_log(dataset.counts[start:start + chunk]))
        for k in sums:
            sums[k] += int(counts[k].sum())
    return {k: v / len(dataset) for k, v in sums.items()}


# ---------------------------------------------------------------------------
# report


@dataclass
class BenchmarkReport:
    r2_x: float
    r2_y: float
    r2_mean: float
    footprint_bytes: int
    effective_macs: float
    effective_acs: float
    dense_macs: int
    metadata: dict = field(default_factory=dict)

    FIELDS = ("r2_x", "r2_y", "r2_mean", "footprint_bytes", "effective_macs", "effective_acs", "dense_macs")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=False)

    def write_json(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def benchmark(params, dataset, mcfg=None, pcfg=None, include_bn_state=True):
    """Score ``params`` on ``dataset`` and count its footprint and operations."""
    from .preprocess import PreprocessConfig
    from .training import evaluate

    mcfg = params.config if mcfg is None else mcfg
    if pcfg is None:
        pcfg = PreprocessConfig(ws=params.metadata.get("ws", 20), n=dataset.n_steps)
    r2x, r2y, r2m = evaluate(params, dataset)
    macs = _mac_breakdown(params, dataset)
    per_param = BYTES_Q8 if params.quant is not None else BYTES_FP32
    meta = {
        "variant": mcfg.variant,
        "ws": pcfg.ws,
        "n": pcfg.n,
        "matrix_macs": macs["matrix"],
        "elementwise_macs": macs["elementwise"],
        "bn_macs": macs["bn"],
        "bn_macs_counted_in_total": False,
        "parameter_bytes": parameter_elements(params, include_bn_state) * per_param,
        "activation_bytes": activation_elements(mcfg, pcfg) * BYTES_FP32,
        "quantized": params.quant is not None,
        "windows": len(dataset),
    }
    return BenchmarkReport(
        r2_x=r2x, r2_y=r2y, r2_mean=r2m,
        footprint_bytes=memory_footprint(params, mcfg, pcfg, include_bn_state),
        effective_macs=macs["total"],
        effective_acs=effective_acs(params, dataset),
        dense_macs=dense_macs(mcfg, pcfg.n),
        metadata=meta,
    )


def write_reports_csv(reports, path, names=None):
    """One row per model; ``names`` labels the rows."""
    names = names or [f"model{i}" for i in range(len(reports))]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", *BenchmarkReport.FIELDS])
        for name, rep in zip(names, reports):
            writer.writerow([name, *(getattr(rep, k) for k in BenchmarkReport.FIELDS)])

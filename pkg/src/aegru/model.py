"""The AEGRU network and its checkpoint format.

The inference backbone is ``fc_up -> bn -> GRU -> fc_down``. During training
an auxiliary branch predicts a log-variance for the latent factor
(``fc1 -> relu -> fc2``), samples the factor by reparameterisation, and
reconstructs firing rates with ``exp(fc3(f))``.

The ``vanilla`` variant drops the upstream layer and the auxiliary branch and
feeds the transformed counts straight into the GRU.

Matrices follow the row-vector convention: a layer computes ``x @ W + b``
with ``W`` shaped ``(fan_in, fan_out)`` and ``b`` shaped ``(1, fan_out)``.
"""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, FormatError
from .numerics import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
GATES = ("r", "u", "c")

AEGW_MAGIC = b"AEGW"
AEGW_VERSION = 1
VARIANTS = ("aegru", "vanilla")


@dataclass
class ModelConfig:
    c_i: int = 96
    c_f: int = 32
    c_h: int = 32
    c_sigma: int = 32
    variant: str = "aegru"

    def __post_init__(self):
        for name in ("c_i", "c_f", "c_h", "c_sigma"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def gru_input(self):
        return self.c_f if self.variant == "aegru" else self.c_i


class AegruParams:
    """Named parameter matrices plus optional pruning masks and quantization state.

    ``tensors`` maps names such as ``"gru.w_hr"`` to float64 matrices; it
    also holds the batch-norm running statistics, which are not trained.
    ``masks`` maps prunable names to 0/1 matrices (1 = kept).
    """

    def __init__(self, config: ModelConfig, tensors, masks=None, quant=None, metadata=None):
        self.config = config
        self.tensors = OrderedDict(tensors)
        self.masks = dict(masks or {})
        self.quant = quant
        self.metadata = dict(metadata or {})

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __iter__(self):
        return iter(self.tensors)

    def copy(self):
        return AegruParams(self.config, {k: v.copy() for k, v in self.tensors.items()},
                           {k: v.copy() for k, v in self.masks.items()}, self.quant, dict(self.metadata))

    @property
    def trainable_names(self):
        return [k for k in self.tensors if not k.startswith("bn.running")]

    @property
    def backbone_names(self):
        """Tensors used at inference time (the auxiliary branch excluded)."""
        return [k for k in self.tensors if not k.startswith(("fc1.", "fc2.", "fc3."))]

    @property
    def prunable_names(self):
        """FC and GRU weight matrices of the backbone."""
        return [k for k in self.backbone_names
                if k.endswith(".weight") and not k.startswith("bn.") or k.startswith("gru.w_")]

    def apply_masks(self):
        for name, mask in self.masks.items():
            self.tensors[name] *= mask

    def allclose(self, other, atol=0.0):
        return (self.tensors.keys() == other.tensors.keys()
                and all(np.allclose(self[k], other[k], rtol=0, atol=atol) for k in self.tensors))


def _shapes(cfg: ModelConfig):
    h, f = cfg.c_h, cfg.c_f
    shapes = OrderedDict()
    if cfg.variant == "aegru":
        shapes["fc_up.weight"] = (cfg.c_i, f)
        shapes["fc_up.bias"] = (1, f)
        for k in ("weight", "bias", "running_mean", "running_var"):
            shapes[f"bn.{k}"] = (1, f)
    for g in GATES:
        shapes[f"gru.w_i{g}"] = (cfg.gru_input, h)
    for g in GATES:
        shapes[f"gru.w_h{g}"] = (h, h)
    shapes["gru.b_i"] = (1, 3 * h)
    shapes["gru.b_h"] = (1, 3 * h)
    shapes["fc_down.weight"] = (h, 2)
    shapes["fc_down.bias"] = (1, 2)
    if cfg.variant == "aegru":
        shapes["fc1.weight"] = (cfg.c_i, cfg.c_sigma)
        shapes["fc1.bias"] = (1, cfg.c_sigma)
        shapes["fc2.weight"] = (cfg.c_sigma, f)
        shapes["fc2.bias"] = (1, f)
        shapes["fc3.weight"] = (f, cfg.c_i)
        shapes["fc3.bias"] = (1, cfg.c_i)
    return shapes


def init_params(cfg: ModelConfig, seed=0) -> AegruParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; bn at identity."""
    rng = nx.make_rng(seed)
    tensors = OrderedDict()
    for name, shape in _shapes(cfg).items():
        if name == "bn.weight" or name == "bn.running_var":
            tensors[name] = np.ones(shape)
        elif name.endswith((".weight",)) or name.startswith("gru.w_"):
            bound = 1.0 / math.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return AegruParams(cfg, tensors)


def parameter_count(params: AegruParams, names=None):
    names = params.backbone_names if names is None else names
    return sum(params[k].size for k in names if not k.startswith("bn.running"))


# ---------------------------------------------------------------------------
# forward passes on the gradient tape


def as_tensors(params: AegruParams, requires_grad=False):
    return {k: Tensor(v, requires_grad=requires_grad and not k.startswith("bn.running"), name=k)
            for k, v in params.tensors.items()}


def _time_major(x):
    """``B x N x C`` -> ``(N*B) x C`` with step ``t`` in rows ``t*B:(t+1)*B``."""
    b, n, c = x.shape
    return x.transpose(1, 0, 2).reshape(n * b, c)


def _encode(x2, t, params, training):
    lin = nx.linear(x2, t["fc_up.weight"], t["fc_up.bias"])
    if training:
        out, mean, var = nx.batch_norm_train(lin, t["bn.weight"], t["bn.bias"], BN_EPS)
        rm, rv = params["bn.running_mean"], params["bn.running_var"]
        rm *= 1.0 - BN_MOMENTUM
        rm += BN_MOMENTUM * mean
        rv *= 1.0 - BN_MOMENTUM
        rv += BN_MOMENTUM * var
        return out
    return nx.batch_norm_eval(lin, t["bn.weight"], t["bn.bias"],
                              params["bn.running_mean"], params["bn.running_var"], BN_EPS)


def _gru(f, t, batch, n_steps, h0=None):
    w_i = nx.concat_cols(*(t[f"gru.w_i{g}"] for g in GATES))
    w_h = nx.concat_cols(*(t[f"gru.w_h{g}"] for g in GATES))
    gi_all = nx.linear(f, w_i, t["gru.b_i"])
    c_h = t["gru.w_hr"].shape[0]
    h = Tensor(np.zeros((batch, c_h))) if h0 is None else h0
    for step in range(n_steps):
        gi = nx.row_block(gi_all, step * batch, (step + 1) * batch)
        h = nx.gru_cell(gi, h, w_h, t["gru.b_h"])
    return h


def forward(params: AegruParams, x_prime, tensors=None, training=False, rng=None):
    """Run a batch of windows ``B x N x C_i`` through the network.

    Returns a dict of tensors: ``v`` (``B x 2``) always; for the AEGRU variant
    also ``mu`` and, when ``rng`` is given, the auxiliary outputs ``log_var``,
    ``f`` and ``log_rate`` (all ``(N*B) x ...`` in time-major row order).
    With ``rng`` set the GRU consumes the sampled factor, otherwise the mean.
    """
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x_prime.ndim == 2:
        x_prime = x_prime[None]
    batch, n_steps, c_in = x_prime.shape
    cfg = params.config
    if c_in != cfg.c_i:
        raise DimensionError(f"input has {c_in} channels, model expects {cfg.c_i}")
    t = tensors if tensors is not None else as_tensors(params)
    x2 = Tensor(_time_major(x_prime))
    out = {}
    if cfg.variant == "vanilla":
        gru_in = x2
    else:
        mu = _encode(x2, t, params, training)
        out["mu"] = mu
        gru_in = mu
        if rng is not None:
            hidden = nx.relu(nx.linear(x2, t["fc1.weight"], t["fc1.bias"]))
            log_var = nx.linear(hidden, t["fc2.weight"], t["fc2.bias"])
            f = nx.sample_gaussian(mu, log_var, rng)
            out["log_var"] = log_var
            out["f"] = f
            out["log_rate"] = nx.linear(f, t["fc3.weight"], t["fc3.bias"])
            gru_in = f
    h = _gru(gru_in, t, batch, n_steps)
    out["h"] = h
    out["v"] = nx.linear(h, t["fc_down.weight"], t["fc_down.bias"])
    return out


# ---------------------------------------------------------------------------
# plain-array entry points


def gru_step(x_t, h_prev, params: AegruParams):
    """Single GRU update on plain arrays (vectors or ``B x dim`` batches)."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    cfg = params.config
    if x_t.shape[1] != cfg.gru_input or h_prev.shape[1] != cfg.c_h or x_t.shape[0] != h_prev.shape[0]:
        raise DimensionError(f"gru_step: x {x_t.shape} / h {h_prev.shape} do not fit "
                             f"input {cfg.gru_input}, hidden {cfg.c_h}")
    w_i = np.concatenate([params[f"gru.w_i{g}"] for g in GATES], axis=1)
    w_h = np.concatenate([params[f"gru.w_h{g}"] for g in GATES], axis=1)
    gi = Tensor(x_t @ w_i + params["gru.b_i"])
    h = nx.gru_cell(gi, Tensor(h_prev), Tensor(w_h), Tensor(params["gru.b_h"])).value
    return h[0] if h.shape[0] == 1 else h


def encode(x_prime, params: AegruParams, training=False):
    """Latent mean ``bn(x' @ W_up + b_up)`` for an ``N x C_i`` window or a batch."""
    x_prime = np.asarray(x_prime, dtype=np.float64)
    single = x_prime.ndim == 2
    x3 = x_prime[None] if single else x_prime
    b, n, c = x3.shape
    mu = _encode(Tensor(_time_major(x3)), as_tensors(params), params, training).value
    mu = mu.reshape(n, b, -1).transpose(1, 0, 2)
    return mu[0] if single else mu


def infer(x_prime, params: AegruParams):
    """Velocity for one ``N x C_i`` window (2-vector) or a batch (``B x 2``)."""
    x_prime = np.asarray(x_prime, dtype=np.float64)
    v = forward(params, x_prime)["v"].value
    return v[0] if x_prime.ndim == 2 else v


def aux_forward(x_prime, params: AegruParams, seed=0):
    """Training-branch pass for one window: ``(v, r_hat, mu_f, log_var_f)``.

    ``r_hat``, ``mu_f`` and ``log_var_f`` are ``N x ...`` matrices.
    """
    if params.config.variant != "aegru":
        raise ConfigError("variant", "the vanilla model has no auxiliary branch")
    rng = nx.make_rng(seed)
    out = forward(params, np.asarray(x_prime, dtype=np.float64), rng=rng)
    return (out["v"].value[0], np.exp(out["log_rate"].value), out["mu"].value, out["log_var"].value)


# ---------------------------------------------------------------------------
# AEGW checkpoint


_HEADER = struct.Struct("<4sI")
_CONFIG = struct.Struct("<IIIIIII")  # c_i c_f c_h c_sigma variant ws n
_TENSOR_HEAD = struct.Struct("<II")


def save_checkpoint(params: AegruParams, path) -> None:
    """Write ``params`` to an AEGW file.

    Layout (little endian): magic, version u32, seven u32 config fields
    (c_i, c_f, c_h, c_sigma, variant index, ws, n; 0 = unknown), tensor
    count u32, then each tensor and mask as (name length u16, name, rows u32,
    cols u32, float64 data), then a quantization flag u8 followed by qf u8
    and bits u8 when set.
    """
    cfg = params.config
    meta = params.metadata
    entries = list(params.tensors.items()) + [(k + ".mask", m) for k, m in sorted(params.masks.items())]
    chunks = [_HEADER.pack(AEGW_MAGIC, AEGW_VERSION),
              _CONFIG.pack(cfg.c_i, cfg.c_f, cfg.c_h, cfg.c_sigma, VARIANTS.index(cfg.variant),
                           int(meta.get("ws", 0)), int(meta.get("n", 0))),
              struct.pack("<I", len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks += [struct.pack("<H", len(raw)), raw, _TENSOR_HEAD.pack(*arr.shape), arr.tobytes()]
    if params.quant is None:
        chunks.append(b"\x00")
    else:
        qf, bits = params.quant
        chunks.append(struct.pack("<BBB", 1, qf, bits))
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


def load_checkpoint(path) -> AegruParams:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return parse_checkpoint(raw, path)


def parse_checkpoint(raw: bytes, path=None) -> AegruParams:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"truncated while reading {what}", offset=pos, path=path)
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    magic, version = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != AEGW_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {AEGW_MAGIC!r}", offset=0, path=path)
    if version != AEGW_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    c_i, c_f, c_h, c_sigma, variant, ws, n = _CONFIG.unpack(take(_CONFIG.size, "model config"))
    if variant >= len(VARIANTS):
        raise FormatError(f"unknown variant index {variant}", offset=24, path=path)
    try:
        cfg = ModelConfig(c_i, c_f, c_h, c_sigma, VARIANTS[variant])
    except ConfigError as exc:
        raise FormatError(f"invalid model config: {exc}", offset=8, path=path) from exc
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors, masks = OrderedDict(), {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        rows, cols = _TENSOR_HEAD.unpack(take(_TENSOR_HEAD.size, f"shape of {name}"))
        data = np.frombuffer(take(rows * cols * 8, f"data of {name}"), dtype="<f8").reshape(rows, cols)
        if name.endswith(".mask"):
            masks[name[:-5]] = data.astype(np.float64)
        elif name in tensors:
            raise FormatError(f"duplicate tensor {name!r}", offset=start, path=path)
        else:
            tensors[name] = data.astype(np.float64)
    (flag,) = struct.unpack("<B", take(1, "quantization flag"))
    quant = None
    if flag:
        quant = struct.unpack("<BB", take(2, "quantization descriptor"))
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes", offset=pos, path=path)

    expected = _shapes(cfg)
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"missing tensor {name!r}", path=path)
        if tensors[name].shape != shape:
            raise FormatError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}", path=path)
    extra = set(tensors) - set(expected)
    if extra:
        raise FormatError(f"unexpected tensors {sorted(extra)}", path=path)
    for name, mask in masks.items():
        if name not in tensors or mask.shape != tensors[name].shape:
            raise FormatError(f"mask {name!r} does not match a tensor", path=path)
    tensors = OrderedDict((k, tensors[k]) for k in expected)
    metadata = {k: v for k, v in (("ws", ws), ("n", n)) if v}
    return AegruParams(cfg, tensors, masks, quant, metadata)

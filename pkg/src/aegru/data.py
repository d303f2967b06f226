"""Recordings: synthetic generation, the NDR binary format, and time splits."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, FormatError, InsufficientDataError
from .numerics import make_rng

SAMPLE_PERIOD_US = 4000
NDR_MAGIC = b"NDR1"
NDR_VERSION = 1
_NDR_HEADER = struct.Struct("<4sIIQ")
MAX_COUNT = np.iinfo(np.uint16).max

# white-noise drive of the velocity process before low-pass smoothing
VELOCITY_DRIVE = 20.0
# mean count above which Poisson draws use the rounded normal approximation
POISSON_INVERSION_LIMIT = 10.0

VELOCITY_STREAM = 0
CHANNEL_STREAM = 1


@dataclass(eq=False)
class Recording:
    """Spike counts (``T x C``) and fingertip velocity (``T x 2``) at 250 Hz.

    Velocities are held at float32 precision, the precision of the file
    format, so that save/load is an exact round trip.
    """

    spikes: np.ndarray
    velocity: np.ndarray
    name: str = "recording"
    sample_period: int = SAMPLE_PERIOD_US

    def __post_init__(self):
        spikes = np.asarray(self.spikes)
        if spikes.ndim != 2:
            raise ConfigError("spikes", f"expected a 2-D T x C array, got shape {spikes.shape}")
        if spikes.size and (spikes.min() < 0 or not np.all(np.isfinite(spikes))):
            raise ConfigError("spikes", "counts must be finite and non-negative")
        if spikes.size and spikes.max() > MAX_COUNT:
            raise ConfigError("spikes", f"counts above {MAX_COUNT} do not fit the u16 storage")
        if np.any(spikes != np.round(spikes)):
            raise ConfigError("spikes", "counts must be integers")
        velocity = np.asarray(self.velocity, dtype=np.float64)
        if velocity.shape != (spikes.shape[0], 2):
            raise ConfigError("velocity", f"expected shape ({spikes.shape[0]}, 2), got {velocity.shape}")
        if self.sample_period != SAMPLE_PERIOD_US:
            raise ConfigError("sample_period", f"must be {SAMPLE_PERIOD_US} us")
        self.spikes = spikes.astype(np.uint16)
        self.velocity = velocity.astype(np.float32).astype(np.float64)

    @property
    def channel_count(self):
        return self.spikes.shape[1]

    @property
    def n_samples(self):
        return self.spikes.shape[0]

    def __len__(self):
        return self.n_samples

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (self.spikes.shape == other.spikes.shape
                and np.array_equal(self.spikes, other.spikes)
                and np.array_equal(self.velocity, other.velocity))

    def slice(self, start, stop, name=None):
        return Recording(self.spikes[start:stop], self.velocity[start:stop], name or self.name)


@dataclass
class SynthConfig:
    channel_count: int = 96
    duration_samples: int = 60_000
    baseline_log_rate: float = math.log(0.1)
    tuning_gain: float = 0.6
    velocity_smoothness: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.channel_count < 1:
            raise ConfigError("channel_count", "must be >= 1")
        if self.duration_samples < 1:
            raise ConfigError("duration_samples", "must be >= 1")
        if not self.velocity_smoothness > 0:
            raise ConfigError("velocity_smoothness", "must be > 0")


def generate_synthetic(cfg: SynthConfig) -> Recording:
    """Draw a recording whose channels are log-linearly tuned to velocity.

    Velocity is white noise low-passed by a unit-gain first-order filter with
    time constant ``velocity_smoothness`` (a discretised Ornstein-Uhlenbeck
    process). Each channel gets its own random stream so adding channels
    leaves existing ones unchanged.
    """
    n = cfg.duration_samples
    decay = math.exp(-1.0 / cfg.velocity_smoothness)
    drive = make_rng(cfg.seed, VELOCITY_STREAM).standard_normal((n, 2)) * VELOCITY_DRIVE
    velocity = lfilter([1.0 - decay], [1.0, -decay], drive, axis=0)

    spikes = np.empty((n, cfg.channel_count), dtype=np.uint16)
    for c in range(cfg.channel_count):
        rng = make_rng(cfg.seed, CHANNEL_STREAM, c)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        direction = np.array([math.cos(angle), math.sin(angle)])
        log_rate = cfg.baseline_log_rate + cfg.tuning_gain * (velocity @ direction)
        uniforms = rng.random(n)
        normals = rng.standard_normal(n)
        spikes[:, c] = poisson_sample(np.exp(log_rate), uniforms, normals)
    return Recording(spikes, velocity, name=f"synthetic-{cfg.seed}")


def poisson_sample(mean, uniforms, normals):
    """Poisson counts from pre-drawn variates.

    Inversion of the CDF for means below 10; rounded normal approximation
    above. Results are clipped to the u16 range.
    """
    mean = np.asarray(mean, dtype=np.float64)
    counts = np.zeros(mean.shape, dtype=np.int64)
    small = mean < POISSON_INVERSION_LIMIT

    lam = mean[small]
    u = uniforms[small]
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    active = u > cdf
    kmax = 0
    while active.any() and kmax < 200:
        kmax += 1
        k[active] += 1
        p = p * lam / kmax
        cdf = cdf + p
        active &= u > cdf
    counts[small] = k

    big = ~small
    approx = np.rint(mean[big] + np.sqrt(mean[big]) * normals[big])
    counts[big] = np.maximum(approx, 0).astype(np.int64)
    return np.minimum(counts, MAX_COUNT)


def save_ndr(rec: Recording, path) -> None:
    path = Path(path)
    header = _NDR_HEADER.pack(NDR_MAGIC, NDR_VERSION, rec.channel_count, rec.n_samples)
    body = rec.spikes.astype("<u2").tobytes() + rec.velocity.astype("<f4").tobytes()
    try:
        path.write_bytes(header + body)
    except OSError as exc:
        raise OSError(f"cannot write recording to {path}: {exc.strerror}") from exc


def load_ndr(path) -> Recording:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read recording {path}: {exc.strerror}") from exc
    return parse_ndr(raw, name=path.stem, path=path)


def parse_ndr(raw: bytes, name="recording", path=None) -> Recording:
    if len(raw) < 4 or raw[:4] != NDR_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {NDR_MAGIC!r}", offset=0, path=path)
    if len(raw) < _NDR_HEADER.size:
        raise FormatError("truncated header", offset=len(raw), path=path)
    _, version, channels, samples = _NDR_HEADER.unpack_from(raw, 0)
    if version != NDR_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    spike_bytes = samples * channels * 2
    vel_bytes = samples * 2 * 4
    expected = _NDR_HEADER.size + spike_bytes + vel_bytes
    if len(raw) < expected:
        raise FormatError(f"truncated data: {len(raw)} of {expected} bytes", offset=len(raw), path=path)
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes", offset=expected, path=path)
    off = _NDR_HEADER.size
    spikes = np.frombuffer(raw, dtype="<u2", count=samples * channels, offset=off).reshape(samples, channels)
    velocity = np.frombuffer(raw, dtype="<f4", count=samples * 2, offset=off + spike_bytes).reshape(samples, 2)
    return Recording(spikes.copy(), velocity.astype(np.float64), name=name)


def split_recording(rec: Recording):
    """Contiguous 50/25/25 train/val/test split with floor boundaries."""
    n = rec.n_samples
    if n < 4:
        raise InsufficientDataError(f"split needs at least 4 samples, recording has {n}")
    a, b = n // 2, n // 2 + n // 4
    return (rec.slice(0, a, f"{rec.name}-train"),
            rec.slice(a, b, f"{rec.name}-val"),
            rec.slice(b, n, f"{rec.name}-test"))


def concat_recordings(*recs: Recording) -> Recording:
    return Recording(np.concatenate([r.spikes for r in recs]),
                     np.concatenate([r.velocity for r in recs]),
                     name="+".join(r.name for r in recs))

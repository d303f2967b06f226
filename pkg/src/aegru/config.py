"""Flat ``key = value`` run configuration shared by all CLI commands."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .model import ModelConfig
from .preprocess import PreprocessConfig
from .sparsify import PruneConfig, QuantConfig
from .training import TrainConfig

# key -> (section, field name, type)
KEYS = {
    "channels": ("synth", "channel_count", int),
    "samples": ("synth", "duration_samples", int),
    "baseline_log_rate": ("synth", "baseline_log_rate", float),
    "tuning_gain": ("synth", "tuning_gain", float),
    "velocity_smoothness": ("synth", "velocity_smoothness", float),
    "ws": ("preprocess", "ws", int),
    "n": ("preprocess", "n", int),
    "stride": ("preprocess", "stride", int),
    "c_f": ("model", "c_f", int),
    "c_h": ("model", "c_h", int),
    "c_sigma": ("model", "c_sigma", int),
    "variant": ("model", "variant", str),
    "epochs": ("train", "epochs", int),
    "lr": ("train", "lr", float),
    "weight_decay": ("train", "weight_decay", float),
    "batch_size": ("train", "batch_size", int),
    "w_v": ("train", "w_v", float),
    "w_x": ("train", "w_x", float),
    "tpr": ("prune", "tpr", float),
    "finetune_epochs": ("prune", "finetune_epochs", int),
    "prune_mode": ("run", "prune_mode", str),
    "bits": ("quant", "bits", int),
    "qf": ("quant", "qf", int),
    "seed": ("run", "seed", int),
}


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    prune_mode: str = "local"
    seed: int = 0

    @classmethod
    def from_values(cls, values):
        """Build and validate from a flat ``{key: value}`` mapping.

        Values may be strings (from a file or the command line). Unknown keys
        and invalid values raise :class:`ConfigError` naming the key.
        """
        sections = {"synth": {}, "preprocess": {}, "model": {}, "train": {}, "prune": {}, "quant": {}, "run": {}}
        for key, raw in values.items():
            if key not in KEYS:
                raise ConfigError(key, "unknown configuration key")
            section, name, kind = KEYS[key]
            sections[section][name] = _convert(key, raw, kind)
        run = sections.pop("run")
        seed = run.get("seed", 0)
        if seed < 0 or seed >= 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        mode = run.get("prune_mode", "local")
        if mode not in ("local", "global"):
            raise ConfigError("prune_mode", f"must be 'local' or 'global', got {mode!r}")
        sections["synth"].setdefault("seed", seed)
        sections["train"].setdefault("seed", seed)
        built = {
            "synth": SynthConfig(**sections["synth"]),
            "preprocess": PreprocessConfig(**sections["preprocess"]),
            "model": ModelConfig(**sections["model"]),
            "train": TrainConfig(**sections["train"]),
            "prune": PruneConfig(**sections["prune"]),
            "quant": QuantConfig(**sections["quant"]),
        }
        return cls(**built, prune_mode=mode, seed=seed)


def _convert(key, raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(key, f"{raw!r} is not a valid {kind.__name__}") from None


def read_config_file(path):
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, f"unknown configuration key ({path}:{lineno})")
        values[key] = value
    return values

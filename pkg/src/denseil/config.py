"""Run configuration: JSON in, validated dataclasses out, JSON back out.

Every section rejects unknown keys so a typo fails loudly instead of
silently training with a default.
"""

import inspect
import json
from dataclasses import dataclass

import numpy as np

from .data import SynthConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig


class ConfigError(ValueError):
    """Config file missing, malformed, or carrying bad keys/values."""


@dataclass(frozen=True)
class SamplingConfig:
    chunks: int = 8
    k_ids: int = 8
    t_per_id: int = 2

    def __post_init__(self):
        for name in ("chunks", "k_ids", "t_per_id"):
            if getattr(self, name) < 1:
                raise ConfigError("sampling.%s must be positive" % name)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.3
    triplet_weight: float = 1.0

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("loss.margin must be nonnegative")
        if self.triplet_weight < 0:
            raise ConfigError("loss.triplet_weight must be nonnegative")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 10.0
    decay_interval: int = 20

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("optimizer.lr must be nonnegative")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("optimizer betas must lie in [0, 1)")
        if self.decay_interval < 0:
            raise ConfigError("optimizer.decay_interval must be nonnegative")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    epochs: int = 60
    dtype: str = "float32"
    partitions: int = 4
    checkpoint_interval: int = 0
    outdir: str = None
    data: SynthConfig = None
    encoder: EncoderConfig = None
    decoder: DecoderConfig = None
    sampling: SamplingConfig = None
    loss: LossConfig = None
    optimizer: OptimConfig = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.partitions < 1:
            raise ConfigError("partitions must be positive")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


_SECTIONS = {
    "data": SynthConfig,
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "sampling": SamplingConfig,
    "loss": LossConfig,
    "optimizer": OptimConfig,
}
_TOP_KEYS = ("seed", "epochs", "dtype", "partitions", "checkpoint_interval",
             "outdir")
_TUPLE_KEYS = ("channels", "dense_sources")


def _build_section(name, cls, obj):
    if not isinstance(obj, dict):
        raise ConfigError("section %r must be an object" % name)
    allowed = set(inspect.signature(cls).parameters)
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError("unknown key %s.%s" % (name, sorted(unknown)[0]))
    kwargs = {}
    for key, value in obj.items():
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError("section %r: %s" % (name, err))


def run_config_from_dict(obj) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be an object")
    unknown = set(obj) - set(_TOP_KEYS) - set(_SECTIONS)
    if unknown:
        raise ConfigError("unknown key %r" % sorted(unknown)[0])
    sections = {name: _build_section(name, cls, obj.get(name, {}))
                for name, cls in _SECTIONS.items()}
    top = {key: obj[key] for key in _TOP_KEYS if key in obj}
    try:
        return RunConfig(**top, **sections)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err))


def run_config_to_dict(cfg: RunConfig) -> dict:
    out = {key: getattr(cfg, key) for key in _TOP_KEYS}
    for name, cls in _SECTIONS.items():
        section = getattr(cfg, name)
        body = {}
        for key in inspect.signature(cls).parameters:
            value = getattr(section, key)
            if isinstance(value, tuple):
                value = list(value)
            body[key] = value
        out[name] = body
    return out


def load_run_config(path) -> RunConfig:
    with open(path) as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError("%s: %s" % (path, err))
    return run_config_from_dict(obj)


def write_run_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        json.dump(run_config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")

"""Run configuration and its ``key = value`` file format.

Every field of :class:`RunConfig`, :class:`NetworkConfig` and
:class:`LossWeights` may appear as a key; unknown keys are rejected.
Example::

    # micro overfit run
    T = 32
    H = 32
    W = 32
    lr = 1e-3
    epochs = 200
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .network import NetworkConfig


@dataclass(frozen=True)
class RunConfig:
    net: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 80
    batch_size: int = 1
    seed: int = 0
    stride: int = 0            # segment stride in frames; 0 means T (no overlap)
    val_fraction: float = 0.2  # 4:1 train/validation split by clip
    log_psd: bool = False      # use log-PSD logits in the frequency loss
    out: str = "runs/default"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.stride < 0:
            raise ConfigError(f"stride must be >= 0, got {self.stride}")

    @property
    def segment_stride(self):
        return self.stride or self.net.T

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                out.update(dataclasses.asdict(v))
            else:
                out[f.name] = v
        return out


_SUB = {"net": NetworkConfig, "loss": LossWeights}


def _cast(value: str, current):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value.strip()


def config_from_dict(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Overlay flat ``key -> value`` pairs (strings or typed) onto ``base``."""
    base = base or RunConfig()
    top = {f.name: getattr(base, f.name) for f in fields(base) if f.name not in _SUB}
    subs = {k: dataclasses.asdict(getattr(base, k)) for k in _SUB}
    for key, raw in values.items():
        target = top if key in top else next((s for s in subs.values() if key in s), None)
        if target is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            target[key] = _cast(raw, target[key]) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    try:
        return RunConfig(net=NetworkConfig(**subs["net"]), loss=LossWeights(**subs["loss"]), **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(dict(cp["run"]), base)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())

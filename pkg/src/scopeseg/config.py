"""Flat ``key=value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Every key can also be
given on the command line as ``--key=value``, which wins over the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .losses import LossConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    patch_size: int = 1
    epochs: int = 30
    pretrain_epochs: int = 10
    lr: float = 4e-3
    weight_decay: float = 5e-3
    batch_accum: int = 4
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 7
    dataset: str = "data"
    output: str = "runs"
    threshold: float = 0.5
    n_train: int = 32
    n_test: int = 8
    synth: SynthConfig = field(default_factory=SynthConfig)
    synth_count: int = 64

    def __post_init__(self):
        if self.patch_size not in (1, 2):
            raise ConfigError("patch_size must be 1 or 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if self.batch_accum < 1:
            raise ConfigError("batch_accum must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be in [0, 1]")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay non-negative")


# key -> (section, attribute, type)
KEYS = {
    "patch_size": (None, "patch_size", int),
    "epochs": (None, "epochs", int),
    "pretrain_epochs": (None, "pretrain_epochs", int),
    "lr": (None, "lr", float),
    "weight_decay": (None, "weight_decay", float),
    "batch_accum": (None, "batch_accum", int),
    "seed": (None, "seed", int),
    "dataset": (None, "dataset", str),
    "output": (None, "output", str),
    "threshold": (None, "threshold", float),
    "n_train": (None, "n_train", int),
    "n_test": (None, "n_test", int),
    "loss.kind": ("loss", "kind", str),
    "loss.k": ("loss", "k", int),
    "loss.epsilon": ("loss", "epsilon", float),
    "loss.lambda": ("loss", "lam", float),
    "synth.count": (None, "synth_count", int),
    "synth.seed": ("synth", "seed", int),
    "synth.height": ("synth", "height", int),
    "synth.width": ("synth", "width", int),
    "synth.n_branches": ("synth", "n_branches", int),
    "synth.radius_min": ("synth", "radius_range", float),
    "synth.radius_max": ("synth", "radius_range", float),
    "synth.noise_sigma": ("synth", "noise_sigma", float),
}


def parse_lines(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config_file(path: str | os.PathLike) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh.read())


def apply(cfg: RunConfig, values: dict[str, str]) -> RunConfig:
    top, loss, synth = {}, {}, {}
    radius = list(cfg.synth.radius_range)
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, attr, typ = KEYS[key]
        try:
            value = typ(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
        if key == "synth.radius_min":
            radius[0] = value
        elif key == "synth.radius_max":
            radius[1] = value
        elif section == "loss":
            loss[attr] = value
        elif section == "synth":
            synth[attr] = value
        else:
            top[attr] = value
    synth["radius_range"] = tuple(radius)
    try:
        return replace(
            cfg,
            loss=replace(cfg.loss, **loss),
            synth=replace(cfg.synth, **synth),
            **top,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dump(cfg: RunConfig) -> str:
    """Inverse of ``parse_lines`` + ``apply`` for every key."""
    lines = []
    for key, (section, attr, _) in KEYS.items():
        obj = cfg if section is None else getattr(cfg, section)
        value = getattr(obj, attr)
        if key == "synth.radius_min":
            value = value[0]
        elif key == "synth.radius_max":
            value = value[1]
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"

"""Flat ``key = value`` run configuration with typed, closed schema."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

HEADER = "# dlvm-config 1"

INFERENCE = ("em", "direct-marginal", "variational-em", "svi", "vae", "wake-sleep")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    seed: int = 0
    family: str = "naive-bayes"
    inference: str = "em"
    V: int = 50
    K: int = 4
    dim: int = 16
    hidden: int = 16
    emb: int = 16
    length: int = 10
    max_length: int = 20
    n_sentences: int = 5000
    truth_concentration: float = 1.0
    truth_scale: float = 1.0
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    optimizer: str = "adam"
    estimator: str = "auto"
    encoder: str = "rnn"
    kl_warmup: int = 0
    free_bits: float = 0.0
    heldout_frac: float = 0.1
    is_k: int = 10
    tau: float = 0.5
    iwae_k: int = 5
    iwae_reps: int = 20
    em_iters: int = 100
    svi_steps: int = 20
    svi_lr: float = 0.1
    sleep_ratio: int = 1

    def __post_init__(self):
        from ..models import FAMILIES

        if self.inference not in INFERENCE:
            raise ConfigError(f"inference must be one of {INFERENCE}, got {self.inference!r}")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.encoder not in ("rnn", "bow"):
            raise ConfigError(f"encoder must be 'rnn' or 'bow', got {self.encoder!r}")
        for name in ("V", "K", "dim", "hidden", "emb", "length", "max_length", "n_sentences", "batch_size",
                     "iwae_k", "iwae_reps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.lr <= 0 or self.svi_lr <= 0 or self.tau <= 0:
            raise ConfigError("learning rates and temperature must be positive")
        if self.free_bits < 0 or not 0 <= self.heldout_frac < 1:
            raise ConfigError("free_bits must be >= 0 and heldout_frac in [0, 1)")

    def updated(self, **kw) -> "Config":
        return replace(self, **kw)

    def dumps(self) -> str:
        lines = [HEADER] + [f"{f.name} = {getattr(self, f.name)!r}" if f.type == "float"
                            else f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def write(self, directory: str | os.PathLike) -> str:
        path = os.path.join(directory, "config.txt")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())
        return path


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, raw: str, where: str):
    typ = _TYPES[key]
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {typ}, got {raw!r}") from None


def parse_overrides(pairs, base: Config | None = None) -> Config:
    """Apply ``key=value`` strings to ``base`` (or the defaults)."""
    base = base or Config()
    kw = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"override {p!r} is not key=value")
        k, v = (s.strip() for s in p.split("=", 1))
        if k not in _TYPES:
            raise ConfigError(f"unknown config key {k!r}")
        kw[k] = _coerce(k, v, "override")
    return replace(base, **kw)


def loads(text: str) -> Config:
    kw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in body.split("=", 1))
        if k not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {k!r}")
        if k in kw:
            raise ConfigError(f"line {lineno}: duplicate key {k!r}")
        kw[k] = _coerce(k, v, f"line {lineno}")
    return Config(**kw)


def load_config(path: str | os.PathLike) -> Config:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())

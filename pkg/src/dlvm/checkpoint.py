"""Plain-text parameter checkpoints.

Layout::

    dlvm-checkpoint 1
    <name> <d0,d1,...|-> <v0> <v1> ...

One record per line. Values are written with 17 significant digits, which
round-trips every float64 exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .tensor import Tensor

HEADER = "dlvm-checkpoint 1"


class CheckpointError(ValueError):
    pass


def dumps(params: dict) -> str:
    lines = [HEADER]
    for name, value in params.items():
        if not name or any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} must be non-empty without whitespace")
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
        shape = ",".join(str(n) for n in arr.shape) or "-"
        vals = " ".join(format(float(v), ".17g") for v in arr.reshape(-1))
        lines.append(f"{name} {shape} {vals}".rstrip())
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict[str, np.ndarray]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise CheckpointError(f"missing or unsupported checkpoint header (expected {HEADER!r})")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise CheckpointError(f"line {lineno}: malformed record")
        name, shape_s, vals = parts[0], parts[1], parts[2:]
        shape = () if shape_s == "-" else tuple(int(n) for n in shape_s.split(","))
        if len(vals) != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"line {lineno}: {name} expects {int(np.prod(shape))} values, found {len(vals)}")
        out[name] = np.array([float(v) for v in vals], dtype=np.float64).reshape(shape)
    return out


def save_checkpoint(path: str | os.PathLike, params: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(params))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def restore(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into existing tensors, checking names and shapes."""
    missing = sorted(set(params) - set(values))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {missing}")
    for name, t in params.items():
        v = values[name]
        if v.shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {v.shape} != parameter shape {t.shape}")
        t.data = v.copy()

"""Line-delimited JSON metrics with a versioned header line."""

from __future__ import annotations

import json
import math
import os

HEADER = "# dlvm-metrics 1"


class MetricsError(ValueError):
    pass


def _check(rec: dict) -> dict:
    for k, v in rec.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise MetricsError(f"metric {k!r} is not finite ({v})")
    return rec


def dumps_record(rec: dict) -> str:
    return json.dumps(_check(dict(rec)), separators=(", ", ": "))


class MetricsWriter:
    """Appends records to ``path``; the header is written when the file is created."""

    def __init__(self, path: str | os.PathLike, append: bool = False):
        self.path = path
        mode = "a" if append and os.path.exists(path) else "w"
        self._fh = open(path, mode, encoding="utf-8", newline="\n")
        if mode == "w":
            self._fh.write(HEADER + "\n")

    def write(self, rec: dict) -> None:
        self._fh.write(dumps_record(rec) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != HEADER:
        raise MetricsError(f"{path}: missing header {HEADER!r}")
    return [json.loads(l) for l in lines[1:] if l.strip()]

"""Seeded random streams.

All randomness flows through :class:`Rng`, a thin wrapper over numpy's PCG64
bit generator. A stream is identified by ``(seed, stream)``; independent
streams are derived with ``SeedSequence`` spawn keys, so two runs that ask
for the same streams in the same order see identical draws on any platform.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "pcg64"
U_CLAMP = 1e-12


class Rng:
    algorithm = ALGORITHM

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "Rng":
        """An independent stream under the same seed (``stream`` must differ per use)."""
        return Rng(self.seed, stream=self.stream * 1_000_003 + int(stream) + 1)

    @property
    def position(self) -> dict:
        return self.gen.bit_generator.state

    @position.setter
    def position(self, state: dict) -> None:
        self.gen.bit_generator.state = state

    def uniform(self, size=None) -> np.ndarray:
        return self.gen.random(size)

    def open_uniform(self, size=None) -> np.ndarray:
        """Uniform draws clamped into (1e-12, 1 - 1e-12)."""
        return np.clip(self.gen.random(size), U_CLAMP, 1.0 - U_CLAMP)

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.gen.integers(low, high, size=size)

    def dirichlet(self, alpha, size=None) -> np.ndarray:
        return self.gen.dirichlet(alpha, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def categorical(self, probs, size=None) -> np.ndarray:
        """Inverse-CDF draws from the last axis of ``probs``.

        For a 2-d ``probs`` one draw is made per row and ``size`` is ignored.
        """
        p = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(p, axis=-1)
        if p.ndim == 1:
            u = self.gen.random(size) * cdf[-1]
            return np.minimum(np.searchsorted(cdf, u, side="right"), p.shape[-1] - 1)
        u = self.gen.random(p.shape[0]) * cdf[:, -1]
        idx = (cdf <= u[:, None]).sum(axis=1)
        return np.minimum(idx, p.shape[-1] - 1)


def as_rng(rng) -> Rng:
    if isinstance(rng, Rng):
        return rng
    if rng is None:
        return Rng(0)
    return Rng(int(rng))

"""Randomness: mini-batches, epoch lengths and reproducible RNG streams."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

# Stream roles inside one replication.
STREAM_BATCH = 0
STREAM_EPOCH = 1
STREAM_TERMINATE = 2
STREAM_INIT = 3


def split_rng(master_seed: int, stream_id: int | tuple[int, ...]) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(master_seed, stream_id)``."""
    key = stream_id if isinstance(stream_id, tuple) else (stream_id,)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master_seed), spawn_key=key)))


@dataclass(frozen=True)
class BatchSpec:
    size: int
    replacement: bool = True

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"batch size must be a positive integer, got {self.size!r}")


def draw_minibatch(rng: np.random.Generator, n: int, spec: BatchSpec) -> np.ndarray:
    """Indices in ``[0, n)``: i.i.d. uniform draws, or a uniform subset without replacement.

    A full-size draw without replacement returns ``arange(n)`` and consumes no randomness.
    """
    b = spec.size
    if spec.replacement:
        return rng.integers(0, n, size=b).astype(np.intp)
    if b > n:
        raise ValueError(f"cannot draw {b} distinct indices out of {n}")
    if b == n:
        return np.arange(n, dtype=np.intp)
    return np.sort(rng.choice(n, size=b, replace=False)).astype(np.intp)


@dataclass(frozen=True)
class Constant:
    k_in: int

    def __post_init__(self):
        if int(self.k_in) != self.k_in or self.k_in < 1:
            raise ValueError(f"k_in must be a positive integer, got {self.k_in!r}")

    def at(self, t: int) -> "Constant":
        return self

    def mean(self) -> float:
        return float(self.k_in)

    def variance(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Geometric:
    """Geometric length on {1, 2, ...} with success probability ``1 - rho``, clamped at ``cap``."""

    rho: float
    cap: int | None = None

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho!r}")
        if self.cap is None:
            object.__setattr__(self, "cap", default_cap(self.rho))
        if int(self.cap) != self.cap or self.cap < 1:
            raise ValueError(f"cap must be a positive integer, got {self.cap!r}")

    @classmethod
    def with_mean(cls, mean: float, cap: int | None = None) -> "Geometric | Constant":
        if mean <= 1.0:
            return Constant(1)
        return cls(1.0 - 1.0 / mean, cap)

    def at(self, t: int) -> "Geometric":
        return self

    def mean(self) -> float:
        # E[min(X, c)] = sum_{k=0}^{c-1} P(X > k)
        return (1.0 - self.rho ** self.cap) / (1.0 - self.rho)

    def variance(self) -> float:
        k = np.arange(1, self.cap + 1)
        p = (1.0 - self.rho) * self.rho ** (k - 1.0)
        p[-1] = self.rho ** (self.cap - 1)
        m = float((k * p).sum())
        return float((k * k * p).sum()) - m * m


@dataclass(frozen=True)
class GrowingGeometric:
    """Geometric lengths whose mean grows as ``min(n, max(c1 t^2, n/c2)) / (2b)``."""

    n: int
    b: int
    c1: float = 20.0
    c2: float = 50.0

    def at(self, t: int) -> Geometric | Constant:
        return Geometric.with_mean(min(self.n, max(self.c1 * t * t, self.n / self.c2)) / (2.0 * self.b))


EpochSchedule = Union[Constant, Geometric, GrowingGeometric]


def default_cap(rho: float) -> int:
    # round first: 1 / (1 - 0.9) evaluates to 10.000000000000002
    return 50 * math.ceil(round(1.0 / (1.0 - rho), 9))


def draw_epoch_length(rng: np.random.Generator, schedule: EpochSchedule, t: int = 1,
                      return_clamped: bool = False):
    """Number of inner iterations for epoch ``t``.

    With ``return_clamped`` the result is ``(length, clamped)`` where
    ``clamped`` reports a geometric draw that exceeded the cap.
    """
    law = schedule.at(t)
    if isinstance(law, Constant):
        out = (law.k_in, False)
    else:
        raw = int(rng.geometric(1.0 - law.rho))
        out = (min(raw, law.cap), raw > law.cap)
    return out if return_clamped else out[0]


def draw_epoch_lengths(rng: np.random.Generator, schedule: EpochSchedule, size: int, t: int = 1) -> np.ndarray:
    """Vectorized :func:`draw_epoch_length` (same law, lengths only)."""
    law = schedule.at(t)
    if isinstance(law, Constant):
        return np.full(size, law.k_in, dtype=np.int64)
    return np.minimum(rng.geometric(1.0 - law.rho, size=size), law.cap)

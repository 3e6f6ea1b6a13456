"""Model contract shared by every solver.

A model lives in the sufficient-statistics space: it knows how to map a
statistic ``s`` to parameters (the M-step, :meth:`LatentModel.t_map`) and
how to compute the conditional expectation of the per-example statistic
under given parameters (the E-step, :meth:`LatentModel.per_example_expectation`).
Solvers never touch parameters directly beyond passing them back to the model.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np


class InfeasibleStatisticError(ValueError):
    """Raised when a statistic cannot be mapped to valid parameters."""


@dataclass
class Counters:
    """Cumulative cost counters.

    ``ce`` counts conditional-expectation evaluations (one per example index
    per E-step call); ``opt`` counts updates of the expectation-space iterate.
    Diagnostics never touch these.
    """

    ce: int = 0
    opt: int = 0


def check_statistic(s: np.ndarray, q: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (q,):
        raise InfeasibleStatisticError(f"statistic must have shape ({q},), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InfeasibleStatisticError("statistic has non-finite entries")
    return s


class LatentModel(ABC):
    """Curved-exponential-family latent-variable model over a finite sum of examples.

    Implementations must be usable read-only from several workers at once;
    all mutable run state belongs to the solvers.
    """

    n: int
    q: int

    @abstractmethod
    def t_map(self, s: np.ndarray) -> Any:
        """Return the parameters maximizing the expected complete-data log-likelihood at ``s``."""

    @abstractmethod
    def per_example_expectation(self, i: int, theta: Any) -> np.ndarray:
        """Return the posterior expectation of example ``i``'s sufficient statistic."""

    @abstractmethod
    def objective(self, theta: Any) -> float:
        """Return the normalized negated log-likelihood ``F(theta)``."""

    def expectation_sum(self, indices: Sequence[int], theta: Any) -> np.ndarray:
        """Sum of per-example expectations over ``indices`` (repeats allowed)."""
        total = np.zeros(self.q)
        for i in indices:
            total += self.per_example_expectation(int(i), theta)
        return total

    def expectations(self, indices: Sequence[int], theta: Any) -> np.ndarray:
        """Stack per-example expectations, one row per index."""
        return np.array([self.per_example_expectation(int(i), theta) for i in indices]).reshape(-1, self.q)

    def full_expectation(self, theta: Any) -> np.ndarray:
        """Average expectation over all ``n`` examples in ascending index order."""
        return self.expectation_sum(np.arange(self.n), theta) / self.n

    def evaluate(self, theta: Any) -> tuple[np.ndarray, float]:
        """One monitoring pass: the full expectation and the objective."""
        return self.full_expectation(theta), self.objective(theta)


def mean_field(model: LatentModel, s: np.ndarray, counters: Counters | None = None) -> np.ndarray:
    """``h(s) = sbar(T(s)) - s``, computed by one full pass over the data."""
    s = check_statistic(s, model.q)
    theta = model.t_map(s)
    out = model.full_expectation(theta) - s
    if counters is not None:
        counters.ce += model.n
    return out


def objective(model: LatentModel, theta: Any) -> float:
    return model.objective(theta)


def lyapunov(model: LatentModel, s: np.ndarray) -> float:
    """``W(s) = F(T(s))``, the Lyapunov function of EM in the expectation space."""
    return model.objective(model.t_map(check_statistic(s, model.q)))

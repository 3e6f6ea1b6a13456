"""Batch EM, Online-EM and g-SPIDER-EM in the expectation space.

All three work on a statistic ``S_hat`` and only call the model's M-step
(``t_map``) and E-step (``expectation_sum`` / ``evaluate``). Cost counters
follow the conventions of :class:`spiderem.model.Counters`; monitoring
passes (``|h|^2`` and ``F`` at epoch ends) are never counted.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Union

import numpy as np

from .model import Counters, InfeasibleStatisticError, LatentModel, check_statistic
from .samplers import (
    STREAM_BATCH,
    STREAM_EPOCH,
    BatchSpec,
    Constant,
    EpochSchedule,
    Geometric,
    GrowingGeometric,
    draw_epoch_length,
    draw_minibatch,
    split_rng,
)


class DivergenceError(RuntimeError):
    """A run produced an unusable iterate; ``trace`` holds the epochs completed so far."""

    def __init__(self, message: str, trace: "RunTrace | None" = None):
        super().__init__(message)
        self.trace = trace


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Full:
    def size(self, n: int, t: int) -> int:
        return n


@dataclass(frozen=True)
class Fraction:
    f: float

    def __post_init__(self):
        if not 0.0 < self.f <= 1.0:
            raise ValueError(f"reset fraction must lie in (0, 1], got {self.f!r}")

    def size(self, n: int, t: int) -> int:
        return int(min(n, max(1, round(self.f * n))))


@dataclass(frozen=True)
class Growth:
    """Reset batch of size ``min(n, max(c1 t^2, n / c2))``."""

    c1: float = 20.0
    c2: float = 50.0

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("growth constants must be positive")

    def size(self, n: int, t: int) -> int:
        return int(min(n, max(1, round(min(n, max(self.c1 * t * t, n / self.c2))))))


ResetPolicy = Union[Full, Fraction, Growth]


@dataclass(frozen=True)
class StepSchedule:
    """Constant inner step ``gamma`` and reset step ``gamma_reset``.

    When ``alpha`` is set, ``gamma`` is replaced at run start by
    ``alpha / L`` with ``L`` an empirical Lipschitz estimate.
    """

    gamma: float = 0.01
    gamma_reset: float = 0.0
    alpha: float | None = None
    lipschitz_probes: int = 16
    lipschitz_radius: float = 1e-2

    def __post_init__(self):
        if self.alpha is None and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if self.gamma_reset < 0:
            raise ValueError(f"gamma_reset must be nonnegative, got {self.gamma_reset!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")


@dataclass(frozen=True)
class RunConfig:
    b: int
    k_out: int
    schedule: EpochSchedule = Constant(1)
    reset: ResetPolicy = Full()
    steps: StepSchedule = StepSchedule()
    warmstart_epochs: int = 0
    warmstart_gamma: float = 0.01
    seed: int = 0
    replication: int = 0
    replacement: bool = True
    updates_per_epoch: int | None = None
    diagnostics: bool = True
    strategy: str = ""

    def __post_init__(self):
        errors = []
        if int(self.b) != self.b or self.b < 1:
            errors.append(f"b must be a positive integer (got {self.b!r})")
        if int(self.k_out) != self.k_out or self.k_out < 1:
            errors.append(f"k_out must be >= 1 (got {self.k_out!r})")
        if int(self.warmstart_epochs) != self.warmstart_epochs or self.warmstart_epochs < 0:
            errors.append(f"warmstart_epochs must be >= 0 (got {self.warmstart_epochs!r})")
        if self.updates_per_epoch is not None and self.updates_per_epoch < 1:
            errors.append(f"updates_per_epoch must be >= 1 (got {self.updates_per_epoch!r})")
        if errors:
            raise ValueError("; ".join(errors))

    def stream(self, role: int) -> np.random.Generator:
        return split_rng(self.seed, (self.replication, role))


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    xi: int
    clamped: bool
    h2: float
    objective: float
    cum_ce: int
    cum_opt: int
    wall: float
    s_start: np.ndarray = field(repr=False)
    s_reset: np.ndarray = field(repr=False)
    s_end: np.ndarray = field(repr=False)


TRACE_COLUMNS = ("epoch", "xi", "clamped", "h2", "objective", "cum_ce", "cum_opt")


@dataclass
class RunTrace:
    strategy: str = ""
    seed: int = 0
    replication: int = 0
    records: list[EpochRecord] = field(default_factory=list)
    warm_epochs: int = 0
    warm_ce: int = 0
    warm_opt: int = 0
    gamma: float = float("nan")
    initial_objective: float = float("nan")
    final_s: np.ndarray | None = None
    final_theta: Any = None
    diverged: bool = False
    message: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, r.xi, int(r.clamped), repr(float(r.h2)), repr(float(r.objective)),
                        r.cum_ce, r.cum_opt])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "replication": self.replication,
            "gamma": self.gamma,
            "warm_epochs": self.warm_epochs,
            "warm_ce": self.warm_ce,
            "warm_opt": self.warm_opt,
            "diverged": self.diverged,
            "message": self.message,
            "wall": [r.wall for r in self.records],
        }


class _Monitor:
    """Appends epoch records; evaluation passes here are outside the counted budget."""

    def __init__(self, model: LatentModel, trace: RunTrace, counters: Counters, enabled: bool):
        self.model = model
        self.trace = trace
        self.counters = counters
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def record(self, epoch, xi, clamped, s_start, s_reset, s_end, theta_end=None):
        h2 = obj = float("nan")
        if self.enabled:
            theta = self.model.t_map(s_end) if theta_end is None else theta_end
            sbar, obj = self.model.evaluate(theta)
            h2 = float(np.sum((sbar - s_end) ** 2))
            if not (math.isfinite(h2) and math.isfinite(obj)):
                raise DivergenceError(f"non-finite diagnostics at epoch {epoch}", self.trace)
        self.trace.records.append(EpochRecord(
            epoch, int(xi), bool(clamped), h2, float(obj), self.counters.ce, self.counters.opt,
            time.perf_counter() - self.t0, s_start.copy(), s_reset.copy(), s_end.copy()))


def _guard(fn):
    """Turn infeasible iterates into DivergenceError carrying the partial trace."""

    def run(model, start, config, *args, **kwargs):
        trace = RunTrace(strategy=config.strategy, seed=config.seed, replication=config.replication)
        try:
            return fn(model, start, config, trace, *args, **kwargs)
        except (InfeasibleStatisticError, FloatingPointError) as exc:
            trace.diverged = True
            trace.message = str(exc)
            raise DivergenceError(str(exc), trace) from exc
        except DivergenceError as exc:
            trace.diverged = True
            trace.message = str(exc)
            exc.trace = trace
            raise

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def sqrt_batch(n: int) -> int:
    return math.ceil(math.sqrt(n))


def spider_increment(model: LatentModel, S: np.ndarray, theta_cur, theta_prev, batch: np.ndarray) -> np.ndarray:
    """Path-integrated update: both conditional expectations use the same batch."""
    diff = model.expectation_sum(batch, theta_cur) - model.expectation_sum(batch, theta_prev)
    return S + diff / len(batch)


def reset_estimate(model: LatentModel, s: np.ndarray, policy: ResetPolicy, t: int,
                   rng: np.random.Generator, counters: Counters, theta=None) -> np.ndarray:
    """Estimator refresh at the start of epoch ``t`` (full pass or subsample mean)."""
    theta = model.t_map(s) if theta is None else theta
    size = policy.size(model.n, t)
    if size >= model.n:
        out = model.full_expectation(theta)
    else:
        idx = np.sort(rng.choice(model.n, size=size, replace=False)).astype(np.intp)
        out = model.expectation_sum(idx, theta) / size
    counters.ce += size
    return out


def _online_epochs(model, s, epochs, b, updates, gamma, replacement, rng, counters, monitor=None, first_epoch=1):
    spec = BatchSpec(b, replacement)
    for e in range(epochs):
        s_start = s
        for _ in range(updates):
            batch = draw_minibatch(rng, model.n, spec)
            theta = model.t_map(s)
            s = s + gamma * (model.expectation_sum(batch, theta) / b - s)
            counters.ce += b
            counters.opt += 1
        if monitor is not None:
            monitor.record(first_epoch + e, updates, False, s_start, s_start, s)
    return s


def _warmstart(model, s, config: RunConfig, rng, trace: RunTrace):
    if config.warmstart_epochs == 0:
        return s
    m = sqrt_batch(model.n)
    warm = Counters()
    s = _online_epochs(model, s, config.warmstart_epochs, m, m, config.warmstart_gamma,
                       config.replacement, rng, warm)
    trace.warm_epochs = config.warmstart_epochs
    trace.warm_ce, trace.warm_opt = warm.ce, warm.opt
    return s


def _resolve_gamma(model, s, steps: StepSchedule) -> float:
    if steps.alpha is None:
        return steps.gamma
    from .gmm import estimate_lipschitz

    L = estimate_lipschitz(model, steps.lipschitz_probes, steps.lipschitz_radius, seed=0, reference=s)
    if not L > 0:
        raise ValueError("Lipschitz estimate is zero; set gamma explicitly")
    return steps.alpha / L


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------

def batch_em_run(model: LatentModel, theta_init, max_iter: int = 100, tol: float | None = 1e-10) -> RunTrace:
    """Batch EM ``tau <- T(sbar(tau))`` until ``|h(sbar(tau))| <= tol`` or ``max_iter``.

    ``tol=None`` always runs ``max_iter`` iterations.

    Row ``k`` holds ``s_k = sbar(tau_{k-1})``, ``F(tau_k)`` and ``|h(s_k)|^2``;
    ``F(theta_init)`` is kept in ``trace.initial_objective``.
    """
    trace = RunTrace(strategy="batch-em")
    counters = Counters()
    monitor_t0 = time.perf_counter()
    sbar, obj = model.evaluate(theta_init)
    trace.initial_objective = obj
    theta = theta_init
    for k in range(1, max_iter + 1):
        s = sbar
        counters.ce += model.n
        try:
            theta = model.t_map(s)
        except InfeasibleStatisticError as exc:
            trace.diverged, trace.message = True, str(exc)
            raise DivergenceError(str(exc), trace) from exc
        counters.opt += 1
        # the next E-step doubles as this iterate's diagnostic pass
        sbar, obj = model.evaluate(theta)
        h2 = float(np.sum((sbar - s) ** 2))
        trace.records.append(EpochRecord(k, 1, False, h2, obj, counters.ce, counters.opt,
                                         time.perf_counter() - monitor_t0, s, s, s))
        if not (math.isfinite(h2) and math.isfinite(obj)):
            trace.diverged, trace.message = True, f"non-finite diagnostics at iteration {k}"
            raise DivergenceError(trace.message, trace)
        if tol is not None and math.sqrt(h2) <= tol:
            break
    trace.final_s = trace.records[-1].s_end
    trace.final_theta = theta
    return trace


@_guard
def batch_em_epochs(model: LatentModel, s_init: np.ndarray, config: RunConfig, trace: RunTrace) -> RunTrace:
    """Batch EM as a benchmark strategy: warm start, then one iteration per epoch."""
    s = check_statistic(s_init, model.q)
    s = _warmstart(model, s, config, config.stream(STREAM_BATCH), trace)
    counters = Counters()
    monitor = _Monitor(model, trace, counters, config.diagnostics)
    trace.gamma = 1.0
    for t in range(1, config.k_out + 1):
        s_start = s
        s = model.full_expectation(model.t_map(s))
        counters.ce += model.n
        counters.opt += 1
        monitor.record(t, 1, False, s_start, s_start, s)
    trace.final_s = s
    trace.final_theta = model.t_map(s)
    return trace


@_guard
def online_em_run(model: LatentModel, s_init: np.ndarray, config: RunConfig, trace: RunTrace) -> RunTrace:
    """Online-EM with constant step ``config.steps.gamma``.

    Each epoch performs ``updates_per_epoch`` (default ``ceil(sqrt(n))``)
    updates with mini-batches of size ``config.b``.
    """
    s = check_statistic(s_init, model.q)
    rng = config.stream(STREAM_BATCH)
    s = _warmstart(model, s, config, rng, trace)
    gamma = _resolve_gamma(model, s, config.steps)
    trace.gamma = gamma
    updates = config.updates_per_epoch or sqrt_batch(model.n)
    counters = Counters()
    monitor = _Monitor(model, trace, counters, config.diagnostics)
    s = _online_epochs(model, s, config.k_out, config.b, updates, gamma, config.replacement,
                       rng, counters, monitor)
    trace.final_s = s
    trace.final_theta = model.t_map(s)
    return trace


@_guard
def gspider_run(model: LatentModel, s_init: np.ndarray, config: RunConfig, trace: RunTrace) -> RunTrace:
    """g-SPIDER-EM with the configured epoch schedule and reset policy.

    Epoch ``t`` starts from ``S_hat[t,-1]``; the estimator is refreshed
    (full pass or subsample), an optional reset step of size
    ``gamma_reset`` gives ``S_hat[t,0]``, then ``xi_t`` inner iterations
    update the estimator with same-batch differences and move ``S_hat``
    by ``gamma``. The first inner difference uses ``S_hat[t,-1]`` as the
    previous point.
    """
    s = check_statistic(s_init, model.q)
    batch_rng = config.stream(STREAM_BATCH)
    epoch_rng = config.stream(STREAM_EPOCH)
    s = _warmstart(model, s, config, batch_rng, trace)
    gamma = _resolve_gamma(model, s, config.steps)
    gamma0 = config.steps.gamma_reset
    trace.gamma = gamma
    spec = BatchSpec(config.b, config.replacement)
    counters = Counters()
    monitor = _Monitor(model, trace, counters, config.diagnostics)

    s_prev = s                                          # S_hat[1,-1]
    theta_prev = model.t_map(s_prev)
    S = reset_estimate(model, s_prev, config.reset, 1, batch_rng, counters, theta_prev)
    s_cur = s_prev + gamma0 * (S - s_prev) if gamma0 else s_prev
    for t in range(1, config.k_out + 1):
        s_start, s_reset = s_prev, s_cur
        theta_cur = theta_prev if s_cur is s_prev else model.t_map(s_cur)
        xi, clamped = draw_epoch_length(epoch_rng, config.schedule, t, return_clamped=True)
        for _ in range(xi):
            batch = draw_minibatch(batch_rng, model.n, spec)
            S = spider_increment(model, S, theta_cur, theta_prev, batch)
            counters.ce += 2 * len(batch)
            s_next = s_cur + gamma * (S - s_cur)
            counters.opt += 1
            theta_prev, theta_cur = theta_cur, model.t_map(s_next)
            s_cur = s_next
        # hand-off: S_hat[t+1,-1] = S_hat[t,xi_t]
        s_prev, theta_prev = s_cur, theta_cur
        S = reset_estimate(model, s_prev, config.reset, t + 1, batch_rng, counters, theta_prev)
        s_cur = s_prev + gamma0 * (S - s_prev) if gamma0 else s_prev
        counters.opt += 1
        monitor.record(t, xi, clamped, s_start, s_reset, s_prev, theta_prev)
    trace.final_s = s_prev
    trace.final_theta = theta_prev
    return trace


# --------------------------------------------------------------------------
# strategies and termination
# --------------------------------------------------------------------------

SPIDER_STRATEGIES = ("full-geom", "half-geom", "quad-geom", "full-ctt", "half-ctt", "quad-ctt")
BASELINES = ("online-em", "batch-em")


def spider_strategy(name: str, n: int, b: int) -> tuple[EpochSchedule, ResetPolicy]:
    """Epoch schedule and reset policy for one of the six named strategies."""
    try:
        reset_name, length_name = name.split("-")
        reset = {"full": Full(), "half": Fraction(0.5), "quad": Growth(20.0, 50.0)}[reset_name]
    except (ValueError, KeyError):
        raise ValueError(f"unknown strategy {name!r}; expected one of {SPIDER_STRATEGIES}") from None
    if length_name == "ctt":
        schedule: EpochSchedule = Constant(math.ceil(n / (2 * b)))
    elif length_name == "geom" and reset_name == "quad":
        schedule = GrowingGeometric(n, b, 20.0, 50.0)
    elif length_name == "geom":
        schedule = Geometric.with_mean(n / (2 * b))
    else:
        raise ValueError(f"unknown strategy {name!r}; expected one of {SPIDER_STRATEGIES}")
    return schedule, reset


def run_strategy(model: LatentModel, s_init: np.ndarray, name: str, config: RunConfig) -> RunTrace:
    """Dispatch a strategy name to its solver; ``config`` carries everything else."""
    if name == "online-em":
        return online_em_run(model, s_init, config)
    if name == "batch-em":
        return batch_em_epochs(model, s_init, config)
    schedule, reset = spider_strategy(name, model.n, config.b)
    return gspider_run(model, s_init, replace(config, schedule=schedule, reset=reset))


def randomized_terminate(trace: RunTrace, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Draw ``T`` uniformly among the recorded epochs and return its terminal statistic."""
    if not trace.records:
        raise ValueError("trace has no recorded epochs")
    T = int(rng.integers(1, len(trace.records) + 1))
    return T, trace.records[T - 1].s_end

"""Exact-enumeration and Monte-Carlo checks of the estimator identities.

Each check returns a :class:`Check` with the observed deviation and the
threshold it was held to. Enumeration checks average over every ordered
batch drawn with replacement (each has probability ``n^-b``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import synth_gmm
from .gmm import GaussianMixture, init_params
from .samplers import BatchSpec, Constant, Geometric, draw_epoch_lengths, draw_minibatch, split_rng
from .solvers import Full, RunConfig, StepSchedule, gspider_run, spider_increment

TOY_DATA = np.array([[-2.0], [-1.0], [1.0], [2.0]])


@dataclass(frozen=True)
class Check:
    name: str
    deviation: float
    threshold: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{status}  {self.name}: deviation={self.deviation:.3e} threshold={self.threshold:.3e}{extra}"


def toy_model() -> GaussianMixture:
    """Four points {-2, -1, 1, 2}, two components, one dimension."""
    return GaussianMixture(TOY_DATA, 2)


def _model(n: int, seed: int) -> GaussianMixture:
    if n == 4:
        return toy_model()
    ds, _ = synth_gmm(2, 2, n, 3.0, seed)
    return GaussianMixture(ds.values, 2)


def probe_state(model: GaussianMixture, rng: np.random.Generator):
    """A pair of nearby feasible iterates and an arbitrary running estimator."""
    theta = init_params(model.X, model.g, rng)
    s_prev = model.full_expectation(theta)
    other = model.full_expectation(init_params(model.X, model.g, rng))
    s_cur = s_prev + 0.3 * (other - s_prev)
    S = s_prev + 0.1 * rng.standard_normal(model.q) * np.abs(s_prev).max()
    return s_prev, s_cur, S


def _batches(n: int, b: int):
    return (np.array(B, dtype=np.intp) for B in itertools.product(range(n), repeat=b))


def check_bias_exact(n: int = 4, b: int = 2, seed: int = 0) -> Check:
    """E[S_{k+1}] = S_k + sbar(T(S_hat_k)) - sbar(T(S_hat_{k-1})), averaged over all batches."""
    model = _model(n, seed)
    s_prev, s_cur, S = probe_state(model, split_rng(seed, 10))
    th_prev, th_cur = model.t_map(s_prev), model.t_map(s_cur)
    total = np.zeros(model.q)
    count = 0
    for B in _batches(n, b):
        total += spider_increment(model, S, th_cur, th_prev, B)
        count += 1
    expected = S + model.full_expectation(th_cur) - model.full_expectation(th_prev)
    dev = float(np.abs(total / count - expected).max())
    return Check(f"bias/exact n={n} b={b}", dev, 1e-12, f"{count} batches")


def check_bias_mc(n: int = 200, b: int = 10, trials: int = 100_000, seed: int = 0) -> Check:
    """Monte-Carlo version: componentwise deviation in units of standard errors (threshold 5)."""
    model = _model(n, seed)
    s_prev, s_cur, S = probe_state(model, split_rng(seed, 10))
    th_prev, th_cur = model.t_map(s_prev), model.t_map(s_cur)
    everyone = np.arange(n)
    delta = model.expectations(everyone, th_cur) - model.expectations(everyone, th_prev)
    rng = split_rng(seed, 11)
    spec = BatchSpec(b, True)
    acc = np.zeros(model.q)
    acc2 = np.zeros(model.q)
    for _ in range(trials):
        step = delta[draw_minibatch(rng, n, spec)].mean(axis=0)
        acc += step
        acc2 += step * step
    mean = acc / trials
    se = np.sqrt(np.maximum(acc2 / trials - mean * mean, 0.0) / trials)
    expected = model.full_expectation(th_cur) - model.full_expectation(th_prev)
    err = np.abs(S + mean - (S + expected))
    # components with no sampling noise must agree to rounding
    z = np.where(se > 0, err / np.where(se > 0, se, 1.0), np.where(err <= 1e-12, 0.0, np.inf))
    return Check(f"bias/mc n={n} b={b} M={trials}", float(z.max()), 5.0, "in standard errors")


def check_variance_exact(n: int = 4, b: int = 2, seed: int = 0) -> list[Check]:
    """Batch-mean unbiasedness and the with-replacement variance equality, by enumeration."""
    model = _model(n, seed)
    s_prev, s_cur, S = probe_state(model, split_rng(seed, 12))
    th_prev, th_cur = model.t_map(s_prev), model.t_map(s_cur)
    everyone = np.arange(n)
    delta = model.expectations(everyone, th_cur) - model.expectations(everyone, th_prev)
    dbar = delta.mean(axis=0)
    steps = np.array([spider_increment(model, S, th_cur, th_prev, B) for B in _batches(n, b)])
    mean_step = steps.mean(axis=0)
    unbiased = float(np.abs(mean_step - (S + dbar)).max())
    lhs = float(np.mean(np.sum((steps - mean_step) ** 2, axis=1)))
    rhs = (np.mean(np.sum(delta ** 2, axis=1)) - np.sum(dbar ** 2)) / b
    x = split_rng(seed, 13).standard_normal((n, 3))
    means = np.array([x[B].mean(axis=0) for B in _batches(n, b)])
    plain = float(np.abs(means.mean(axis=0) - x.mean(axis=0)).max())
    plain_var = abs(float(np.mean(np.sum((means - x.mean(axis=0)) ** 2, axis=1)))
                    - float(np.mean(np.sum((x - x.mean(axis=0)) ** 2, axis=1))) / b)
    return [
        Check(f"variance/unbiased-mean n={n} b={b}", plain, 1e-12),
        Check(f"variance/identity-plain n={n} b={b}", plain_var, 1e-12),
        Check(f"variance/unbiased-increment n={n} b={b}", unbiased, 1e-12),
        Check(f"variance/identity-increment n={n} b={b}", abs(lhs - rhs), 1e-12),
    ]


SEQUENCES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "k": lambda k: k.astype(float),
    "k^2": lambda k: k.astype(float) ** 2,
    "2^-k": lambda k: 2.0 ** (-k.astype(float)),
}


def geometric_stopping_analytic(D: Callable[[np.ndarray], np.ndarray], rho: float, terms: int | None = None):
    """Truncated sums for ``E[D_{X-1}]`` and ``rho E[D_X] + (1 - rho) D_0`` with X geometric."""
    if terms is None:
        terms = int(math.ceil(80.0 / -math.log(rho))) + 50
    k = np.arange(1, terms + 1)
    p = (1.0 - rho) * rho ** (k - 1.0)
    lhs = math.fsum(p * D(k - 1))
    rhs = rho * math.fsum(p * D(k)) + (1.0 - rho) * float(D(np.array([0]))[0])
    return lhs, rhs


def check_geom_analytic(name: str, rho: float) -> Check:
    lhs, rhs = geometric_stopping_analytic(SEQUENCES[name], rho)
    dev = abs(lhs - rhs) / max(1.0, abs(lhs))
    return Check(f"geom/analytic D={name} rho={rho}", dev, 1e-12, f"E[D(X-1)]={lhs:.12g}")


def check_geom_mc(name: str, rho: float, trials: int = 1_000_000, seed: int = 0) -> Check:
    """Monte-Carlo: the per-draw difference of both sides has mean zero (threshold 4 s.e.)."""
    D = SEQUENCES[name]
    rng = split_rng(seed, (20, int(rho * 1000), len(name)))
    xi = draw_epoch_lengths(rng, Geometric(rho), trials)
    y = D(xi - 1) - rho * D(xi) - (1.0 - rho) * float(D(np.array([0]))[0])
    se = y.std() / math.sqrt(trials)
    z = abs(y.mean()) / se if se > 0 else (0.0 if abs(y.mean()) <= 1e-12 else math.inf)
    return Check(f"geom/mc D={name} rho={rho} M={trials}", z, 4.0, "in standard errors")


def _counter_model(n: int, seed: int) -> GaussianMixture:
    ds, _ = synth_gmm(2, 2, n, 4.0, seed)
    return GaussianMixture(ds.values, 2)


def check_counters_constant(configs: int = 5, seed: int = 0) -> list[Check]:
    """Constant epochs with full resets: K_CE and K_Opt match their closed forms exactly."""
    rng = split_rng(seed, 30)
    out = []
    for c in range(configs):
        n = int(rng.integers(40, 300))
        b = int(rng.integers(1, 20))
        k_in = int(rng.integers(1, 12))
        k_out = int(rng.integers(1, 6))
        model = _counter_model(n, seed + c)
        s0 = model.full_expectation(init_params(model.X, 2, rng))
        cfg = RunConfig(b=b, k_out=k_out, schedule=Constant(k_in), reset=Full(),
                        steps=StepSchedule(gamma=0.05), seed=seed, replication=c, diagnostics=False)
        tr = gspider_run(model, s0, cfg)
        ce = tr.column("cum_ce")
        opt = tr.column("cum_opt")
        t = np.arange(1, k_out + 1)
        dev = max(np.abs(ce - (n + n * t + 2 * b * k_in * t)).max(),
                  np.abs(opt - (t + k_in * t)).max())
        label = f"counters/constant n={n} b={b} k_in={k_in} k_out={k_out}"
        out.append(Check(label, float(dev), 0.0, f"K_CE={ce[-1]} K_Opt={opt[-1]}"))
    return out


def check_counters_geometric(replications: int = 200, k_out: int = 3, n: int = 200, b: int = 10,
                             mean_len: float = 10.0, seed: int = 0) -> Check:
    """Geometric epochs: mean K_CE over replications within 4 s.e. of its expectation."""
    model = _counter_model(n, seed)
    s0 = model.full_expectation(init_params(model.X, 2, split_rng(seed, 31)))
    law = Geometric.with_mean(mean_len)
    totals = []
    for r in range(replications):
        cfg = RunConfig(b=b, k_out=k_out, schedule=law, reset=Full(), steps=StepSchedule(gamma=0.05),
                        seed=seed, replication=r, diagnostics=False)
        totals.append(gspider_run(model, s0, cfg).column("cum_ce")[-1])
    totals = np.array(totals, dtype=float)
    expected = n + n * k_out + 2 * b * k_out * law.mean()
    sd = 2 * b * math.sqrt(k_out * law.variance())
    z = abs(totals.mean() - expected) / (sd / math.sqrt(replications))
    return Check(f"counters/geometric n={n} b={b} E[xi]={law.mean():.3f} reps={replications}", z, 4.0,
                 f"mean K_CE={totals.mean():.1f} expected={expected:.1f}")


def run_suite(suite: str = "all", trials: int | None = None, seed: int = 0) -> list[Check]:
    checks: list[Check] = []
    if suite in ("bias", "all"):
        checks.append(check_bias_exact(4, 2, seed))
        checks.append(check_bias_mc(200, 10, trials or 100_000, seed))
    if suite in ("variance", "all"):
        for n in (2, 3, 4):
            for b in (1, 2, 3):
                checks.extend(check_variance_exact(n, b, seed))
    if suite in ("geom", "all"):
        for name in SEQUENCES:
            for rho in (0.3, 0.9):
                checks.append(check_geom_analytic(name, rho))
                checks.append(check_geom_mc(name, rho, trials or 1_000_000, seed))
    if suite in ("counters", "all"):
        checks.extend(check_counters_constant(5, seed))
        checks.append(check_counters_geometric(seed=seed))
    if not checks:
        raise ValueError(f"unknown suite {suite!r}")
    return checks

"""Gaussian mixture with a shared full covariance, in the sufficient-statistics space.

Statistic layout (length ``q = g + g*d + d*(d+1)/2``)::

    [ r_1 .. r_g | r_1*y .. r_g*y | svec(y y^T) ]

where ``svec`` stacks the upper triangle row by row (no off-diagonal scaling).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels
from .model import InfeasibleStatisticError, LatentModel, check_statistic

WEIGHT_FLOOR = 1e-8
COV_FLOOR = 1e-8
_LOG_2PI = math.log(2.0 * math.pi)


def svec(M: np.ndarray) -> np.ndarray:
    """Upper triangle of a symmetric matrix, row by row."""
    M = np.asarray(M, dtype=float)
    return M[np.triu_indices(M.shape[0])]


def smat(v: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    M = np.zeros((d, d))
    iu = np.triu_indices(d)
    M[iu] = v
    M.T[iu] = v
    return M


def stat_size(g: int, d: int) -> int:
    return g + g * d + d * (d + 1) // 2


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture weights, component means and the shared covariance.

    The Cholesky factor and derived quantities are computed once at
    construction and reused by every E-step with these parameters.
    """

    weights: np.ndarray
    means: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    whiten: np.ndarray = field(init=False, repr=False)
    wmeans: np.ndarray = field(init=False, repr=False)
    log_weights: np.ndarray = field(init=False, repr=False)
    half_logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        mu = np.ascontiguousarray(np.atleast_2d(self.means), dtype=float)
        cov = np.ascontiguousarray(np.atleast_2d(self.covariance), dtype=float)
        g, d = mu.shape
        if w.shape != (g,) or cov.shape != (d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covariance {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            L = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        whiten = linalg.solve_triangular(L, np.eye(d), lower=True)
        with np.errstate(divide="ignore"):
            log_w = np.log(w)
        for name, value in (
            ("weights", w),
            ("means", mu),
            ("covariance", cov),
            ("chol", L),
            ("whiten", np.ascontiguousarray(whiten)),
            ("wmeans", np.ascontiguousarray(mu @ whiten.T)),
            ("log_weights", log_w),
            ("half_logdet", float(np.log(np.diag(L)).sum())),
        ):
            object.__setattr__(self, name, value)

    @property
    def g(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def log_joint(theta: GmmParams, Y: np.ndarray) -> np.ndarray:
    """``log w_j + log N(y; mu_j, Sigma)`` for each row of ``Y``, shape (m, g)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = Y @ theta.whiten.T
    sq = ((Z[:, None, :] - theta.wmeans[None, :, :]) ** 2).sum(axis=2)
    return theta.log_weights[None, :] - 0.5 * sq - 0.5 * theta.d * _LOG_2PI - theta.half_logdet


def _normalize_log(lp: np.ndarray) -> np.ndarray:
    top = lp.max(axis=1, keepdims=True)
    p = np.exp(lp - top)
    return p / p.sum(axis=1, keepdims=True)


def posterior_responsibilities(theta: GmmParams, y: np.ndarray) -> np.ndarray:
    """Posterior probabilities of the component labels given one observation."""
    return _normalize_log(log_joint(theta, np.reshape(y, (1, -1))))[0]


def repair_statistic(s: np.ndarray, g: int, d: int,
                     weight_floor: float = WEIGHT_FLOOR, cov_floor: float = COV_FLOOR) -> GmmParams:
    """Closed-form M-step with the feasibility repair applied.

    Block-1 entries are clipped to ``weight_floor`` and renormalized; the
    covariance is symmetrized and shifted by the smallest ``lam`` in
    ``{0, cov_floor, 100*cov_floor, ...}`` that makes it positive definite
    with minimum eigenvalue at least ``cov_floor``.
    """
    r = s[:g]
    total = r.sum()
    if not total > 0:
        raise InfeasibleStatisticError(f"mixture-weight block sums to {total:g}; cannot repair")
    w = np.maximum(r, weight_floor)
    w = w / w.sum()
    means = s[g:g + g * d].reshape(g, d) / w[:, None]
    cov = smat(s[g + g * d:], d) - (w[:, None, None] * means[:, :, None] * means[:, None, :]).sum(axis=0)
    cov = 0.5 * (cov + cov.T)
    eye = np.eye(d)
    lam = 0.0
    for _ in range(40):
        candidate = cov + lam * eye
        try:
            linalg.cholesky(candidate, lower=True)
        except linalg.LinAlgError:
            pass
        else:
            if np.linalg.eigvalsh(candidate)[0] >= cov_floor:
                return GmmParams(w, means, candidate)
        lam = cov_floor if lam == 0.0 else lam * 100.0
    raise InfeasibleStatisticError("covariance block could not be repaired")


class GaussianMixture(LatentModel):
    """Shared-covariance Gaussian mixture over an ``n x d`` data matrix."""

    def __init__(self, data: np.ndarray, g: int, cov_floor: float = COV_FLOOR,
                 weight_floor: float = WEIGHT_FLOOR):
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(data, dtype=float)))
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("data must be a non-empty 2-D array")
        if not np.all(np.isfinite(X)):
            raise ValueError("data has non-finite entries")
        if g < 1:
            raise ValueError("g must be >= 1")
        self.X = X
        self.n, self.d = X.shape
        self.g = int(g)
        self.q = stat_size(self.g, self.d)
        self.cov_floor = cov_floor
        self.weight_floor = weight_floor
        iu = np.triu_indices(self.d)
        self._yy = np.ascontiguousarray(X[:, iu[0]] * X[:, iu[1]])
        self._all = np.arange(self.n, dtype=np.intp)

    def __getstate__(self):
        return {"data": self.X, "g": self.g, "cov_floor": self.cov_floor, "weight_floor": self.weight_floor}

    def __setstate__(self, state):
        self.__init__(state["data"], state["g"], state["cov_floor"], state["weight_floor"])

    def split(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g, d = self.g, self.d
        return s[:g], s[g:g + g * d].reshape(g, d), s[g + g * d:]

    def t_map(self, s: np.ndarray) -> GmmParams:
        s = check_statistic(s, self.q)
        return repair_statistic(s, self.g, self.d, self.weight_floor, self.cov_floor)

    def per_example_expectation(self, i: int, theta: GmmParams) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"example index {i} out of range [0, {self.n})")
        y = self.X[i]
        r = posterior_responsibilities(theta, y)
        return np.concatenate([r, np.outer(r, y).ravel(), self._yy[i]])

    def expectations(self, indices, theta: GmmParams) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.intp)
        Y = self.X[idx]
        R = _normalize_log(log_joint(theta, Y))
        ry = (R[:, :, None] * Y[:, None, :]).reshape(len(idx), -1)
        return np.hstack([R, ry, self._yy[idx]])

    def _sums(self, idx: np.ndarray, theta: GmmParams) -> tuple[np.ndarray, float]:
        r_sum, ry_sum, lse = kernels.estep_sums(self.X, idx, theta.log_weights, theta.wmeans, theta.whiten)
        yy_sum = self._yy[idx].sum(axis=0)
        return np.concatenate([r_sum, ry_sum.ravel(), yy_sum]), lse

    def expectation_sum(self, indices, theta: GmmParams) -> np.ndarray:
        idx = np.ascontiguousarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError("example index out of range")
        return self._sums(idx, theta)[0]

    def evaluate(self, theta: GmmParams) -> tuple[np.ndarray, float]:
        total, lse = self._sums(self._all, theta)
        return total / self.n, self._objective_from_lse(lse, theta)

    def _objective_from_lse(self, lse: float, theta: GmmParams) -> float:
        return -(lse / self.n - 0.5 * self.d * _LOG_2PI - theta.half_logdet)

    def objective(self, theta: GmmParams) -> float:
        return self.evaluate(theta)[1]


def init_params(X: np.ndarray, g: int, rng: np.random.Generator, cov_floor: float = COV_FLOOR) -> GmmParams:
    """k-means++ seeded means, uniform weights, empirical data covariance."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    centers = [X[rng.integers(n)]]
    dist = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, g):
        total = dist.sum()
        j = rng.integers(n) if total <= 0 else rng.choice(n, p=dist / total)
        centers.append(X[j])
        dist = np.minimum(dist, ((X - X[j]) ** 2).sum(axis=1))
    cov = np.atleast_2d(np.cov(X.T, bias=True)) if n > 1 else np.eye(d)
    cov = 0.5 * (cov + cov.T)
    lam = 0.0
    while np.linalg.eigvalsh(cov + lam * np.eye(d))[0] < cov_floor:
        lam = cov_floor if lam == 0.0 else lam * 100.0
    return GmmParams(np.full(g, 1.0 / g), np.array(centers), cov + lam * np.eye(d))


def estimate_lipschitz(model: LatentModel, probe_count: int, radius: float, seed: int,
                       reference: np.ndarray | None = None) -> float:
    """Empirical Lipschitz surrogate for the per-example maps ``sbar_i o T``.

    Random secant pairs are drawn in a ball of ``radius`` around
    ``reference`` (default: the statistic of a k-means++ initialization);
    the largest ratio ``|sbar_i(T(s)) - sbar_i(T(s'))| / |s - s'|`` over the
    pairs and all examples is returned. Only meant to suggest a step size.
    """
    if probe_count < 2:
        raise ValueError("probe_count must be >= 2")
    rng = np.random.default_rng(seed)
    if reference is None:
        reference = model.full_expectation(init_params(model.X, model.g, rng))
    reference = np.asarray(reference, dtype=float)
    all_idx = np.arange(model.n)
    best = 0.0
    for _ in range(probe_count):
        u, v = rng.standard_normal((2, model.q))
        s1 = reference + radius * rng.uniform() * u / np.linalg.norm(u)
        s2 = reference + radius * rng.uniform() * v / np.linalg.norm(v)
        gap = np.linalg.norm(s1 - s2)
        if gap == 0.0:
            continue
        e1 = model.expectations(all_idx, model.t_map(s1))
        e2 = model.expectations(all_idx, model.t_map(s2))
        best = max(best, float(np.linalg.norm(e1 - e2, axis=1).max() / gap))
    return best

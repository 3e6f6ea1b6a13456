"""Dataset ingestion, column filtering, PCA projection and synthetic mixtures."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gmm import GmmParams


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"dataset must be a non-empty 2-D matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("dataset has non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def with_note(self, values: np.ndarray, note: str) -> "Dataset":
        return Dataset(values, self.provenance + (note,))


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read a rectangular numeric CSV; errors name the 1-based row and column."""
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                col = next(j for j, c in enumerate(row, start=1) if not _is_float(c))
                raise DataError(f"{path}: row {lineno}, column {col}: non-numeric value {row[col - 1]!r}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows), (f"loaded {path.name}",))


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_csv(path, values: np.ndarray, header: list[str] | None = None) -> None:
    """Write with ``repr`` formatting so that reloading is exact."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.atleast_2d(values):
            w.writerow([repr(float(x)) for x in row])


def drop_constant_columns(data: Dataset, tol: float = 0.0) -> Dataset:
    """Remove columns whose sample variance is at most ``tol``."""
    v = data.values
    ddof = 1 if data.n > 1 else 0
    var = v.var(axis=0, ddof=ddof)
    drop = (var <= tol) | (np.ptp(v, axis=0) == 0)
    if drop.all():
        raise DataError("every column is constant")
    removed = np.flatnonzero(drop)
    return data.with_note(v[:, ~drop], f"dropped constant columns {removed.tolist()}")


@dataclass(frozen=True)
class Projection:
    means: np.ndarray
    components: np.ndarray  # target_dim x d, rows are eigenvectors
    eigenvalues: np.ndarray
    whiten: bool = False

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = (np.asarray(values, dtype=float) - self.means) @ self.components.T
        if self.whiten:
            out = out / np.sqrt(self.eigenvalues)
        return out

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_csv(directory / "means.csv", self.means[None, :])
        write_csv(directory / "eigenvalues.csv", self.eigenvalues[None, :])
        write_csv(directory / "components.csv", self.components)
        manifest = {
            "target_dim": int(self.components.shape[0]),
            "input_dim": int(self.components.shape[1]),
            "whiten": self.whiten,
            "files": ["means.csv", "eigenvalues.csv", "components.csv"],
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "Projection":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        return cls(
            load_csv(directory / "means.csv").values[0],
            load_csv(directory / "components.csv").values,
            load_csv(directory / "eigenvalues.csv").values[0],
            bool(manifest["whiten"]),
        )


def pca_project(data: Dataset, target_dim: int, whiten: bool = False) -> tuple[Dataset, Projection]:
    """Project centred data on the leading eigenvectors of the sample covariance.

    Each eigenvector is signed so that its largest-magnitude entry is positive.
    """
    if not 1 <= target_dim <= data.d:
        raise DataError(f"target_dim must lie in [1, {data.d}], got {target_dim}")
    v = data.values
    means = v.mean(axis=0)
    centred = v - means
    cov = centred.T @ centred / max(data.n - 1, 1)
    try:
        evals, evecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise DataError(f"covariance eigendecomposition failed: {exc}") from exc
    order = np.argsort(evals)[::-1][:target_dim]
    comps = evecs[:, order].T
    pivot = np.abs(comps).argmax(axis=1)
    comps = comps * np.sign(comps[np.arange(target_dim), pivot])[:, None]
    proj = Projection(means, comps, np.maximum(evals[order], 0.0), whiten)
    if whiten and np.any(proj.eigenvalues <= 0):
        raise DataError("cannot whiten a zero-variance component")
    note = f"pca {data.d}->{target_dim}" + (" whitened" if whiten else "")
    return data.with_note(proj.apply(v), note), proj


def synth_gmm(g: int, d: int, n: int, separation: float, seed: int) -> tuple[Dataset, GmmParams]:
    """Sample ``n`` points from a shared-covariance mixture with well-spread means.

    Means are random directions rescaled so that the closest pair sits at
    ``separation * sqrt(lambda_max(Sigma))``.
    """
    if min(g, d, n) < 1 or not separation > 0:
        raise ValueError("g, d, n must be >= 1 and separation > 0")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d)) / math.sqrt(d)
    cov = A @ A.T + 0.5 * np.eye(d)
    cov /= np.linalg.eigvalsh(cov)[-1]
    if g == 1:
        means = rng.standard_normal((1, d))
    else:
        means = rng.standard_normal((g, d))
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
        closest = gaps[np.triu_indices(g, 1)].min()
        means *= separation / closest
    weights = rng.dirichlet(np.full(g, 10.0))
    labels = rng.choice(g, size=n, p=weights)
    L = np.linalg.cholesky(cov)
    X = means[labels] + rng.standard_normal((n, d)) @ L.T
    truth = GmmParams(weights, means, cov)
    note = f"synthetic mixture g={g} d={d} n={n} separation={separation} seed={seed}"
    return Dataset(X, (note,)), truth

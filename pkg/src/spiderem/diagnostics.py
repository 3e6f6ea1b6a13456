"""Monitoring metrics, aggregation across replications, CSV/SVG export."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import LatentModel, mean_field
from .solvers import RunTrace

BENCH_COLUMNS = ("strategy", "epoch", "cum_ce", "q50_h2", "mean_negF", "n_diverged")
FIGURES = {
    "fig1_h2_vs_epoch": ("epoch", "q50_h2"),
    "fig2_h2_vs_ce": ("cum_ce", "q50_h2"),
    "fig3_negF_vs_ce": ("cum_ce", "mean_negF"),
}


def h_norm_sq(model: LatentModel, s: np.ndarray) -> float:
    """Squared norm of the mean field at ``s`` (full pass, uncounted)."""
    return float(np.sum(mean_field(model, s) ** 2))


def quantile(values: Sequence[float], p: float) -> float:
    """Order statistic with linear interpolation between closest ranks (Hyndman-Fan type 7)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    if not np.all(np.isfinite(x)):
        raise ValueError("quantile input must be finite")
    return float(np.quantile(x, p, method="linear"))


@dataclass
class StrategySeries:
    epoch: np.ndarray
    cum_ce: np.ndarray
    q50_h2: np.ndarray
    mean_negF: np.ndarray
    n_diverged: np.ndarray


@dataclass
class BenchResult:
    series: dict[str, StrategySeries] = field(default_factory=dict)
    replications: int = 0

    def rows(self) -> Iterable[tuple]:
        for name in self.series:
            s = self.series[name]
            for k in range(len(s.epoch)):
                yield (name, int(s.epoch[k]), s.cum_ce[k], s.q50_h2[k], s.mean_negF[k], int(s.n_diverged[k]))


def aggregate(traces: dict[str, list[RunTrace]], k_out: int) -> BenchResult:
    """Per strategy and epoch: median ``|h|^2``, mean ``-F`` and mean cumulative CE.

    Replications with a non-finite value (or that stopped before the epoch)
    are left out of that epoch's statistics and counted in ``n_diverged``.
    Replications are sorted by index first, so launch order is irrelevant.
    """
    result = BenchResult()
    for name, runs in traces.items():
        runs = sorted(runs, key=lambda r: r.replication)
        result.replications = max(result.replications, len(runs))
        h2 = np.full((len(runs), k_out), np.nan)
        obj = np.full((len(runs), k_out), np.nan)
        ce = np.full((len(runs), k_out), np.nan)
        for r, trace in enumerate(runs):
            m = min(k_out, len(trace.records))
            h2[r, :m] = trace.column("h2")[:m]
            obj[r, :m] = trace.column("objective")[:m]
            ce[r, :m] = trace.column("cum_ce")[:m]
        ok = np.isfinite(h2) & np.isfinite(obj)
        q50 = np.full(k_out, np.nan)
        negf = np.full(k_out, np.nan)
        mean_ce = np.full(k_out, np.nan)
        for t in range(k_out):
            col = ok[:, t]
            if col.any():
                q50[t] = quantile(h2[col, t], 0.5)
                negf[t] = -math.fsum(obj[col, t]) / col.sum()
                mean_ce[t] = math.fsum(ce[col, t]) / col.sum()
        result.series[name] = StrategySeries(np.arange(1, k_out + 1), mean_ce, q50, negf, (~ok).sum(axis=0))
    return result


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def bench_csv(result: BenchResult, columns: Sequence[str] = BENCH_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("strategy",) + tuple(c for c in columns if c != "strategy"))
    for row in result.rows():
        rec = dict(zip(BENCH_COLUMNS, row))
        w.writerow([rec["strategy"]] + [_fmt(rec[c]) for c in columns if c != "strategy"])
    return buf.getvalue()


def export_bench(result: BenchResult, out_dir, svg: bool = True) -> list[Path]:
    """Write ``bench.csv``, one CSV per figure and (optionally) one SVG per figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "bench.csv"]
    written[0].write_text(bench_csv(result))
    for fig, (x, y) in FIGURES.items():
        path = out / f"{fig}.csv"
        path.write_text(bench_csv(result, ("strategy", x, y)))
        written.append(path)
        if svg:
            written.append(plot_figure(result, x, y, out / f"{fig}.svg"))
    return written


def read_bench_csv(path) -> BenchResult:
    rows: dict[str, list[list[float]]] = {}
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["strategy"], []).append(
                [float(rec[c]) for c in BENCH_COLUMNS[1:]])
    result = BenchResult()
    for name, vals in rows.items():
        a = np.array(vals)
        result.series[name] = StrategySeries(a[:, 0].astype(int), a[:, 1], a[:, 2], a[:, 3], a[:, 4].astype(int))
    return result


def plot_figure(result: BenchResult, x: str, y: str, path) -> Path:
    """Static SVG line chart; ``|h|^2`` is drawn on a log scale."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "spiderem"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, s in result.series.items():
        ax.plot(getattr(s, x), getattr(s, y), label=name, marker=".", markersize=3)
    if y == "q50_h2":
        ax.set_yscale("log")
    ax.set_xlabel({"epoch": "epoch", "cum_ce": "conditional expectations"}[x])
    ax.set_ylabel({"q50_h2": "median |h|^2", "mean_negF": "mean -F"}[y])
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def value_at_budget(cum_ce: np.ndarray, values: np.ndarray, budget: float) -> float:
    """Value at the last epoch whose cumulative cost does not exceed ``budget``."""
    ok = np.flatnonzero(np.asarray(cum_ce) <= budget)
    if ok.size == 0:
        raise ValueError("no epoch fits within the budget")
    return float(np.asarray(values)[ok[-1]])


def log_slope(values: Sequence[float], last: int | None = None) -> float:
    """Least-squares slope of ``log(values)`` against epoch index over the final ``last`` points."""
    v = np.asarray(values, dtype=float)
    if last is not None:
        v = v[-last:]
    t = np.arange(len(v), dtype=float)
    return float(np.polyfit(t, np.log(v), 1)[0])

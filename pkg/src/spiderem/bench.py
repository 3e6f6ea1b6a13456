"""Strategy x replication grid runner."""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentSpec, SpecError
from .data import load_csv, synth_gmm
from .diagnostics import BenchResult, aggregate, export_bench
from .gmm import GaussianMixture, init_params
from .samplers import STREAM_INIT, split_rng
from .solvers import DivergenceError, RunConfig, RunTrace, StepSchedule, run_strategy


def build_model(spec: ExperimentSpec) -> GaussianMixture:
    if spec.source == "csv":
        data = load_csv(spec.csv_path, spec.has_header).values
    else:
        data = synth_gmm(spec.synth_g, spec.synth_d, spec.synth_n, spec.synth_separation, spec.data_seed)[0].values
    model = GaussianMixture(data, spec.g, cov_floor=spec.cov_floor)
    problems = []
    for name in spec.strategies:
        b = spec.batch_for(model.n, name)
        if not spec.option(name, "replacement") and b > model.n:
            problems.append(f"{name}: batch_size {b} exceeds n={model.n} without replacement")
    if problems:
        raise SpecError(problems)
    return model


def initial_statistic(model: GaussianMixture, spec: ExperimentSpec) -> np.ndarray:
    """Shared starting point: ``sbar(theta_init)`` for a k-means++ initialization."""
    theta = init_params(model.X, model.g, split_rng(spec.init_seed, STREAM_INIT), spec.cov_floor)
    return model.full_expectation(theta)


def run_config(spec: ExperimentSpec, n: int, strategy: str, replication: int, seed: int | None = None) -> RunConfig:
    return RunConfig(
        b=spec.batch_for(n, strategy),
        k_out=spec.k_out,
        steps=StepSchedule(gamma=float(spec.option(strategy, "gamma")),
                           gamma_reset=float(spec.option(strategy, "gamma_reset"))),
        warmstart_epochs=spec.warmstart_epochs,
        seed=spec.seed if seed is None else seed,
        replication=replication,
        replacement=bool(spec.option(strategy, "replacement")),
        strategy=strategy,
    )


def run_one(model, s_init, strategy: str, config: RunConfig) -> RunTrace:
    """Run a strategy; divergence is recorded on the returned trace instead of raised."""
    try:
        return run_strategy(model, s_init, strategy, config)
    except DivergenceError as exc:
        trace = exc.trace or RunTrace(strategy=strategy, seed=config.seed, replication=config.replication)
        trace.diverged = True
        trace.message = str(exc)
        return trace


_WORKER_STATE: dict = {}


def _init_worker(model, s_init):
    _WORKER_STATE["model"] = model
    _WORKER_STATE["s_init"] = s_init


def _work(task):
    strategy, config = task
    trace = run_one(_WORKER_STATE["model"], _WORKER_STATE["s_init"], strategy, config)
    trace.final_theta = None  # keep the payload small across processes
    return trace


def run_grid(spec: ExperimentSpec, model=None, s_init=None, workers: int | None = None,
             order: list[tuple[str, int]] | None = None) -> dict[str, list[RunTrace]]:
    """All (strategy, replication) runs; results are keyed, so launch order does not matter."""
    model = build_model(spec) if model is None else model
    s_init = initial_statistic(model, spec) if s_init is None else s_init
    tasks = order or [(name, r) for name in spec.strategies for r in range(spec.replications)]
    jobs = [(name, run_config(spec, model.n, name, r)) for name, r in tasks]
    workers = spec.workers if workers is None else workers
    if workers <= 1:
        _init_worker(model, s_init)
        traces = [_work(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(model, s_init)) as pool:
            traces = list(pool.map(_work, jobs))
    out: dict[str, list[RunTrace]] = {name: [] for name in spec.strategies}
    for trace in traces:
        out[trace.strategy].append(trace)
    for runs in out.values():
        runs.sort(key=lambda tr: tr.replication)
    return out


def run_bench(spec: ExperimentSpec, out_dir=None, workers: int | None = None,
              save_traces: bool = True) -> tuple[BenchResult, dict[str, list[RunTrace]]]:
    out = Path(out_dir or spec.output_dir)
    t0 = time.time()
    traces = run_grid(spec, workers=workers)
    result = aggregate(traces, spec.k_out)
    export_bench(result, out)
    if save_traces:
        tdir = out / "traces"
        tdir.mkdir(parents=True, exist_ok=True)
        for name, runs in traces.items():
            for tr in runs:
                (tdir / f"{name}_r{tr.replication}.csv").write_text(tr.to_csv())
    log = {
        "started": t0,
        "elapsed": time.time() - t0,
        "runs": [tr.sidecar() for runs in traces.values() for tr in runs],
    }
    (out / "bench_log.json").write_text(json.dumps(log, indent=1))
    return result, traces

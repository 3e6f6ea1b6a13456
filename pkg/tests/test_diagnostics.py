import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spiderem.data import synth_gmm
from spiderem.diagnostics import (
    aggregate,
    bench_csv,
    export_bench,
    h_norm_sq,
    log_slope,
    quantile,
    read_bench_csv,
    value_at_budget,
)
from spiderem.gmm import GaussianMixture, init_params
from spiderem.samplers import Constant, split_rng
from spiderem.solvers import RunConfig, StepSchedule, batch_em_run, gspider_run

from test_model import enumerate_mean_field
from conftest import TOY


def test_quantile_small_cases():
    assert quantile([1, 2, 3], 0.5) == 2
    assert quantile([4, 1, 3, 2], 0.5) == 2.5
    assert quantile([5.0], 0.3) == 5.0


def _type7(values, p):
    x = sorted(values)
    h = (len(x) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


@pytest.mark.parametrize("p", [0.5, 0.1, 0.93])
def test_quantile_sort_oracle(p):
    v = split_rng(0, 0).standard_normal(1000)
    assert quantile(v, p) == pytest.approx(_type7(v.tolist(), p), abs=1e-14)


@given(st.lists(st.floats(-1e300, 1e300), min_size=1, max_size=50))
def test_quantile_extremes(values):
    assert quantile(values, 0) == min(values)
    assert quantile(values, 1) == max(values)


def test_quantile_preconditions():
    with pytest.raises(ValueError):
        quantile([], 0.5)
    with pytest.raises(ValueError):
        quantile([1.0], 1.5)
    with pytest.raises(ValueError):
        quantile([1.0, np.nan], 0.5)


def test_h_norm_at_fixed_point(toy, toy_state):
    _, theta = toy_state
    tr = batch_em_run(toy, theta, max_iter=5000, tol=1e-8)
    assert h_norm_sq(toy, tr.final_s) <= 1e-16


def test_h_norm_matches_enumeration(toy, toy_state):
    s, _ = toy_state
    s = s + np.array([0, 0, 0.1, -0.2, 0])
    expected = float(np.sum(enumerate_mean_field(s, toy.t_map(s), TOY[:, 0]) ** 2))
    assert h_norm_sq(toy, s) == pytest.approx(expected, rel=1e-12)
    assert h_norm_sq(toy, s) == h_norm_sq(toy, s.copy())


@pytest.fixture(scope="module")
def small_runs():
    ds, _ = synth_gmm(2, 2, 300, 4.0, 0)
    model = GaussianMixture(ds.values, 2)
    s0 = model.full_expectation(init_params(model.X, 2, split_rng(0, 0)))
    runs = {}
    for name, k in (("a", 2), ("b", 3)):
        runs[name] = [gspider_run(model, s0, RunConfig(b=6, k_out=4, schedule=Constant(k), seed=1, replication=r,
                                                       steps=StepSchedule(gamma=0.05), strategy=name))
                      for r in range(5)]
    return model, runs


def test_aggregate_shape_and_closed_form_ce(small_runs):
    model, runs = small_runs
    res = aggregate(runs, 4)
    rows = list(res.rows())
    assert len(rows) == 2 * 4
    t = np.arange(1, 5)
    assert np.array_equal(res.series["b"].cum_ce, model.n + model.n * t + 2 * 6 * 3 * t)
    h2 = np.array([tr.column("h2") for tr in runs["a"]])
    assert np.allclose(res.series["a"].q50_h2, np.median(h2, axis=0), rtol=0, atol=0)
    assert (res.series["a"].n_diverged == 0).all()


def test_aggregate_permutation_invariant(small_runs):
    _, runs = small_runs
    shuffled = {k: random.Random(3).sample(v, len(v)) for k, v in reversed(list(runs.items()))}
    assert bench_csv(aggregate(runs, 4)) == bench_csv(aggregate({k: shuffled[k] for k in runs}, 4))


def test_aggregate_counts_divergence(small_runs):
    _, runs = small_runs
    broken = [r for r in runs["a"]]
    bad = broken[0]
    clone = type(bad)(strategy="a", replication=0, records=list(bad.records[:2]), diverged=True)
    broken[0] = clone
    res = aggregate({"a": broken}, 4)
    assert list(res.series["a"].n_diverged) == [0, 0, 1, 1]
    assert np.isfinite(res.series["a"].q50_h2).all()


def test_minimal_export(tmp_path, small_runs):
    _, runs = small_runs
    res = aggregate({"a": runs["a"][:1]}, 1)
    export_bench(res, tmp_path, svg=False)
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == "strategy,epoch,cum_ce,q50_h2,mean_negF,n_diverged"
    assert len(lines) == 2
    assert (tmp_path / "fig2_h2_vs_ce.csv").read_text().splitlines()[0] == "strategy,cum_ce,q50_h2"


def test_export_is_byte_stable(tmp_path, small_runs):
    _, runs = small_runs
    res = aggregate(runs, 4)
    files = export_bench(res, tmp_path / "one")
    again = export_bench(aggregate(runs, 4), tmp_path / "two")
    for a, b in zip(files, again):
        assert a.read_bytes() == b.read_bytes(), a.name
    svg = (tmp_path / "one" / "fig1_h2_vs_epoch.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<script" not in svg


def test_bench_csv_round_trip(tmp_path, small_runs):
    _, runs = small_runs
    res = aggregate(runs, 4)
    export_bench(res, tmp_path, svg=False)
    back = read_bench_csv(tmp_path / "bench.csv")
    for name in res.series:
        np.testing.assert_array_equal(back.series[name].q50_h2, res.series[name].q50_h2)
        np.testing.assert_array_equal(back.series[name].cum_ce, res.series[name].cum_ce)


def test_budget_and_slope_helpers():
    ce = np.array([10, 20, 30, 40])
    v = np.array([1.0, 0.1, 0.01, 0.001])
    assert value_at_budget(ce, v, 30) == 0.01
    assert value_at_budget(ce, v, 35) == 0.01
    with pytest.raises(ValueError):
        value_at_budget(ce, v, 5)
    assert log_slope(v) == pytest.approx(-math.log(10))
    assert log_slope(np.array([5.0, 1.0, 1.0, 1.0]), last=3) == pytest.approx(0.0, abs=1e-12)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiderem.samplers import (
    BatchSpec,
    Constant,
    Geometric,
    GrowingGeometric,
    default_cap,
    draw_epoch_length,
    draw_epoch_lengths,
    draw_minibatch,
    split_rng,
)
from spiderem.verify import geometric_stopping_analytic


def test_full_draw_without_replacement_is_the_full_set():
    rng = split_rng(0, 0)
    state = rng.bit_generator.state
    assert np.array_equal(draw_minibatch(rng, 7, BatchSpec(7, replacement=False)), np.arange(7))
    assert rng.bit_generator.state == state


def test_without_replacement_is_distinct():
    rng = split_rng(0, 1)
    for _ in range(100):
        B = draw_minibatch(rng, 20, BatchSpec(8, replacement=False))
        assert len(set(B.tolist())) == 8 and B.min() >= 0 and B.max() < 20
    with pytest.raises(ValueError):
        draw_minibatch(rng, 3, BatchSpec(4, replacement=False))


def test_with_replacement_frequencies():
    rng = split_rng(1, 0)
    draws = 300_000
    idx = np.concatenate([draw_minibatch(rng, 3, BatchSpec(1)) for _ in range(draws)])
    counts = np.bincount(idx, minlength=3)
    sigma = math.sqrt(draws * (1 / 3) * (2 / 3))
    assert np.abs(counts - draws / 3).max() <= 4 * sigma


@pytest.mark.parametrize("size", [0, -1, 2.5])
def test_invalid_batch_size(size):
    with pytest.raises(ValueError):
        BatchSpec(size)


def test_geometric_tiny_rho_returns_one():
    rng = split_rng(2, 0)
    assert all(draw_epoch_length(rng, Geometric(1e-12)) == 1 for _ in range(1000))


@pytest.mark.parametrize("k_in", [2, 10, 123])
def test_geometric_mean(k_in):
    law = Geometric(1 - 1 / k_in, cap=10**9)
    xi = draw_epoch_lengths(split_rng(3, k_in), law, 1_000_000)
    sd = math.sqrt(law.rho) / (1 - law.rho)  # exact geometric standard deviation
    assert abs(xi.mean() - k_in) <= 4 * sd / 1000


def test_scalar_and_vector_draws_share_the_law():
    law = Geometric(0.8)
    a = np.array([draw_epoch_length(split_rng(4, 0), law) for _ in range(1)])
    b = draw_epoch_lengths(split_rng(4, 0), law, 1)
    assert np.array_equal(a, b)


def test_cap_clamps_and_reports():
    law = Geometric(0.9, cap=5)
    rng = split_rng(5, 0)
    out = [draw_epoch_length(rng, law, return_clamped=True) for _ in range(2000)]
    assert max(x for x, _ in out) <= 5
    assert any(c for _, c in out) and all(x == 5 for x, c in out if c)
    assert draw_epoch_lengths(rng, law, 10_000).max() <= 5


def test_truncated_moments():
    law = Geometric(0.7, cap=4)
    k = np.arange(1, 5)
    p = 0.3 * 0.7 ** (k - 1.0)
    p[-1] = 0.7**3
    assert law.mean() == pytest.approx(float(k @ p), rel=1e-14)
    assert law.variance() == pytest.approx(float(k**2 @ p) - float(k @ p) ** 2, rel=1e-12)


def test_schedule_validation():
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            Geometric(bad)
    with pytest.raises(ValueError):
        Geometric(0.5, cap=0)
    with pytest.raises(ValueError):
        Constant(0)
    assert default_cap(0.9) == 500
    assert Geometric.with_mean(0.5) == Constant(1)
    assert Geometric.with_mean(4.0).rho == pytest.approx(0.75)


def test_growing_geometric_mean():
    law = GrowingGeometric(60_000, 245).at(1)
    assert 1 / (1 - law.rho) == pytest.approx(1200 / 490, rel=1e-12)
    assert GrowingGeometric(60_000, 245).at(100).rho == pytest.approx(1 - 490 / 60_000)


def test_split_rng_determinism_and_separation():
    a = split_rng(11, 1).random(100)
    assert np.array_equal(a, split_rng(11, 1).random(100))
    assert not np.array_equal(a, split_rng(11, 2).random(100))
    seqs = [tuple(split_rng(11, (r, 0)).integers(0, 2**62, 8)) for r in range(30)]
    assert len(set(seqs)) == 30


def test_geometric_stopping_identity():
    rho, cap = 0.5, 200
    xi = draw_epoch_lengths(split_rng(6, 0), Geometric(rho, cap), 1_000_000).astype(float)
    y = (xi - 1) ** 2 - rho * xi**2  # D_0 = 0
    assert abs(y.mean()) <= 4 * y.std() / 1000
    lhs, rhs = geometric_stopping_analytic(lambda k: k.astype(float) ** 2, rho)
    assert abs(lhs - rhs) <= 1e-12 * max(1, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 4), b=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_batch_mean_enumeration(n, b, seed):
    x = np.random.default_rng(seed).standard_normal((n, 2))
    means = np.array([x[list(B)].mean(axis=0) for B in itertools.product(range(n), repeat=b)])
    xbar = x.mean(axis=0)
    assert np.abs(means.mean(axis=0) - xbar).max() <= 1e-12
    var = np.mean(np.sum((means - xbar) ** 2, axis=1))
    assert abs(var - np.mean(np.sum((x - xbar) ** 2, axis=1)) / b) <= 1e-12

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import brentq

from decbandit.klcore import ConfidenceParams, clamped_logs, kl_budget, kl_div, kl_ucb_solve, ucb1_bonus

unit = st.floats(0.0, 1.0, allow_nan=False)


def kl_reference(p, q):
    total = 0.0
    if p > 0:
        total += p * math.log(p / q)
    if p < 1:
        total += (1 - p) * math.log((1 - p) / (1 - q))
    return total


def test_kl_values():
    # 0.5 log(5/6) + 0.5 log(5/4)
    assert kl_div(0.5, 0.6) == pytest.approx(0.5 * math.log(5 / 6) + 0.5 * math.log(5 / 4), rel=1e-14)
    assert kl_div(0.5, 0.6) == pytest.approx(0.020411, abs=1e-6)
    assert kl_div(0.3, 0.3) == 0.0
    assert kl_div(0.0, 0.5) == pytest.approx(math.log(2))
    assert kl_div(0.5, 1.0) == math.inf
    with pytest.raises(ValueError):
        kl_div(1.2, 0.5)


@given(st.floats(0.0, 1.0), st.floats(1e-6, 1 - 1e-6))
def test_kl_matches_reference(p, q):
    assert kl_div(p, q) == pytest.approx(kl_reference(p, q), rel=1e-9, abs=1e-12)


@settings(max_examples=300)
@given(st.floats(0.0, 0.999), st.integers(1, 10_000), st.floats(1e-6, 20.0))
def test_solver_matches_brentq(z, n, budget):
    q = kl_ucb_solve(z, n, budget)
    target = budget / n
    if kl_reference(z, 1.0 - 1e-15) <= target:
        ref = 1.0
    else:
        ref = brentq(lambda x: kl_reference(z, x) - target, z, 1.0 - 1e-15, xtol=1e-13)
    assert abs(q - ref) <= 1e-9 + 1e-9
    assert q >= z


@given(unit, st.integers(1, 1000), st.floats(0.0, 10.0))
def test_solver_monotone_in_budget(z, n, budget):
    assert kl_ucb_solve(z, n, budget) <= kl_ucb_solve(z, n, budget + 0.5) + 1e-12


def test_solver_edges():
    assert kl_ucb_solve(1.0, 5, 3.0) == 1.0
    assert kl_ucb_solve(0.5, 10, 0.0) == 0.5
    with pytest.raises(ValueError):
        kl_ucb_solve(1.1, 1, 1.0)
    with pytest.raises(ValueError):
        kl_ucb_solve(0.5, 0, 1.0)


@settings(max_examples=50)
@given(st.lists(st.tuples(unit, st.integers(1, 500), st.floats(0.0, 10.0)), min_size=1, max_size=12))
def test_batch_equals_elementwise(items):
    z, n, b = (np.array(v) for v in zip(*items))
    batch = kl_ucb_solve(z, n, b)
    single = np.array([kl_ucb_solve(zi, ni, bi) for zi, ni, bi in items])
    assert np.array_equal(batch, single)


def test_budget_and_bonus():
    assert clamped_logs(1.0) == (0.0, 0.0)
    assert clamped_logs(2.0) == (math.log(2), 0.0)
    t = 1000.0
    base = math.log(t) + 3 * math.log(math.log(t))
    assert kl_budget(t, single_agent=True) == pytest.approx(base)
    p = ConfidenceParams(varsigma=0.01, neighborhood_size=20)
    assert kl_budget(t, p) == pytest.approx(3 * 1.01 * base / 40)
    q = ConfidenceParams(beta=0.01, neighborhood_size=20)
    assert ucb1_bonus(t, 5, q) == pytest.approx(1.01 * math.sqrt(3 * math.log(t) / 100))
    assert ucb1_bonus(t, 5, single_agent=True) == pytest.approx(math.sqrt(2 * math.log(t) / 5))


@given(st.integers(2, 50))
def test_more_neighbors_tighter(size):
    assume(size >= 2)
    t = 500.0
    assert kl_budget(t, ConfidenceParams(0.01, 0.01, size)) < kl_budget(t, ConfidenceParams(0.01, 0.01, size - 1))


def test_params_validation():
    with pytest.raises(ValueError):
        ConfidenceParams(varsigma=-1)
    with pytest.raises(ValueError):
        ConfidenceParams(neighborhood_size=0)

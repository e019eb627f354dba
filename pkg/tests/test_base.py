import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairbandit.base import (DivergenceUndefined, ExplicitHedge, FixedShare, HedgeConfig, OracleBudgetError,
                             TabularHedge, dumps_state, expert_gradient, expert_table, loads_state, phi_tabular,
                             product_prior, relative_entropy)
from fairbandit.core import make_rng


def test_fresh_query_uniform():
    np.testing.assert_allclose(TabularHedge(3, 4, 0.1).query(2), 0.25)


def test_update_ln2():
    h = TabularHedge(2, 2, math.log(2))
    h.update(0, [1.0, 0.0])
    np.testing.assert_allclose(h.query(0), [1 / 3, 2 / 3], atol=1e-15)
    np.testing.assert_allclose(h.query(1), [0.5, 0.5])


def test_zero_gradient_no_change():
    h = TabularHedge(2, 3, 0.7)
    h.update(1, [0.3, 0.1, 0.9])
    before = h.log_weights.copy()
    h.update(1, np.zeros(3))
    np.testing.assert_allclose(h.log_weights, before, atol=1e-15)


def test_negative_gradient_entries():
    h = TabularHedge(1, 2, 1.0)
    h.update(0, [-0.5, 0.5])
    np.testing.assert_allclose(h.query(0), [0.7310585786, 0.2689414214], atol=1e-9)


def test_non_finite_gradient_rejected():
    with pytest.raises(ValueError):
        TabularHedge(1, 2, 1.0).update(0, [np.nan, 0.0])


def test_hedge_config_from_tuning():
    assert HedgeConfig.from_tuning(2.0, 4, 100).learning_rate == pytest.approx(0.1)
    with pytest.raises(ValueError):
        HedgeConfig(0.0)


def test_fixed_share_examples():
    plain = TabularHedge(1, 2, math.log(2))
    no_share = FixedShare(1, 2, math.log(2), 0.0)
    for h in (plain, no_share):
        h.update(0, [1.0, 0.0])
    np.testing.assert_array_equal(plain.query(0), no_share.query(0))

    full = FixedShare(1, 2, math.log(2), 1.0)
    full.update(0, [5.0, 0.0])
    np.testing.assert_allclose(full.query(0), [0.5, 0.5])

    tenth = FixedShare(1, 2, math.log(2), 0.1)
    tenth.update(0, [1.0, 0.0])
    np.testing.assert_allclose(tenth.query(0), [0.35, 0.65], atol=1e-15)


def test_fixed_share_only_mixes_updated_row():
    h = FixedShare(2, 2, 1.0, 0.5)
    h.update(0, [3.0, 0.0])
    np.testing.assert_allclose(h.query(1), [0.5, 0.5])


def test_explicit_single_context_is_tabular():
    e, t = ExplicitHedge(1, 3, 0.4), TabularHedge(1, 3, 0.4)
    for g in make_rng(1).normal(size=(20, 3)):
        e.update(0, g)
        t.update(0, g)
    np.testing.assert_allclose(e.query(0), t.query(0), atol=1e-12)


def test_explicit_two_by_two_one_update():
    e, t = ExplicitHedge(2, 2, 0.9), TabularHedge(2, 2, 0.9)
    e.update(1, [0.2, -0.7])
    t.update(1, [0.2, -0.7])
    for x in range(2):
        np.testing.assert_allclose(e.query(x), t.query(x), atol=1e-12)


def test_explicit_budget():
    with pytest.raises(OracleBudgetError):
        ExplicitHedge(17, 2, 0.1)


def test_expert_table_encoding():
    table = expert_table(2, 3)
    assert table.shape == (9, 2)
    assert table[5].tolist() == [2, 1]  # 5 = 2 + 1 * 3


def test_expert_gradient_examples():
    experts = expert_table(2, 2)
    assert np.all(expert_gradient(np.zeros((2, 2)), experts) == 0)
    lam = np.array([[0.5, -0.5], [0.5, -0.5]])
    nu = expert_gradient(lam, experts)
    assert nu[0] == 1.0  # the expert playing action 0 everywhere
    assert nu.min() >= -2


def test_update_recursion_closed_form():
    rng = make_rng(4)
    e = ExplicitHedge(2, 3, 0.6)
    theta = e.theta.copy()
    for _ in range(10):
        x, g = int(rng.integers(2)), rng.normal(size=3)
        lam = np.zeros((2, 3))
        lam[x] = g
        nu = expert_gradient(lam, e.experts)
        theta = theta * np.exp(-0.6 * nu)
        theta /= theta.sum()
        e.update(x, g)
    np.testing.assert_allclose(e.theta, theta, atol=1e-12)


def test_update_experts_matches_per_context_updates():
    rng = make_rng(8)
    lam = rng.normal(size=(3, 2))
    a, b = ExplicitHedge(3, 2, 0.3), ExplicitHedge(3, 2, 0.3)
    for x in range(3):
        a.update(x, lam[x])
    b.update_experts(expert_gradient(lam, b.experts))
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)


def test_relative_entropy_examples():
    assert relative_entropy([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert relative_entropy([1, 0, 0, 0], [0.25] * 4) == pytest.approx(math.log(4))
    assert relative_entropy([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.13081, abs=1e-5)
    with pytest.raises(DivergenceUndefined):
        relative_entropy([0.5, 0.5], [1.0, 0.0])


def test_phi_examples():
    uniform = np.full((2, 2, 2), 0.5)
    assert phi_tabular(uniform) == 0.0
    det = np.zeros((2, 2, 2))
    det[..., 0] = 1.0
    assert phi_tabular(det) == pytest.approx(4 * math.log(2))
    assert phi_tabular(np.array([[[0.75, 0.25]]])) == pytest.approx(0.13081, abs=1e-5)


def test_phi_factorises_over_contexts():
    # product-form comparator divergence equals the expert-level divergence
    rng = make_rng(2)
    rows = rng.dirichlet(np.ones(3), size=2)
    experts = expert_table(2, 3)
    full = relative_entropy(product_prior(rows, experts), np.full(9, 1 / 9))
    assert phi_tabular(rows[None]) == pytest.approx(full, abs=1e-12)


@pytest.mark.parametrize("make", [
    lambda: TabularHedge(3, 2, 0.5),
    lambda: FixedShare(3, 2, 0.5, 0.05),
    lambda: ExplicitHedge(3, 2, 0.5),
])
def test_snapshot_round_trip(make):
    h = make()
    rng = make_rng(11)
    for _ in range(5):
        h.update(int(rng.integers(3)), rng.normal(size=2))
    clone = loads_state(dumps_state(h))
    for x in range(3):
        np.testing.assert_array_equal(clone.query(x), h.query(x))


@given(st.integers(1, 3), st.integers(2, 3), st.integers(0, 2**31 - 1), st.integers(1, 100))
def test_tabular_matches_explicit_oracle(n, k, seed, steps):
    rng = make_rng(seed)
    prior = rng.dirichlet(np.ones(k), size=n)
    lr = float(rng.uniform(0.01, 2.0))
    tab, exp = TabularHedge(n, k, lr, prior), ExplicitHedge(n, k, lr, prior)
    for _ in range(steps):
        x, g = int(rng.integers(n)), rng.normal(scale=3.0, size=k)
        tab.update(x, g)
        exp.update(x, g)
    for x in range(n):
        np.testing.assert_allclose(tab.query(x), exp.query(x), atol=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_support_only_updates_equal_full_updates(seed):
    rng = make_rng(seed)
    n, k = 4, 3
    a, b = TabularHedge(n, k, 0.8), TabularHedge(n, k, 0.8)
    for _ in range(10):
        xs = np.flatnonzero(rng.random(n) < 0.5)
        grads = np.zeros((n, k))
        grads[xs] = rng.normal(size=(len(xs), k))
        if len(xs):
            a.update_many(xs, grads[xs])
        b.update_many(np.arange(n), grads)
    np.testing.assert_allclose(a.log_weights, b.log_weights, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_queries_stay_valid_under_extreme_gradients(seed, scale):
    rng = make_rng(seed)
    h = FixedShare(2, 3, 5.0, 1e-6)
    for _ in range(30):
        h.update(int(rng.integers(2)), rng.normal(scale=scale, size=3))
    for x in range(2):
        q = h.query(x)
        assert np.all(q > 0) and abs(q.sum() - 1) <= 1e-12

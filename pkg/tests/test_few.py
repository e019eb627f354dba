import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairbandit.base import BaseLearner
from fairbandit.core import Dims, make_rng, parity_violation, random_target
from fairbandit.few import Few, FewConfig, ProtocolError, as_sparse_target, make_few, make_learners
from fairbandit.harness import (expected_pseudo_gradient, expert_gradient_moments, lemma_slack,
                                true_subgradient)


class FixedRows(BaseLearner):
    """Returns preset rows and records updates."""

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)
        self.num_actions = self.rows.shape[1]
        self.updates = []

    def query(self, x):
        return self.rows[x]

    def update(self, x, g):
        self.updates.append((int(x), np.asarray(g, dtype=float)))


def engine(raw):
    return Few([FixedRows(r) for r in raw])


UNIFORM = np.full((2, 2), 0.5)
WE1 = [[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]
WE3 = [[[0.6, 0.4], [0.6, 0.4]], [[0.4, 0.6], [0.4, 0.6]]]


def test_we1_trial_quantities():
    few = engine(WE1)
    ts = few.begin_trial(UNIFORM)
    np.testing.assert_allclose(ts.omega, [[1, 0], [0, 1]])
    assert ts.beta == 2.0
    np.testing.assert_allclose(ts.psi(0), np.full((2, 2), 1 / 3))
    for i in range(2):
        for x in range(2):
            np.testing.assert_allclose(few.policy_row(ts, i, x), [0.5, 0.5], atol=1e-15)
    assert ts.parity() == 0.0


def test_we1_pseudo_gradient_has_no_loss_term():
    few = engine(WE1)
    ts = few.begin_trial(UNIFORM)
    few.act(ts, 0, 0, make_rng(0))
    grad = few.feedback_bandit(ts, 1.0).dense(2)
    expected = np.array([[[0.5, -0.5]] * 2, [[-0.5, 0.5]] * 2])
    np.testing.assert_allclose(grad, expected)
    # every support context of every group was dispatched once
    assert [len(l.updates) for l in few.learners] == [2, 2]


def test_we3_trial_quantities_and_gradient():
    few = engine(WE3)
    ts = few.begin_trial(UNIFORM)
    assert ts.delta[1, 0] == pytest.approx(0.2) and ts.delta[0, 1] == pytest.approx(0.2)
    assert ts.beta == pytest.approx(0.4)
    np.testing.assert_allclose(ts.psi(0)[0], [3 / 7, 3 / 7])
    np.testing.assert_allclose(few.policy_row(ts, 0, 0), [0.5, 0.5])
    ts.group, ts.context, ts.row, ts.action = 0, 0, few.policy_row(ts, 0, 0), 0
    grad = few.pseudo_gradient(ts, 0, 1.0).dense(2)
    assert grad[0, 0, 0] == pytest.approx(2.5)


def test_zero_budget_is_identity():
    rows = [[[0.2, 0.8], [0.7, 0.3]]] * 2
    few = engine(rows)
    ts = few.begin_trial(UNIFORM)
    assert ts.beta == 0.0
    np.testing.assert_array_equal(few.policy_row(ts, 1, 1), rows[1][1])


def test_degenerate_zero_gradient():
    few = engine([[[0.5, 0.5]]] * 2)
    ts = few.begin_trial(np.ones((2, 1)))
    few.act(ts, 0, 0, make_rng(1))
    grad = few.feedback_bandit(ts, 0.0)
    assert all(np.all(v == 0) for v in grad.values)


def test_full_gradient_examples():
    few = engine(WE1)
    ts = few.begin_trial(UNIFORM)
    few.observe_instance(ts, 0, 1)
    grad = few.full_gradient(ts, [0.3, 0.9]).dense(2)
    np.testing.assert_allclose(grad, few.pseudo_gradient(ts, 0, 0.0).dense(2))  # budget 2 suppresses losses
    few = engine([[[0.5, 0.5]]] * 2)
    ts = few.begin_trial(np.ones((2, 1)))
    few.observe_instance(ts, 1, 0)
    grad = few.full_gradient(ts, [0.4, 0.4]).dense(1)
    np.testing.assert_allclose(grad[1, 0], [0.4, 0.4])
    np.testing.assert_allclose(grad[0, 0], [0.0, 0.0])


def test_empirical_frequency():
    few = engine(WE1)
    ts = few.begin_trial(UNIFORM)
    rng = make_rng(42)
    draws = [few.act(ts, 0, 0, rng) for _ in range(100_000)]
    assert abs(np.mean(np.array(draws) == 0) - 0.5) <= 0.01


def test_deterministic_row_and_seed():
    few = engine([[[1.0, 0.0]]] * 2)
    ts = few.begin_trial(np.ones((2, 1)))
    assert few.act(ts, 0, 0, make_rng(3)) == 0
    few = make_few(FewConfig(Dims(2, 3, 3, 50)))
    ts = few.begin_trial(np.full((2, 3), 1 / 3))
    assert few.act(ts, 1, 2, make_rng(9)) == few.act(ts, 1, 2, make_rng(9))


def test_strict_mode_rejects_off_support():
    few = make_few(FewConfig(Dims(2, 2, 2, 10)))
    ts = few.begin_trial([[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises(ProtocolError):
        few.act(ts, 0, 1, make_rng(0))


def test_lenient_mode_updates_off_support_instance():
    few = make_few(FewConfig(Dims(2, 2, 2, 10), strict=False))
    ts = few.begin_trial([[1.0, 0.0], [0.5, 0.5]])
    few.act(ts, 0, 1, make_rng(0))
    assert ts.off_support
    before = few.learners[0].query(1).copy()
    grad = few.feedback_bandit(ts, 1.0)
    assert 1 in grad.contexts[0].tolist()
    if ts.beta <= 1:
        assert not np.allclose(before, few.learners[0].query(1))


def test_protocol_order_and_loss_range():
    few = make_few(FewConfig(Dims(1, 1, 2, 10)))
    ts = few.begin_trial(np.ones((1, 1)))
    with pytest.raises(ProtocolError):
        few.feedback_bandit(ts, 0.5)
    few.act(ts, 0, 0, make_rng(0))
    with pytest.raises(ValueError):
        few.feedback_bandit(ts, 1.5)


def test_eta_clamped_with_warning():
    with pytest.warns(UserWarning):
        cfg = FewConfig(Dims(1, 1, 4, 16), eta=10.0)
    assert cfg.eta == 2.0
    assert cfg.learning_rate == pytest.approx(2.0 / 8.0)


def test_empty_group_carries_no_constraint():
    few = make_few(FewConfig(Dims(3, 2, 2, 10)))
    target = [(np.array([0]), np.array([1.0])), (np.array([], dtype=int), np.array([])),
              (np.array([0, 1]), np.array([0.5, 0.5]))]
    ts = few.begin_trial(target)
    assert ts.kappa_up.tolist() != [1, 1] and 1 not in ts.kappa_down.tolist()
    assert ts.parity() <= 1e-12


def test_sparse_target_conversion_sorts_and_drops_zeros():
    sparse = as_sparse_target([(np.array([2, 0, 1]), np.array([0.5, 0.5, 0.0]))])
    assert sparse[0][0].tolist() == [0, 2]


@st.composite
def instance(draw, base=("tabular", "fixedshare")):
    m = draw(st.integers(1, 4))
    n = draw(st.integers(1, 6))
    k = draw(st.integers(2, 4))
    seed = draw(st.integers(0, 2**31 - 1))
    kind = draw(st.sampled_from(base))
    eta = draw(st.floats(0.1, 4.0))
    return m, n, k, seed, kind, eta


def drive(m, n, k, seed, kind, eta, horizon, check):
    """Run ``horizon`` adversarial bandit trials, calling ``check(few, ts, target, losses)``
    after the action is drawn."""
    dims = Dims(m, n, k, horizon)
    rng = make_rng(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lr = FewConfig(dims, eta).learning_rate
    few = Few(make_learners(kind, dims, lr))
    for _ in range(horizon):
        target = random_target(rng, m, n, 0.3)
        i = int(rng.integers(m))
        x = int(rng.choice(np.flatnonzero(target[i])))
        losses = rng.random(k)
        ts = few.begin_trial(target)
        few.act(ts, i, x, rng)
        check(few, ts, target, losses)
        few.feedback_bandit(ts, float(losses[ts.action]))


@given(instance())
def test_exact_fairness_and_lemmas(params):
    def check(few, ts, target, losses):
        assert parity_violation(few.dense_policy(ts, params[1]), target) <= 1e-9
        assert lemma_slack(ts).ok(1e-9)
        assert np.all(ts.delta >= 0) and ts.beta >= 0

    drive(*params, horizon=60, check=check)


@given(instance())
def test_pseudo_gradient_entries_bounded_below(params):
    def check(few, ts, target, losses):
        lam = few.pseudo_gradient(ts, ts.action, float(losses[ts.action])).dense(params[1])
        assert np.all(lam >= -target[:, :, None] - 1e-15)

    drive(*params, horizon=40, check=check)


@given(instance(base=("explicit",)).filter(lambda p: p[2] ** p[1] <= 27))
def test_unbiased_second_moment_and_floor(params):
    m, n, k = params[:3]

    def check(few, ts, target, losses):
        mean = expected_pseudo_gradient(few, ts, losses, n)
        np.testing.assert_allclose(mean, true_subgradient(ts, losses, n), atol=1e-9)
        second, lowest = expert_gradient_moments(few, ts, losses, n)
        assert second <= 8 * k and lowest >= -k

    drive(*params, horizon=25, check=check)


@given(st.integers(1, 3), st.integers(2, 3), st.integers(0, 2**31 - 1), st.floats(0.25, 3.0))
def test_incremental_equals_explicit(n, k, seed, eta):
    dims = Dims(2, n, k, 100)
    lr = FewConfig(dims, eta).learning_rate
    engines = [Few(make_learners("tabular", dims, lr)), Few(make_learners("explicit", dims, lr))]
    rngs = [make_rng(seed, 1), make_rng(seed, 1)]
    env = make_rng(seed, 2)
    for _ in range(100):
        target = random_target(env, 2, n, 0.3)
        i = int(env.integers(2))
        x = int(env.choice(np.flatnonzero(target[i])))
        loss = env.random(k)
        states = [e.begin_trial(target) for e in engines]
        acts = [e.act(ts, i, x, r) for e, ts, r in zip(engines, states, rngs)]
        assert acts[0] == acts[1]
        np.testing.assert_allclose(engines[0].dense_policy(states[0], n), engines[1].dense_policy(states[1], n),
                                   atol=1e-9)
        for e, ts in zip(engines, states):
            e.feedback_bandit(ts, float(loss[ts.action]))


def test_guard_never_hit_with_positive_weights():
    hits = []

    def check(few, ts, target, losses):
        few.pseudo_gradient(ts, ts.action, 1.0)
        hits.append(ts.guard_hit)

    drive(3, 4, 3, 0, "tabular", 4.0, 200, check)
    assert not any(hits)

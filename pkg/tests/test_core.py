import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairbandit.core import (DimensionError, Dims, check_target, group_action_marginal, make_rng,
                             parity_violation, sample_action, support, uniform_policy, uniform_target,
                             validate_policy, validate_target)

from strategies import target_and_policy

# two groups, two contexts, two actions; group 0 always plays action 0 and group 1 action 1
WE1_TARGET = np.full((2, 2), 0.5)
WE1_RAW = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])


def brute_marginal(policy, target):
    m, n, k = policy.shape
    out = np.zeros((m, k))
    for i in range(m):
        for x in range(n):
            for a in range(k):
                out[i, a] += target[i, x] * policy[i, x, a]
    return out


def test_dims_reject_nonpositive():
    with pytest.raises(DimensionError):
        Dims(0, 1, 2)
    assert Dims(2, 3, 4, 5).policy_shape == (2, 3, 4)


def test_uniform_target_is_valid():
    assert validate_target(uniform_target(3, 4)) == []


def test_row_sum_violation_reports_deviation():
    report = validate_target([[0.6, 0.5], [0.5, 0.5]])
    assert len(report) == 1
    assert report[0].row == 0 and report[0].kind == "sum"
    assert report[0].deviation == pytest.approx(0.1)


def test_negative_entry_reported():
    report = validate_target([[0.7, -0.1, 0.4]])
    assert [v.kind for v in report] == ["negative"]


def test_target_shape_mismatch():
    with pytest.raises(DimensionError):
        validate_target(uniform_target(2, 2), Dims(2, 3, 2))
    with pytest.raises(ValueError):
        check_target([[0.6, 0.5]])


def test_worked_example_marginals():
    omega = group_action_marginal(WE1_RAW, WE1_TARGET)
    assert omega[0, 0] == 1.0 and omega[1, 0] == 0.0
    assert parity_violation(WE1_RAW, WE1_TARGET) == 1.0
    assert parity_violation(np.full((2, 2, 2), 0.5), WE1_TARGET) == 0.0


def test_uniform_policy_marginal():
    omega = group_action_marginal(uniform_policy(3, 4, 5), uniform_target(3, 4))
    np.testing.assert_allclose(omega, 0.2)


def test_single_context_support_marginal():
    policy = make_rng(0).dirichlet(np.ones(3), size=(2, 2))
    target = np.array([[1.0, 0.0], [0.0, 1.0]])
    omega = group_action_marginal(policy, target)
    np.testing.assert_array_equal(omega[0], policy[0, 0])
    np.testing.assert_array_equal(omega[1], policy[1, 1])


def test_callable_provider_only_sees_support():
    target = np.array([[1.0, 0.0], [0.5, 0.5]])
    seen = []

    def provider(i, x):
        seen.append((i, x))
        return np.array([0.5, 0.5])

    group_action_marginal(provider, target)
    assert (0, 1) not in seen


def test_support_exact_zero():
    assert support(uniform_target(2, 3), 1).tolist() == [0, 1, 2]
    assert support(np.array([[1.0, 0.0]]), 0).tolist() == [0]


def test_validate_policy():
    assert validate_policy(uniform_policy(2, 2, 3))
    assert not validate_policy(np.full((1, 1, 2), 0.6))


def test_sample_action_deterministic_row_and_seed():
    assert sample_action(np.array([1.0, 0.0, 0.0]), make_rng(3)) == 0
    a = [sample_action(np.array([0.2, 0.3, 0.5]), make_rng(7, 1)) for _ in range(2)]
    assert a[0] == a[1]


def test_streams_independent_of_order():
    a = make_rng(5, 1).random(3)
    make_rng(5, 2).random(10)
    np.testing.assert_array_equal(a, make_rng(5, 1).random(3))
    assert not np.array_equal(a, make_rng(5, 2).random(3))


@given(target_and_policy())
def test_marginal_rows_sum_to_one(data):
    target, policy, _ = data
    omega = group_action_marginal(policy, target)
    np.testing.assert_allclose(omega.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(omega, brute_marginal(policy, target), atol=1e-12)


@given(target_and_policy())
def test_parity_matches_pairwise_definition(data):
    target, policy, _ = data
    omega = brute_marginal(policy, target)
    m = omega.shape[0]
    pairwise = max(abs(omega[i, a] - omega[j, a]) for i in range(m) for j in range(m) for a in range(omega.shape[1]))
    assert parity_violation(policy, target) == pytest.approx(pairwise, abs=1e-12)


@given(target_and_policy(), st.randoms())
def test_parity_invariant_under_group_permutation(data, rnd):
    target, policy, _ = data
    perm = list(range(target.shape[0]))
    rnd.shuffle(perm)
    assert parity_violation(policy[perm], target[perm]) == pytest.approx(parity_violation(policy, target), abs=1e-15)

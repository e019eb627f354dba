"""Acceptance criteria A1-A9 at their stated scales and tolerances.

Each test prints one ``PASS``/``FAIL`` line and asserts both the
criterion and its runtime budget.  Deselect with ``-m "not slow"``.
"""
import pytest

from fairbandit import verify

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def parity_runs():
    return verify.check_parity_and_lemmas(runs=50, horizon=500)


def report(capsys, result, budget):
    with capsys.disabled():
        print(f"\n{result.line()} ({result.seconds:.1f}s, budget {budget}s)")
    assert result.seconds < budget, f"{result.name} exceeded its {budget}s budget"
    assert result.passed, result.line()


def test_a1_exact_parity(parity_runs, capsys):
    report(capsys, parity_runs[0], 60)


def test_a2_lemma_suite(parity_runs, capsys):
    report(capsys, parity_runs[1], 60)


def test_a3_regret_bound(capsys):
    report(capsys, verify.check_regret_bound(horizon=4096, etas=(0.25, 1.0, 4.0), seeds=20,
                                             slope_horizons=(256, 1024, 4096, 16384)), 300)


def test_a4_unbiasedness_second_moment(capsys):
    report(capsys, verify.check_unbiasedness(runs=10, horizon=100), 60)


def test_a5_hedge_recursion_equivalence(capsys):
    report(capsys, verify.check_hedge_equivalence(seeds=10, horizon=100), 60)


def test_a6_fixed_share_tracking(capsys):
    report(capsys, verify.check_fixed_share(horizon=8192, seeds=20), 180)


def test_a7_iid_approximate_parity(capsys):
    report(capsys, verify.check_iid_tree(seeds=200, horizon=1000, height=5, epsilon=0.25), 600)


def test_a7_companion_realised_split_error(capsys):
    report(capsys, verify.check_iid_tree_realised(), 120)


def test_a8_fair_classification(capsys):
    report(capsys, verify.check_classification(horizons=(500, 2000, 8000), seeds=20), 300)


def test_a9_baseline_contrast(capsys):
    report(capsys, verify.check_baseline_contrast(), 60)


def test_mutation_is_caught(capsys):
    report(capsys, verify.check_mutation(), 60)

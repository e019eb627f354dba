"""Named verification checks: the acceptance experiments and a quick
invariant suite.

Every check returns a :class:`CheckResult`; the command line and the test
suite both consume these, so budgets and tolerances live in one place.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List

import numpy as np

from .core import Dims, make_rng, parity_violation, random_target, uniform_target
from .few import Few, FewConfig, make_few, make_learners
from .harness import (TREE_CDFS, Comparator, FewAgent, adversarial_random_script, best_fair_comparator,
                      exp4_per_group, expected_pseudo_gradient, expert_gradient_moments, lemma_slack,
                      random_fair_policies, regret, run, run_tree, solve_fair_lp, stochastic_script,
                      tree_instance, tree_marginal_by_enumeration, true_subgradient)
from .meta import FiniteDistribution, generalisation_regret, train_fair_classifier
from .tree import HierarchicalLearner, TreeHedge, node_interval, required_sample_size

TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} value={self.value:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()

    def as_dict(self) -> dict:
        return asdict(self)


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        elapsed = time.perf_counter() - start
        for res in out if isinstance(out, tuple) else (out,):
            res.seconds = elapsed
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# instances shared by several checks

TWO_BY_TWO = uniform_target(2, 2)
# each context favours a different action, identically across groups
MIXED_MEANS = np.array([[[0.1, 0.9], [0.9, 0.1]], [[0.1, 0.9], [0.9, 0.1]]])
# group 0 favours action 0 and group 1 action 1 everywhere
OPPOSED_MEANS = np.array([[[0.1, 0.9], [0.1, 0.9]], [[0.9, 0.1], [0.9, 0.1]]])


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# A1 and A2


@_timed
def check_parity_and_lemmas(runs: int = 50, horizon: int = 500, seed: int = 0):
    """Randomised adversarial bandit runs over per-context Hedge and
    FixedShare; returns (parity result, lemma result)."""
    worst_parity = 0.0
    worst_slack = math.inf
    for r in range(runs):
        rng = make_rng(seed, 100, r)
        m, n, k = int(rng.integers(2, 5)), int(rng.integers(1, 9)), int(rng.integers(2, 6))
        dims = Dims(m, n, k, horizon)
        script = adversarial_random_script(seed * 1000 + r, dims)
        base = "tabular" if r % 2 == 0 else "fixedshare"
        few = make_few(FewConfig(dims, eta=float(rng.uniform(0.25, 4.0))), base)
        act_rng = make_rng(seed, 101, r)
        for t in range(horizon):
            ts = few.begin_trial(script.targets[t])
            few.act(ts, int(script.groups[t]), int(script.contexts[t]), act_rng)
            worst_parity = max(worst_parity, parity_violation(few.dense_policy(ts, n), script.targets[t]))
            slack = lemma_slack(ts)
            worst_slack = min(worst_slack, slack.lower_bound, slack.mass_shift, slack.psi_total, slack.psi_min)
            few.feedback_bandit(ts, float(script.losses[t, ts.action]))
    a1 = CheckResult("A1 exact parity", worst_parity <= TOL, worst_parity, TOL, f"runs={runs} T={horizon}")
    a2 = CheckResult("A2 lemma suite", worst_slack >= -TOL, -worst_slack, TOL,
                     "worst violation of lower bound, mass shift and psi sub-stochasticity")
    return a1, a2


# A3


@_timed
def check_regret_bound(horizon: int = 4096, etas=(0.25, 1.0, 4.0), seeds: int = 20,
                       slope_horizons=(256, 1024, 4096, 16384), slope_eta: float = 1.0,
                       max_slope: float = 0.62) -> CheckResult:
    """Mean expected regret against the best fixed fair policy stays under
    ``(8 eta + Phi / eta) sqrt(K T)`` with ``Phi = M N ln K``, and grows
    with slope at most ``max_slope`` in log-log scale."""
    m, n, k = 2, 2, 2
    phi = m * n * math.log(k)

    def mean_regret(eta, t_len):
        vals = []
        for s in range(seeds):
            script = stochastic_script(s, TWO_BY_TWO, MIXED_MEANS, t_len)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                few = make_few(FewConfig(Dims(m, n, k, t_len), eta))
            trace = run(FewAgent(few), script, s)
            vals.append(regret(trace, best_fair_comparator(script), script))
        return float(np.mean(vals))

    cache = {}
    ratios = []
    for eta in etas:
        cache[(eta, horizon)] = mean_regret(eta, horizon)
        bound = (8 * eta + phi / eta) * math.sqrt(k * horizon)
        ratios.append(cache[(eta, horizon)] / bound)
    curve = [cache.get((slope_eta, t)) or mean_regret(slope_eta, t) for t in slope_horizons]
    slope = loglog_slope(slope_horizons, curve)
    worst = max(ratios)
    passed = worst <= 1.0 and slope <= max_slope
    detail = f"regret/bound per eta={np.round(ratios, 3).tolist()} slope={slope:.3f} (max {max_slope})"
    return CheckResult("A3 regret bound", passed, worst, 1.0, detail)


# A4


class FlippedKappaFew(Few):
    """Deliberately wrong: the arg-min parity term is added instead of subtracted."""

    def _parity_terms(self, ts):
        arange = np.arange(self.num_groups)[:, None]
        sign = (ts.kappa_up[None, :] == arange).astype(float) + (ts.kappa_down[None, :] == arange)
        return [np.outer(ms, sign[i]) for i, ms in enumerate(ts.masses)]


@_timed
def check_unbiasedness(runs: int = 10, horizon: int = 100, seed: int = 0,
                       engine: Callable = Few, name: str = "A4 unbiasedness and second moment") -> CheckResult:
    """Enumerated mean pseudo-gradient equals the true sub-gradient; the
    enumerated second moment under the expert weights is at most ``8K`` and
    the expert gradient is at least ``-K``."""
    worst_bias = 0.0
    worst_moment = -math.inf
    worst_floor = -math.inf
    for r in range(runs):
        rng = make_rng(seed, 200, r)
        n, k = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        dims = Dims(2, n, k, horizon)
        script = adversarial_random_script(seed * 1000 + 500 + r, dims)
        eta = float(rng.uniform(0.5, min(4.0, math.sqrt(horizon / k))))
        lr = FewConfig(dims, eta).learning_rate
        few = engine(make_learners("explicit", dims, lr))
        act_rng = make_rng(seed, 201, r)
        for t in range(horizon):
            ts = few.begin_trial(script.targets[t])
            few.act(ts, int(script.groups[t]), int(script.contexts[t]), act_rng)
            losses = script.losses[t]
            mean = expected_pseudo_gradient(few, ts, losses, n)
            worst_bias = max(worst_bias, float(np.abs(mean - true_subgradient(ts, losses, n)).max()))
            second, lowest = expert_gradient_moments(few, ts, losses, n)
            worst_moment = max(worst_moment, second / (8 * k))
            worst_floor = max(worst_floor, -lowest / k)
            few.feedback_bandit(ts, float(losses[ts.action]))
    passed = worst_bias <= TOL and worst_moment <= 1.0 and worst_floor <= 1.0
    detail = f"second moment/8K={worst_moment:.3f} -min(nu)/K={worst_floor:.3f}"
    return CheckResult(name, passed, worst_bias, TOL, detail)


@_timed
def check_mutation(seed: int = 0) -> CheckResult:
    """The unbiasedness check must reject an engine with a flipped parity sign."""
    mutated = check_unbiasedness(runs=2, horizon=20, seed=seed, engine=FlippedKappaFew, name="mutant")
    return CheckResult("mutation: flipped kappa sign is caught", not mutated.passed, mutated.value, TOL,
                       "value is the mutant's bias; must exceed the threshold")


# A5


@_timed
def check_hedge_equivalence(seeds: int = 10, horizon: int = 100) -> CheckResult:
    """Per-context Hedge and explicit-expert Hedge drive identical fair policies."""
    worst = 0.0
    for s in range(seeds):
        rng = make_rng(s, 300)
        n, k = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        dims = Dims(2, n, k, horizon)
        script = adversarial_random_script(10_000 + s, dims)
        lr = FewConfig(dims, 2.0).learning_rate
        engines = [make_few(FewConfig(dims, 2.0), "tabular"), Few(make_learners("explicit", dims, lr))]
        rngs = [make_rng(s, 301), make_rng(s, 301)]
        for t in range(horizon):
            states = [e.begin_trial(script.targets[t]) for e in engines]
            actions = [e.act(ts, int(script.groups[t]), int(script.contexts[t]), g)
                       for e, ts, g in zip(engines, states, rngs)]
            if actions[0] != actions[1]:
                return CheckResult("A5 hedge recursion equivalence", False, math.inf, TOL, f"actions split at t={t}")
            pols = [e.dense_policy(ts, n) for e, ts in zip(engines, states)]
            worst = max(worst, float(np.abs(pols[0] - pols[1]).max()))
            for e, ts in zip(engines, states):
                e.feedback_bandit(ts, float(script.losses[t, ts.action]))
    return CheckResult("A5 hedge recursion equivalence", worst <= TOL, worst, TOL, f"seeds={seeds} T={horizon}")


# A6


def switching_script(seed: int, horizon: int):
    means = np.array([MIXED_MEANS, MIXED_MEANS[..., ::-1]])
    return stochastic_script(seed, TWO_BY_TWO, means, horizon)


def piecewise_comparator(script, switch: int) -> Comparator:
    first = best_fair_comparator(script, 0, switch)
    second = best_fair_comparator(script, switch)
    return Comparator([first.policies[0], second.policies[0]], script, starts=[0, switch])


@_timed
def check_fixed_share(horizon: int = 8192, seeds: int = 20, eta: float = 4.0,
                      max_ratio: float = 0.6) -> CheckResult:
    """FixedShare tracks a comparator that switches once at ``T / 2``."""
    dims = Dims(2, 2, 2, horizon)
    totals = {"tabular": 0.0, "fixedshare": 0.0}
    for s in range(seeds):
        script = switching_script(s, horizon)
        comp = piecewise_comparator(script, horizon // 2)
        for base in totals:
            trace = run(FewAgent(make_few(FewConfig(dims, eta), base)), script, s)
            totals[base] += regret(trace, comp, script) / seeds
    ratio = totals["fixedshare"] / totals["tabular"]
    detail = f"fixedshare={totals['fixedshare']:.1f} tabular={totals['tabular']:.1f}"
    return CheckResult("A6 fixed share tracking", ratio <= max_ratio, ratio, max_ratio, detail)


# A7


def iid_tree_run(seed: int, horizon: int, height: int, threshold: int, k: int = 3, eta: float = 1.0,
                 switch_prob: float = 0.1):
    """One bandit run with empirically estimated hierarchical targets on
    the built-in two-group instance.  Returns the run result and the learner."""
    groups, x_stars, losses = tree_instance(seed, horizon, k)
    lr = eta / math.sqrt(k * horizon)
    hier = HierarchicalLearner(2, k, lr, switch_prob, max_depth=height, sample_threshold=threshold)
    few = Few(hier.learners, strict=False)
    result = run_tree(few, hier, groups, x_stars, losses, seed, true_cdfs=TREE_CDFS)
    return result, hier


def split_error(hier: HierarchicalLearner) -> float:
    """Largest gap between an estimated split proportion and the true one."""
    worst = 0.0
    for i, props in enumerate(hier.proportions):
        cdf = TREE_CDFS[i]
        for child, p in props.items():
            parent = child >> 1
            lo, hi = node_interval(parent)
            mass = cdf(hi) - cdf(lo)
            clo, chi = node_interval(child)
            true_p = (cdf(chi) - cdf(clo)) / mass if mass > 0 else 0.0
            worst = max(worst, abs(p - true_p))
    return worst


@_timed
def check_iid_tree(seeds: int = 200, horizon: int = 1000, height: int = 5, epsilon: float = 0.25,
                   slack: float = 0.02) -> CheckResult:
    """Worst per-trial parity against the true distributions exceeds
    ``4 h epsilon`` in at most a ``delta + slack`` fraction of runs, with
    the threshold ``n`` from :func:`required_sample_size` and
    ``delta = 2 T exp(-2 epsilon**2 n)``."""
    n = required_sample_size(horizon, height, epsilon)
    delta = min(1.0, 2 * horizon * math.exp(-2 * epsilon ** 2 * n))
    limit = 4 * height * epsilon
    exceed = 0
    worst = 0.0
    for s in range(seeds):
        result, _ = iid_tree_run(s, horizon, height, n)
        peak = float(np.nanmax(result.true_parity))
        worst = max(worst, peak)
        exceed += peak > limit
    frac = exceed / seeds
    detail = f"n={n} delta={delta:.3g} limit={limit:g} worst={worst:.3g}"
    return CheckResult("A7 iid approximate parity", frac <= delta + slack, frac, delta + slack, detail)


@_timed
def check_iid_tree_realised(seeds: int = 10, horizon: int = 3000, height: int = 3, threshold: int = 60) -> CheckResult:
    """Non-vacuous companion to A7: with a small threshold the tree grows,
    and the worst true parity never exceeds ``4 h`` times the realised
    worst split-proportion error."""
    worst_ratio = 0.0
    grown = 0
    for s in range(seeds):
        result, hier = iid_tree_run(s, horizon, height, threshold)
        eps = split_error(hier)
        peak = float(np.nanmax(result.true_parity))
        grown += sum(len(learner.grown) for learner in hier.learners)
        if peak > 0:
            worst_ratio = max(worst_ratio, peak / (4 * height * eps) if eps > 0 else math.inf)
    detail = f"mean grown nodes per run={grown / seeds:.1f}"
    return CheckResult("A7b realised split error bound", worst_ratio <= 1.0 and grown > 0, worst_ratio, 1.0, detail)


# A8


def classification_distribution() -> FiniteDistribution:
    """Two groups, two contexts, binary actions; group 0 leans to action 0
    and group 1 to action 1, so parity has a cost."""
    lean = {(0, 0): 0.8, (0, 1): 0.7, (1, 0): 0.3, (1, 1): 0.4}
    probs, groups, contexts, losses = [], [], [], []
    for (i, x), p in lean.items():
        for vec, q in (([0.0, 1.0], p), ([1.0, 0.0], 1 - p)):
            probs.append(0.25 * q)
            groups.append(i)
            contexts.append(x)
            losses.append(vec)
    return FiniteDistribution(probs, groups, contexts, losses)


@_timed
def check_classification(horizons=(500, 2000, 8000), seeds: int = 20, max_ratio: float = 0.45):
    """Averaged ensemble policies are fair and their generalisation regret
    falls with the sample size."""
    dist = classification_distribution()
    target = TWO_BY_TWO
    best = solve_fair_lp(dist.expected_cost(2, 2), target)
    means = []
    worst_parity = 0.0
    for t_len in horizons:
        vals = []
        for s in range(seeds):
            data = dist.sample(make_rng(s, 500, t_len), t_len)
            policy = train_fair_classifier(data, target)
            worst_parity = max(worst_parity, parity_violation(policy, target))
            vals.append(generalisation_regret(policy, best, dist))
        means.append(float(np.mean(vals)))
    ratio = means[-1] / means[0]
    monotone = all(b < a for a, b in zip(means, means[1:]))
    passed = worst_parity <= TOL and monotone and ratio <= max_ratio
    detail = f"regrets={np.round(means, 5).tolist()} parity={worst_parity:.2g}"
    return CheckResult("A8 fair classification", passed, ratio, max_ratio, detail)


# A9


@_timed
def check_baseline_contrast(horizon: int = 4000, seed: int = 0, min_violation: float = 0.1) -> CheckResult:
    """On opposed preferences the per-group baseline beats every fair
    policy's loss but is unfair; the fair learner's parity is exact."""
    dims = Dims(2, 2, 2, horizon)
    script = stochastic_script(seed, TWO_BY_TWO, OPPOSED_MEANS, horizon)
    comp = best_fair_comparator(script)
    floor = sum(comp.row(t, script.groups[t], script.contexts[t]) @ script.losses[t] for t in range(horizon))
    base_trace = run(exp4_per_group(dims), script, seed)
    fair_trace = run(FewAgent(make_few(FewConfig(dims, 1.0))), script, seed)
    base_par = float(np.mean(base_trace.parity))
    fair_par = float(np.max(fair_trace.parity))
    passed = base_trace.cum_exp_loss < floor and base_par > min_violation and fair_par <= TOL
    detail = (f"baseline loss={base_trace.cum_exp_loss:.1f} fair floor={floor:.1f} "
              f"baseline mean parity={base_par:.3f} fair max parity={fair_par:.2g}")
    return CheckResult("A9 baseline contrast", passed, base_par, min_violation, detail)


# quick invariant suite


@_timed
def check_bp_enumeration(trials: int = 20, seed: int = 0) -> CheckResult:
    """Sum-product queries equal brute-force marginals on small random subtrees."""
    rng = make_rng(seed, 600)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(2, 4))
        learner = TreeHedge(k, float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.05, 1.0)))
        while len(learner.leaves()) < int(rng.integers(1, 5)):
            learner.grow(int(rng.choice(learner.leaves())))
        for _ in range(4):
            learner.update(int(rng.choice(learner.leaves())), rng.normal(size=k))
        for v in sorted(learner.grown | set(learner.leaves().tolist())):
            worst = max(worst, float(np.abs(learner.query(v) - tree_marginal_by_enumeration(learner, v)).max()))
    return CheckResult("belief propagation matches enumeration", worst <= TOL, worst, TOL)


@_timed
def check_convex_mixture(trials: int = 50, seed: int = 0) -> CheckResult:
    """Mixtures of fair policies for one target are fair."""
    rng = make_rng(seed, 700)
    worst = 0.0
    for _ in range(trials):
        m, n, k = int(rng.integers(2, 5)), int(rng.integers(1, 7)), int(rng.integers(2, 5))
        target = random_target(rng, m, n, 0.3)
        pols = random_fair_policies(rng, target, k, 4)
        w = rng.dirichlet(np.ones(4))
        worst = max(worst, parity_violation(np.tensordot(w, pols, axes=1), target))
    return CheckResult("convex mixtures stay fair", worst <= TOL, worst, TOL)


@_timed
def check_replay(seed: int = 0) -> CheckResult:
    """Identical (agent, script, seed) produce byte-identical traces."""
    dims = Dims(3, 4, 3, 200)
    script = adversarial_random_script(seed, dims)
    texts = [run(FewAgent(make_few(FewConfig(dims, 1.0))), script, seed).to_csv() for _ in range(2)]
    return CheckResult("replay determinism", texts[0] == texts[1], float(texts[0] != texts[1]), 0.0)


def quick_checks(seed: int = 0) -> List[CheckResult]:
    out = list(check_parity_and_lemmas(runs=8, horizon=100, seed=seed))
    out.append(check_unbiasedness(runs=3, horizon=30, seed=seed))
    out.append(check_mutation(seed=seed))
    out.append(check_hedge_equivalence(seeds=2, horizon=50))
    out.append(check_bp_enumeration(seed=seed))
    out.append(check_convex_mixture(seed=seed))
    out.append(check_replay(seed=seed))
    return out


def full_checks(seed: int = 0) -> List[CheckResult]:
    out = list(check_parity_and_lemmas(seed=seed))
    out.append(check_regret_bound())
    out.append(check_unbiasedness(seed=seed))
    out.append(check_hedge_equivalence())
    out.append(check_fixed_share())
    out.append(check_iid_tree())
    out.append(check_iid_tree_realised())
    out.append(check_classification())
    out.append(check_baseline_contrast(seed=seed))
    out.append(check_mutation(seed=seed))
    out.append(check_bp_enumeration(seed=seed))
    return out


def report(results: List[CheckResult]) -> Dict:
    return {"passed": all(r.passed for r in results), "checks": [r.as_dict() for r in results]}

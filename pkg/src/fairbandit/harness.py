"""Environments, agents, comparators and measurements for fair bandit runs.

A run follows the five-step trial protocol: the environment reveals the
target, the agent commits to a (fair) policy, the instance is revealed,
an action is drawn and its loss observed.  Environments are oblivious,
so each is materialised up front as a :class:`Script` that can be replayed
exactly.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from .base import BaseLearner, ExplicitHedge, TabularHedge, expert_gradient
from .core import Dims, check_target, make_rng, sample_action, random_target
from .few import Few, ProtocolError, TrialState, as_sparse_target, fair_rows
from .meta import DoublingEnsemble
from .tree import HierarchicalLearner, true_leaf_marginal


# scripts


@dataclass
class Script:
    """A replayable trial sequence.

    ``targets`` is ``(M, N)`` for a constant target or ``(T, M, N)``;
    dynamic empirical targets may instead be a list of sparse targets.
    """

    targets: Union[np.ndarray, list]
    groups: np.ndarray
    contexts: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        self.groups = np.asarray(self.groups, dtype=int)
        self.contexts = np.asarray(self.contexts, dtype=int)
        self.losses = np.asarray(self.losses, dtype=float)
        if not _is_sparse_sequence(self.targets):
            self.targets = np.asarray(self.targets, dtype=float)
        if self.losses.min() < 0 or self.losses.max() > 1:
            raise ValueError("losses must lie in [0, 1]")
        self._sparse_constant = None

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def num_actions(self) -> int:
        return self.losses.shape[1]

    @property
    def constant_target(self) -> bool:
        return isinstance(self.targets, np.ndarray) and self.targets.ndim == 2

    def target(self, t: int):
        if self.constant_target:
            if self._sparse_constant is None:
                self._sparse_constant = as_sparse_target(self.targets)
            return self._sparse_constant
        return self.targets[t]

    def dense_target(self, t: int) -> np.ndarray:
        target = self.target(t)
        if isinstance(target, np.ndarray):
            return target
        m = len(target)
        n = int(max(max(xs, default=-1) for xs, _ in target)) + 1
        out = np.zeros((m, max(n, self.num_contexts)))
        for i, (xs, ms) in enumerate(target):
            out[i, xs] = ms
        return out

    @property
    def num_contexts(self) -> int:
        if isinstance(self.targets, np.ndarray):
            return self.targets.shape[-1]
        return int(self.contexts.max()) + 1

    def slice(self, start: int, stop: int) -> "Script":
        targets = self.targets if self.constant_target else self.targets[start:stop]
        return Script(targets, self.groups[start:stop], self.contexts[start:stop], self.losses[start:stop])

    def to_jsonl(self) -> str:
        lines = []
        for t in range(len(self)):
            lines.append(json.dumps({
                "mu": self.dense_target(t).tolist(), "i": int(self.groups[t]),
                "x": int(self.contexts[t]), "loss": self.losses[t].tolist(),
            }))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Script":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows:
            raise ValueError("empty script")
        mus = np.array([r["mu"] for r in rows], dtype=float)
        targets = mus[0] if np.all(mus == mus[0]) else mus
        return cls(targets, [r["i"] for r in rows], [r["x"] for r in rows], [r["loss"] for r in rows])


def _is_sparse_sequence(targets) -> bool:
    return (isinstance(targets, list) and len(targets) > 0 and isinstance(targets[0], list)
            and len(targets[0]) > 0 and isinstance(targets[0][0], tuple))


def _draw_instances(rng, target, horizon, group_probs=None):
    m, n = target.shape
    groups = rng.choice(m, size=horizon, p=group_probs)
    cdf = np.cumsum(target, axis=1)
    u = rng.random(horizon) * cdf[groups, -1]
    contexts = np.array([np.searchsorted(cdf[g], v, side="right") for g, v in zip(groups, u)])
    return groups, np.minimum(contexts, n - 1)


def stochastic_script(seed: int, target, means, horizon: int, group_probs=None) -> Script:
    """Constant target; instances drawn from it; Bernoulli losses with
    ``means[i, x, a]``, or, if ``means`` has a leading time axis of two
    phases, the second phase applies from ``horizon // 2`` on."""
    rng = make_rng(seed, 1)
    target = check_target(target)
    means = np.asarray(means, dtype=float)
    groups, contexts = _draw_instances(rng, target, horizon, group_probs)
    if means.ndim == 4:
        phase = (np.arange(horizon) >= horizon // 2).astype(int)
        mean_rows = means[phase, groups, contexts]
    else:
        mean_rows = means[groups, contexts]
    losses = (rng.random(mean_rows.shape) < mean_rows).astype(float)
    return Script(target, groups, contexts, losses)


def adversarial_random_script(seed: int, dims: Dims, zero_prob: float = 0.3) -> Script:
    """A fresh random target every trial (with random zero entries), an
    instance from its support and uniform losses."""
    rng = make_rng(seed, 2)
    m, n, k, t = dims.num_groups, dims.num_contexts, dims.num_actions, dims.horizon
    targets = np.array([random_target(rng, m, n, zero_prob) for _ in range(t)])
    groups = rng.integers(m, size=t)
    contexts = np.array([rng.choice(np.flatnonzero(targets[s, g])) for s, g in enumerate(groups)])
    return Script(targets, groups, contexts, rng.random((t, k)))


def empirical_script(seed: int, population, means, horizon: int, group_probs=None) -> Script:
    """Instances from ``population``; each trial's target is the empirical
    per-group context distribution of the instances so far (including the
    current one).  Groups not yet seen have an empty support."""
    rng = make_rng(seed, 3)
    population = check_target(population)
    m, n = population.shape
    groups, contexts = _draw_instances(rng, population, horizon, group_probs)
    means = np.asarray(means, dtype=float)
    losses = (rng.random((horizon, means.shape[-1])) < means[groups, contexts]).astype(float)
    counts = np.zeros((m, n))
    targets = []
    for g, x in zip(groups, contexts):
        counts[g, x] += 1
        sparse = []
        for i in range(m):
            xs = np.flatnonzero(counts[i])
            sparse.append((xs, counts[i, xs] / counts[i, xs].sum()))
        targets.append(sparse)
    script = Script(targets, groups, contexts, losses)
    return script


# agents


class FewAgent:
    """The meta-algorithm driven as a bandit (default) or full-information learner."""

    def __init__(self, few: Few, mode: str = "bandit"):
        self.few = few
        self.mode = mode
        self.state: Optional[TrialState] = None

    def begin(self, target) -> None:
        self.state = self.few.begin_trial(target)

    def act(self, i: int, x: int, rng) -> tuple:
        a = self.few.act(self.state, i, x, rng)
        return self.state.row, a

    def feedback(self, losses, action: int) -> None:
        if self.mode == "bandit":
            self.few.feedback_bandit(self.state, float(losses[action]))
        else:
            self.few.feedback_full(self.state, losses)

    @property
    def beta(self) -> float:
        return self.state.beta

    def parity(self) -> float:
        return self.state.parity()

    def support_sizes(self) -> List[int]:
        return self.state.support_sizes()


class EnsembleAgent:
    """Full-information doubling ensemble; the target must be dense and constant in shape."""

    def __init__(self, ensemble: DoublingEnsemble, num_contexts: int):
        self.ens = ensemble
        self.num_contexts = num_contexts
        self.states = None
        self.target = None

    def _dense(self, target):
        if isinstance(target, np.ndarray):
            return target
        out = np.zeros((len(target), self.num_contexts))
        for i, (xs, ms) in enumerate(target):
            out[i, xs] = ms
        return out

    def begin(self, target) -> None:
        self.target = self._dense(target)
        self.states = self.ens.begin_trial(self.target)

    def act(self, i, x, rng):
        if self.target[i, x] == 0:
            raise ProtocolError(f"context {x} is outside the support of group {i}")
        self._instance = (i, x)
        row = self.ens.combined_row(self.states, i, x)
        return row, sample_action(row, rng)

    def feedback(self, losses, action):
        i, x = self._instance
        self.ens.feedback(self.states, i, x, losses)

    @property
    def beta(self) -> float:
        return float("nan")

    def parity(self) -> float:
        omega = np.einsum("ix,ixa->ia", self.target, self.ens.combined_policy(self.states))
        return float(np.max(omega.max(axis=0) - omega.min(axis=0)))

    def support_sizes(self):
        return [int(np.count_nonzero(row)) for row in self.target]


class Exp4Agent:
    """Unfair baseline: an independent bandit learner per group.

    Plays ``(1 - gamma) * query + gamma / K`` and updates only the played
    group's learner at the played context with the importance-weighted loss.
    """

    def __init__(self, learners: Sequence[BaseLearner], exploration: float):
        self.learners = list(learners)
        self.num_actions = self.learners[0].num_actions
        self.exploration = exploration
        self.target = None
        self._last = None

    def _mixed(self, raw):
        return (1.0 - self.exploration) * raw + self.exploration / self.num_actions

    def begin(self, target) -> None:
        self.target = as_sparse_target(target)

    def act(self, i, x, rng):
        row = self._mixed(self.learners[i].query(x))
        a = sample_action(row, rng)
        self._last = (i, x, row, a)
        return row, a

    def feedback(self, losses, action):
        i, x, row, a = self._last
        est = np.zeros(self.num_actions)
        est[a] = losses[a] / row[a]
        self.learners[i].update(x, est)

    @property
    def beta(self) -> float:
        return float("nan")

    def parity(self) -> float:
        omega = []
        for i, (xs, ms) in enumerate(self.target):
            if len(xs):
                omega.append(ms @ self._mixed(self.learners[i].query_many(xs)))
        omega = np.array(omega)
        if len(omega) < 2:
            return 0.0
        return float(np.max(omega.max(axis=0) - omega.min(axis=0)))

    def support_sizes(self):
        return [len(xs) for xs, _ in self.target]


def exp4_per_group(dims: Dims, eta: float = 1.0, exploration: Optional[float] = None,
                   prior: Optional[np.ndarray] = None) -> Exp4Agent:
    """Baseline with the same per-context Hedge base and learning rate
    ``eta / sqrt(K T)``; exploration defaults to ``min(1, sqrt(K ln K / T))``."""
    k, t = dims.num_actions, dims.horizon
    if exploration is None:
        exploration = min(1.0, math.sqrt(k * math.log(k) / t))
    lr = eta / math.sqrt(k * t)
    learners = [TabularHedge(dims.num_contexts, k, lr, prior) for _ in range(dims.num_groups)]
    return Exp4Agent(learners, exploration)


# traces


@dataclass
class RunTrace:
    beta: np.ndarray
    parity: np.ndarray
    loss: np.ndarray
    exp_loss: np.ndarray
    actions: np.ndarray
    rows: np.ndarray
    support_sizes: np.ndarray

    def __len__(self):
        return len(self.loss)

    @property
    def cum_loss(self) -> float:
        return float(self.loss.sum())

    @property
    def cum_exp_loss(self) -> float:
        return float(self.exp_loss.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "beta", "parity", "loss", "exp_loss"])
        for t in range(len(self)):
            writer.writerow([t + 1, repr(float(self.beta[t])), repr(float(self.parity[t])),
                             repr(float(self.loss[t])), repr(float(self.exp_loss[t]))])
        return buf.getvalue()

    def to_jsonl(self) -> str:
        lines = []
        for t in range(len(self)):
            lines.append(json.dumps({
                "t": t + 1, "beta": float(self.beta[t]), "parity": float(self.parity[t]),
                "action": int(self.actions[t]), "loss": float(self.loss[t]),
                "exp_loss": float(self.exp_loss[t]), "support_sizes": self.support_sizes[t].tolist(),
            }))
        return "\n".join(lines) + "\n"


def run(agent, script: Script, seed: int) -> RunTrace:
    """Play ``script`` with ``agent``; deterministic given ``seed``."""
    rng = make_rng(seed, 0)
    horizon = len(script)
    k = script.num_actions
    beta = np.empty(horizon)
    parity = np.empty(horizon)
    loss = np.empty(horizon)
    exp_loss = np.empty(horizon)
    actions = np.empty(horizon, dtype=int)
    rows = np.empty((horizon, k))
    sizes = []
    for t in range(horizon):
        i, x, losses = int(script.groups[t]), int(script.contexts[t]), script.losses[t]
        agent.begin(script.target(t))
        row, a = agent.act(i, x, rng)
        beta[t] = agent.beta
        parity[t] = agent.parity()
        sizes.append(agent.support_sizes())
        rows[t] = row
        actions[t] = a
        loss[t] = losses[a]
        exp_loss[t] = row @ losses
        agent.feedback(losses, a)
    return RunTrace(beta, parity, loss, exp_loss, actions, rows, np.array(sizes))


# comparators and regret


class Comparator:
    """A fair policy, or a piecewise-constant sequence of fair policies.

    ``policies`` is ``(M, N, K)`` or ``(P, M, N, K)`` with ``starts`` giving
    the first trial of each piece.  Fairness against every target of
    ``script`` in force during each piece is checked on construction.
    """

    def __init__(self, policies, script: Optional[Script] = None, starts: Sequence[int] = (0,),
                 tol: float = 1e-9):
        policies = np.asarray(policies, dtype=float)
        if policies.ndim == 3:
            policies = policies[None]
        self.policies = policies
        self.starts = np.asarray(starts, dtype=int)
        if len(self.starts) != len(policies):
            raise ValueError("one start per piece required")
        if script is not None:
            self.check(script, tol)

    def piece(self, t: int) -> np.ndarray:
        return self.policies[int(np.searchsorted(self.starts, t, side="right")) - 1]

    def row(self, t: int, i: int, x: int) -> np.ndarray:
        return self.piece(t)[i, x]

    def check(self, script: Script, tol: float = 1e-9) -> None:
        times = [0] if script.constant_target and len(self.starts) == 1 else range(len(script))
        for t in times:
            viol = _parity_on(self.piece(t), script.target(t))
            if viol > tol:
                raise ValueError(f"comparator violates parity by {viol:.3g} at trial {t}")


def _parity_on(policy: np.ndarray, target) -> float:
    omega = [ms @ policy[i, xs] for i, (xs, ms) in enumerate(as_sparse_target(target)) if len(xs)]
    omega = np.array(omega)
    return float(np.max(omega.max(axis=0) - omega.min(axis=0))) if len(omega) > 1 else 0.0


def regret(trace: RunTrace, comparator: Comparator, script: Script) -> float:
    """``sum_t sum_a (pi_t - comparator)(i_t, x_t, a) l_t(a)`` using the
    recorded rows (the in-expectation form)."""
    total = 0.0
    for t in range(len(script)):
        diff = trace.rows[t] - comparator.row(t, script.groups[t], script.contexts[t])
        total += float(diff @ script.losses[t])
    return total


def cumulative_cost(script: Script, num_groups: int, num_contexts: int) -> np.ndarray:
    cost = np.zeros((num_groups, num_contexts, script.num_actions))
    np.add.at(cost, (script.groups, script.contexts), script.losses)
    return cost


def make_fair(policy: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Apply the parity-restoring post-processing to a dense policy."""
    omega = np.einsum("ix,ixa->ia", target, policy)
    top = omega.max(axis=0)
    return fair_rows(policy, (top - omega)[:, None, :], float(np.sum(top - omega.min(axis=0))))


def random_fair_policies(rng, target: np.ndarray, num_actions: int, count: int) -> np.ndarray:
    """``count`` fair policies: random Dirichlet raw policies run through
    the parity post-processing."""
    m, n = target.shape
    raw = rng.dirichlet(np.full(num_actions, 0.3), size=(count, m, n))
    omega = np.einsum("ix,bixa->bia", target, raw)
    top = omega.max(axis=1)
    delta = top[:, None, :] - omega
    beta = (top - omega.min(axis=1)).sum(axis=1)
    psi = (raw + delta[:, :, None, :]) / (1.0 + beta)[:, None, None, None]
    return psi + (1.0 - psi.sum(axis=-1, keepdims=True)) / num_actions


def solve_fair_lp(cost: np.ndarray, target: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Minimise ``sum cost * pi`` over fair policies for ``target``."""
    m, n, k = cost.shape
    nvar = m * n * k
    idx = np.arange(nvar).reshape(m, n, k)
    a_eq, b_eq = [], []
    for i in range(m):
        for x in range(n):
            row = np.zeros(nvar)
            row[idx[i, x]] = 1.0
            a_eq.append(row)
            b_eq.append(1.0)
    for i in range(1, m):
        for a in range(k):
            row = np.zeros(nvar)
            row[idx[0, :, a]] += target[0]
            row[idx[i, :, a]] -= target[i]
            a_eq.append(row)
            b_eq.append(0.0)
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, 1), method="highs",
                  options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol})
    if not res.success:
        raise RuntimeError(f"fair LP failed: {res.message}")
    policy = np.clip(res.x.reshape(m, n, k), 0.0, None)
    policy /= policy.sum(axis=-1, keepdims=True)
    return make_fair(policy, target)


@dataclass
class ComparatorCertificate:
    objective: float
    parity: float
    best_random: float
    samples: int

    @property
    def ok(self) -> bool:
        return self.parity <= 1e-9 and self.objective <= self.best_random + 1e-9


def best_fair_comparator(script: Script, start: int = 0, stop: Optional[int] = None,
                         tol: float = 1e-9, certify: int = 0, seed: int = 0):
    """Best fixed fair policy in hindsight over trials ``[start, stop)``.

    Requires a constant target.  With ``certify > 0`` also returns a
    certificate comparing the objective with that many random fair policies.
    """
    if not script.constant_target:
        raise ValueError("best fair comparator needs a constant target")
    target = script.targets
    part = script.slice(start, len(script) if stop is None else stop)
    m, n = target.shape
    cost = cumulative_cost(part, m, n)
    policy = solve_fair_lp(cost, target, tol)
    comp = Comparator(policy, script)
    if not certify:
        return comp
    rng = make_rng(seed, 7)
    best = math.inf
    remaining = certify
    while remaining > 0:
        b = min(remaining, 20000)
        pols = random_fair_policies(rng, target, script.num_actions, b)
        best = min(best, float(np.min(np.einsum("bixa,ixa->b", pols, cost))))
        remaining -= b
    cert = ComparatorCertificate(float(np.sum(cost * policy)), _parity_on(policy, target), best, certify)
    return comp, cert


# oracles


def true_subgradient(ts: TrialState, losses, num_contexts: int) -> np.ndarray:
    """Dense sub-gradient of the trial objective at the raw policy.

    Recomputes marginals, budget and arg-extremes from the raw rows rather
    than trusting the cached trial quantities.
    """
    m = len(ts.xi)
    k = len(losses)
    active = [i for i in range(m) if len(ts.supports[i])]
    omega = {i: ts.masses[i] @ ts.xi[i] for i in active}
    stack = np.array([omega[i] for i in active])
    budget = float(np.sum(stack.max(axis=0) - stack.min(axis=0)))
    up = [active[int(np.argmax(stack[:, a]))] for a in range(k)]
    down = [active[int(np.argmin(stack[:, a]))] for a in range(k)]
    g = np.zeros((m, num_contexts, k))
    for i in active:
        for x, mass in zip(ts.supports[i], ts.masses[i]):
            for a in range(k):
                g[i, x, a] += mass * ((up[a] == i) - (down[a] == i))
    if budget <= 1:
        g[ts.group, ts.context] += np.asarray(losses, dtype=float)
    return g


def expected_pseudo_gradient(few: Few, ts: TrialState, losses, num_contexts: int) -> np.ndarray:
    """Average of the bandit pseudo-gradient over the action draw, by enumeration."""
    out = np.zeros((few.num_groups, num_contexts, few.num_actions))
    for a, p in enumerate(ts.row):
        if p > 0:
            out += p * few.pseudo_gradient(ts, a, float(losses[a])).dense(num_contexts)
    return out


def expert_gradient_moments(few: Few, ts: TrialState, losses, num_contexts: int):
    """Enumerated ``E[sum_i sum_e theta(i, e) nu(i, e)**2]`` and the minimum
    of ``nu`` over actions, groups and experts, for explicit-expert learners."""
    second = 0.0
    lowest = math.inf
    for a, p in enumerate(ts.row):
        if p <= 0:
            continue
        lam = few.pseudo_gradient(ts, a, float(losses[a])).dense(num_contexts)
        for i, learner in enumerate(few.learners):
            if not isinstance(learner, ExplicitHedge):
                raise TypeError("moments need explicit-expert learners")
            nu = expert_gradient(lam[i], learner.experts)
            second += p * float(learner.theta @ nu ** 2)
            lowest = min(lowest, float(nu.min()))
    return second, lowest


@dataclass
class LemmaSlack:
    """Worst margins of the per-trial guarantees (non-negative means satisfied)."""

    lower_bound: float   # min of pi - xi / (1 + beta)
    mass_shift: float    # min of beta - sum_a max(0, pi - xi)
    psi_total: float     # min of 1 - sum_a psi
    psi_min: float       # min of psi
    parity: float

    def ok(self, tol: float = 1e-9) -> bool:
        return min(self.lower_bound, self.mass_shift, self.psi_total, self.psi_min) >= -tol and self.parity <= tol


def lemma_slack(ts: TrialState) -> LemmaSlack:
    lower, shift, total, low = math.inf, math.inf, math.inf, math.inf
    for i, xi in enumerate(ts.xi):
        if not len(xi):
            continue
        pi = ts.fair_rows(i)
        psi = ts.psi(i)
        lower = min(lower, float(np.min(pi - xi / (1.0 + ts.beta))))
        shift = min(shift, float(np.min(ts.beta - np.maximum(0.0, pi - xi).sum(axis=1))))
        total = min(total, float(np.min(1.0 - psi.sum(axis=1))))
        low = min(low, float(psi.min()))
    return LemmaSlack(lower, shift, total, low, ts.parity())


def parity_audit(trace: RunTrace) -> dict:
    return {"parity_max": float(np.max(trace.parity)), "parity_mean": float(np.mean(trace.parity))}


# hierarchical runs


@dataclass
class TreeRunResult:
    loss: np.ndarray
    true_parity: np.ndarray
    target_parity: np.ndarray
    leaves: np.ndarray = field(repr=False)


def _power_cdf(power: float):
    return lambda v: float(min(max(v, 0.0), 1.0)) ** power


# group 0 uniform on [0, 1), group 1 with density 2x
TREE_CDFS = [_power_cdf(1.0), _power_cdf(2.0)]


def tree_instance(seed: int, horizon: int, num_actions: int):
    """Groups, true contexts and Bernoulli losses for the two-group tree
    instance: action ``a`` is good near ``a / (K - 1)``, shifted by 0.2 for
    group 1."""
    rng = make_rng(seed, 400)
    groups = rng.integers(2, size=horizon)
    u = rng.random(horizon)
    x_stars = np.minimum(np.where(groups == 0, u, np.sqrt(u)), np.nextafter(1.0, 0.0))
    centres = np.linspace(0.0, 1.0, num_actions)
    shift = np.where(groups == 0, 0.0, 0.2)[:, None]
    means = np.clip(np.abs(x_stars[:, None] + shift - centres[None, :]), 0.0, 1.0)
    losses = (rng.random(means.shape) < means).astype(float)
    return groups, x_stars, losses


def run_tree(few: Few, hier: HierarchicalLearner, groups, x_stars, losses, seed: int,
             true_cdfs=None) -> TreeRunResult:
    """Bandit run over true contexts in ``[0, 1)`` with hierarchical base
    learners.  ``losses[t]`` is the loss vector of trial ``t``.  With
    ``true_cdfs`` the parity of the induced true-context policy with respect
    to the true distributions is recorded every trial."""
    rng = make_rng(seed, 0)
    horizon = len(groups)
    loss = np.empty(horizon)
    true_par = np.full(horizon, np.nan)
    tgt_par = np.empty(horizon)
    leaves = np.empty(horizon, dtype=np.int64)
    for t in range(horizon):
        i, xs = int(groups[t]), float(x_stars[t])
        ts = few.begin_trial(hier.target())
        leaf = hier.locate_leaf(i, xs)
        a = few.act(ts, i, leaf, rng)
        loss[t] = losses[t][a]
        tgt_par[t] = ts.parity()
        if true_cdfs is not None:
            omega = true_leaf_marginal(lambda g, v: few.policy_row(ts, g, v), hier, true_cdfs)
            true_par[t] = float(np.max(omega.max(axis=0) - omega.min(axis=0)))
        few.feedback_bandit(ts, float(loss[t]))
        hier.end_trial(i, xs)
        leaves[t] = leaf
    return TreeRunResult(loss, true_par, tgt_par, leaves)


def tree_marginal_by_enumeration(learner, v: int) -> np.ndarray:
    """Label marginal at node ``v`` of a tree learner by summing over every
    labelling of its grown subtree (``K ** nodes`` terms; small trees only)."""
    k = learner.num_actions
    nodes = sorted(learner.grown | set(int(u) for u in learner.leaves()))
    pos = {u: j for j, u in enumerate(nodes)}
    g = learner.switch_prob
    trans = (1.0 - g) * np.eye(k) + g / k
    out = np.zeros(k)
    for labels in itertools.product(range(k), repeat=len(nodes)):
        w = 1.0 / k
        for u, lab in zip(nodes, labels):
            if u != 1:
                w *= trans[labels[pos[u >> 1]], lab]
            lp = learner.log_pot.get(u)
            if lp is not None:
                w *= math.exp(lp[lab])
        out[labels[pos[v]]] += w
    return out / out.sum()

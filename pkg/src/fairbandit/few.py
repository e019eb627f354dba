"""Fairness with exponential weights: the per-trial meta-algorithm.

One base learner is kept per group.  Each trial queries the learners on
their group's support to get a raw (unfair) policy, shifts probability
mass toward the actions a group under-selects relative to the others so
that every group's action marginal coincides, and finally feeds each
learner a pseudo-gradient combining an importance-weighted loss with
parity-correction terms.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .base import BaseLearner, ExplicitHedge, FixedShare, TabularHedge
from .core import Dims, check_target, sample_action

DENOM_FLOOR = 1e-300


class ProtocolError(RuntimeError):
    """The trial protocol was violated (e.g. an instance outside the support)."""


SparseTarget = List[Tuple[np.ndarray, np.ndarray]]


def as_sparse_target(target) -> SparseTarget:
    """Convert a dense ``(M, N)`` target, or a sequence of
    ``(contexts, masses)`` pairs, into per-group sorted supports."""
    sparse = isinstance(target, (list, tuple)) and len(target) > 0 and isinstance(target[0], tuple)
    if not sparse:
        mass = check_target(target)
        out = []
        for row in mass:
            xs = np.flatnonzero(row != 0)
            out.append((xs, row[xs]))
        return out
    out = []
    for xs, ms in target:
        xs = np.asarray(xs)
        ms = np.asarray(ms, dtype=float)
        keep = ms != 0
        xs, ms = xs[keep], ms[keep]
        order = np.argsort(xs, kind="stable")
        out.append((xs[order], ms[order]))
    return out


@dataclass
class FewConfig:
    """Tuning of the meta-algorithm.  ``learning_rate`` is ``eta / sqrt(K T)``
    with ``eta`` clamped to ``sqrt(T / K)``."""

    dims: Dims
    eta: float = 1.0
    mode: str = "bandit"
    strict: bool = True

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.mode not in ("bandit", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        cap = math.sqrt(self.dims.horizon / self.dims.num_actions)
        if self.eta > cap:
            warnings.warn(f"eta={self.eta} exceeds sqrt(T/K)={cap:.4g}; clamping", stacklevel=2)
            self.eta = cap

    @property
    def learning_rate(self) -> float:
        return self.eta / math.sqrt(self.dims.num_actions * self.dims.horizon)


@dataclass
class TrialState:
    supports: List[np.ndarray]
    masses: List[np.ndarray]
    xi: List[np.ndarray]
    omega: np.ndarray
    delta: np.ndarray
    beta: float
    kappa_up: np.ndarray
    kappa_down: np.ndarray
    group: Optional[int] = None
    context: Optional[int] = None
    row: Optional[np.ndarray] = None
    action: Optional[int] = None
    off_support: bool = False
    guard_hit: bool = False
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def num_actions(self) -> int:
        return self.omega.shape[1]

    def support_sizes(self) -> List[int]:
        return [len(xs) for xs in self.supports]

    def psi(self, i: int) -> np.ndarray:
        """Sub-stochastic intermediate rows for group ``i`` on its support."""
        return (self.xi[i] + self.delta[i]) / (1.0 + self.beta)

    def fair_rows(self, i: int) -> np.ndarray:
        """Fair policy rows for group ``i`` on its support."""
        return fair_rows(self.xi[i], self.delta[i], self.beta)

    def fair_marginal(self) -> np.ndarray:
        return np.array([ms @ self.fair_rows(i) for i, ms in enumerate(self.masses)])

    def parity(self) -> float:
        """Parity violation of the fair policy over the groups present in the target."""
        active = [i for i, xs in enumerate(self.supports) if len(xs)]
        omega = self.fair_marginal()[active]
        if omega.shape[0] < 2:
            return 0.0
        return float(np.max(omega.max(axis=0) - omega.min(axis=0)))


def fair_rows(xi: np.ndarray, delta_i: np.ndarray, beta: float) -> np.ndarray:
    """Raise each row by the group's deficit, scale by ``1 / (1 + beta)``,
    then hand the leftover mass out uniformly."""
    psi = (xi + delta_i) / (1.0 + beta)
    k = psi.shape[-1]
    pi = psi + (1.0 - psi.sum(axis=-1, keepdims=True)) / k
    return pi / pi.sum(axis=-1, keepdims=True)


@dataclass
class PseudoGradient:
    """Sparse per-group gradient: rows ``values[i]`` at ``contexts[i]``."""

    contexts: List[np.ndarray]
    values: List[np.ndarray]

    def dense(self, num_contexts: int) -> np.ndarray:
        m = len(self.values)
        k = self.values[0].shape[1]
        out = np.zeros((m, num_contexts, k))
        for i, (xs, vals) in enumerate(zip(self.contexts, self.values)):
            np.add.at(out[i], np.asarray(xs, dtype=int), vals)
        return out


class Few:
    """The fair meta-algorithm wrapping one base learner per group."""

    def __init__(self, learners: Sequence[BaseLearner], strict: bool = True):
        if not learners:
            raise ValueError("need at least one learner")
        self.learners = list(learners)
        self.num_groups = len(self.learners)
        self.num_actions = self.learners[0].num_actions
        self.strict = strict

    def begin_trial(self, target) -> TrialState:
        sparse = as_sparse_target(target)
        if len(sparse) != self.num_groups:
            raise ValueError(f"target has {len(sparse)} groups, engine has {self.num_groups}")
        k = self.num_actions
        supports, masses, xis = [], [], []
        omega = np.zeros((self.num_groups, k))
        for i, (xs, ms) in enumerate(sparse):
            xi = self.learners[i].query_many(xs) if len(xs) else np.zeros((0, k))
            supports.append(xs)
            masses.append(ms)
            xis.append(xi)
            omega[i] = ms @ xi
        # groups with an empty support impose no parity constraint
        active = np.array([len(xs) > 0 for xs in supports])
        if not active.any():
            raise ValueError("target has no group with positive mass")
        idx = np.flatnonzero(active)
        top = omega[idx].max(axis=0)
        delta = np.where(active[:, None], top - omega, 0.0)
        beta = float(np.sum(top - omega[idx].min(axis=0)))
        return TrialState(
            supports=supports, masses=masses, xi=xis, omega=omega, delta=delta, beta=beta,
            kappa_up=idx[np.argmax(omega[idx], axis=0)], kappa_down=idx[np.argmin(omega[idx], axis=0)],
        )

    def _locate(self, ts: TrialState, i: int, x) -> Optional[int]:
        xs = ts.supports[i]
        j = int(np.searchsorted(xs, x))
        if j < len(xs) and xs[j] == x:
            return j
        return None

    def raw_row(self, ts: TrialState, i: int, x) -> np.ndarray:
        j = self._locate(ts, i, x)
        if j is not None:
            return ts.xi[i][j]
        return self.learners[i].query(x)

    def policy_row(self, ts: TrialState, i: int, x) -> np.ndarray:
        """Fair action distribution for instance ``(i, x)``."""
        return fair_rows(self.raw_row(ts, i, x), ts.delta[i], ts.beta)

    def observe_instance(self, ts: TrialState, i: int, x) -> np.ndarray:
        off = self._locate(ts, i, x) is None
        if off and self.strict:
            raise ProtocolError(f"context {x} is outside the support of group {i}")
        ts.group, ts.context, ts.off_support = i, x, off
        ts.row = self.policy_row(ts, i, x)
        return ts.row

    def act(self, ts: TrialState, i: int, x, rng: np.random.Generator) -> int:
        """Sample the trial's action for instance ``(i, x)``."""
        row = self.observe_instance(ts, i, x)
        ts.action = sample_action(row, rng)
        return ts.action

    def _parity_terms(self, ts: TrialState) -> List[np.ndarray]:
        arange = np.arange(self.num_groups)[:, None]
        sign = (ts.kappa_up[None, :] == arange).astype(float) - (ts.kappa_down[None, :] == arange)
        return [np.outer(ms, sign[i]) for i, ms in enumerate(ts.masses)]

    def _with_loss_term(self, ts: TrialState, term: np.ndarray) -> PseudoGradient:
        values = self._parity_terms(ts)
        contexts = list(ts.supports)
        if ts.beta <= 1:
            i, x = ts.group, ts.context
            j = self._locate(ts, i, x)
            if j is None:
                contexts[i] = np.append(contexts[i], x)
                values[i] = np.vstack([values[i], term[None, :]])
            else:
                values[i][j] += term
        return PseudoGradient(contexts, values)

    def pseudo_gradient(self, ts: TrialState, action: int, loss: float) -> PseudoGradient:
        """Bandit gradient estimate for a given action and its observed loss.

        Pure: does not touch the learners.
        """
        term = np.zeros(self.num_actions)
        if ts.beta <= 1 and loss != 0:
            p = ts.row[action]
            if p < DENOM_FLOOR:
                ts.guard_hit = True
                p = DENOM_FLOOR
            term[action] = loss / p
        return self._with_loss_term(ts, term)

    def full_gradient(self, ts: TrialState, losses) -> PseudoGradient:
        """Exact sub-gradient at the raw policy when every loss is revealed."""
        return self._with_loss_term(ts, np.asarray(losses, dtype=float).copy())

    def dispatch(self, grad: PseudoGradient) -> None:
        for learner, xs, vals in zip(self.learners, grad.contexts, grad.values):
            if len(xs):
                learner.update_many(xs, vals)

    def feedback_bandit(self, ts: TrialState, loss: float) -> PseudoGradient:
        if ts.action is None:
            raise ProtocolError("feedback before act")
        if not 0 <= loss <= 1:
            raise ValueError(f"loss {loss} outside [0, 1]")
        grad = self.pseudo_gradient(ts, ts.action, loss)
        self.dispatch(grad)
        return grad

    def feedback_full(self, ts: TrialState, losses) -> PseudoGradient:
        losses = np.asarray(losses, dtype=float)
        if ts.row is None:
            raise ProtocolError("feedback before the instance was observed")
        if losses.shape != (self.num_actions,) or losses.min() < 0 or losses.max() > 1:
            raise ValueError("loss vector must have K entries in [0, 1]")
        grad = self.full_gradient(ts, losses)
        self.dispatch(grad)
        return grad

    def dense_policy(self, ts: TrialState, num_contexts: int) -> np.ndarray:
        """Materialise the full ``(M, N, K)`` fair policy (small problems only)."""
        out = np.empty((self.num_groups, num_contexts, self.num_actions))
        for i in range(self.num_groups):
            raw = self.learners[i].query_many(np.arange(num_contexts))
            out[i] = fair_rows(raw, ts.delta[i], ts.beta)
        return out


def make_learners(kind: str, dims: Dims, learning_rate: float, share_rate: Optional[float] = None,
                  prior: Optional[np.ndarray] = None) -> List[BaseLearner]:
    """One fresh learner per group for the dense base kinds."""
    n, k = dims.num_contexts, dims.num_actions
    out = []
    for _ in range(dims.num_groups):
        if kind == "tabular":
            out.append(TabularHedge(n, k, learning_rate, prior))
        elif kind == "fixedshare":
            alpha = 1.0 / dims.horizon if share_rate is None else share_rate
            out.append(FixedShare(n, k, learning_rate, alpha, prior))
        elif kind == "explicit":
            out.append(ExplicitHedge(n, k, learning_rate, prior))
        else:
            raise ValueError(f"unknown base kind {kind!r}")
    return out


def make_few(config: FewConfig, base: str = "tabular", share_rate: Optional[float] = None,
             prior: Optional[np.ndarray] = None) -> Few:
    learners = make_learners(base, config.dims, config.learning_rate, share_rate, prior)
    return Few(learners, strict=config.strict)

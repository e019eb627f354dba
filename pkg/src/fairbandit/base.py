"""Hedge base algorithms.

Every learner implements the same two-call contract.  ``query(x)`` returns
the action distribution induced at context ``x`` by the (implicit) weights
over experts ``e: contexts -> actions``.  ``update(x, g)`` multiplies the
weight of every expert by ``exp(-learning_rate * g[e(x)])`` and
renormalises.  ``g`` is an arbitrary finite real vector; the fair
meta-algorithm feeds pseudo-gradients with negative entries.

Weights are kept in the log domain so that large pseudo-gradients cannot
underflow a row to zero.
"""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

SNAPSHOT_VERSION = 1
EXPLICIT_BUDGET = 10**5


class OracleBudgetError(ValueError):
    """The explicit expert enumeration would exceed its size budget."""


class DivergenceUndefined(ValueError):
    """Relative entropy requested where the first argument is not dominated."""


def _log_normalize(logw: np.ndarray) -> np.ndarray:
    m = logw.max(axis=-1, keepdims=True)
    return logw - (m + np.log(np.exp(logw - m).sum(axis=-1, keepdims=True)))


def _check_gradient(g, num_actions: int) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != num_actions:
        raise ValueError(f"gradient has {g.shape[-1]} entries, expected {num_actions}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    return g


@dataclass(frozen=True)
class HedgeConfig:
    learning_rate: float

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def from_tuning(cls, eta: float, num_actions: int, horizon: int) -> "HedgeConfig":
        """Learning rate ``eta / sqrt(K T)``."""
        return cls(eta / math.sqrt(num_actions * horizon))


class BaseLearner(ABC):
    """The Hedge Query/Update contract."""

    num_actions: int
    learning_rate: float

    @abstractmethod
    def query(self, x) -> np.ndarray:
        """Action distribution at context ``x``."""

    @abstractmethod
    def update(self, x, g) -> None:
        """Exponentially reweight experts by their value of ``g`` at ``x``."""

    def query_many(self, xs) -> np.ndarray:
        return np.array([self.query(x) for x in xs]).reshape(len(xs), self.num_actions)

    def update_many(self, xs, grads) -> None:
        for x, g in zip(xs, grads):
            self.update(x, g)


class TabularHedge(BaseLearner):
    """Independent Hedge per context (product-form expert prior)."""

    kind = "tabular"

    def __init__(self, num_contexts: int, num_actions: int, learning_rate: float,
                 prior: Optional[np.ndarray] = None):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.num_contexts = num_contexts
        self.num_actions = num_actions
        self.learning_rate = float(learning_rate)
        if prior is None:
            self.log_weights = np.full((num_contexts, num_actions), -math.log(num_actions))
        else:
            prior = np.asarray(prior, dtype=float)
            if prior.shape != (num_contexts, num_actions):
                raise ValueError(f"prior shape {prior.shape} != {(num_contexts, num_actions)}")
            if prior.min() <= 0:
                raise ValueError("prior must be strictly positive")
            self.log_weights = _log_normalize(np.log(prior))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def query(self, x) -> np.ndarray:
        return np.exp(self.log_weights[x])

    def query_many(self, xs) -> np.ndarray:
        return np.exp(self.log_weights[np.asarray(xs, dtype=int)])

    def update(self, x, g) -> None:
        g = _check_gradient(g, self.num_actions)
        row = self.log_weights[x] - self.learning_rate * g
        self.log_weights[x] = self._mix(_log_normalize(row))

    def update_many(self, xs, grads) -> None:
        xs = np.asarray(xs, dtype=int)
        grads = _check_gradient(grads, self.num_actions)
        rows = _log_normalize(self.log_weights[xs] - self.learning_rate * grads)
        self.log_weights[xs] = self._mix(rows)

    def _mix(self, rows: np.ndarray) -> np.ndarray:
        return rows

    def state_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "kind": self.kind,
            "dims": {"num_contexts": self.num_contexts, "num_actions": self.num_actions},
            "learning_rate": self.learning_rate,
            "log_weights": self.log_weights.ravel().tolist(),
        }


class FixedShare(TabularHedge):
    """Hedge per context followed by mixing toward uniform at the updated row.

    Equivalent to Hedge over the expanded context set (context, trial) with
    a switching prior, given that the target only places mass on the
    current trial's copies.
    """

    kind = "fixedshare"

    def __init__(self, num_contexts: int, num_actions: int, learning_rate: float,
                 share_rate: float, prior: Optional[np.ndarray] = None):
        if not 0 <= share_rate <= 1:
            raise ValueError("share_rate must lie in [0, 1]")
        super().__init__(num_contexts, num_actions, learning_rate, prior)
        self.share_rate = float(share_rate)

    def _mix(self, rows: np.ndarray) -> np.ndarray:
        alpha = self.share_rate
        if alpha == 0:
            return rows
        if alpha == 1:
            return np.full_like(rows, -math.log(self.num_actions))
        return np.logaddexp(math.log1p(-alpha) + rows, math.log(alpha / self.num_actions))

    def state_dict(self) -> dict:
        state = super().state_dict()
        state["share_rate"] = self.share_rate
        return state


def expert_table(num_contexts: int, num_actions: int) -> np.ndarray:
    """All experts as a ``(K**N, N)`` array; expert ``e`` maps context ``x``
    to base-``K`` digit ``x`` of ``e``."""
    codes = np.arange(num_actions ** num_contexts)
    powers = num_actions ** np.arange(num_contexts)
    return (codes[:, None] // powers[None, :]) % num_actions


class ExplicitHedge(BaseLearner):
    """Hedge with an explicit weight per expert.  Exponential in size; used
    as a reference for the efficient learners."""

    kind = "explicit"

    def __init__(self, num_contexts: int, num_actions: int, learning_rate: float,
                 prior: Optional[np.ndarray] = None):
        size = num_actions ** num_contexts
        if size > EXPLICIT_BUDGET:
            raise OracleBudgetError(f"{num_actions}**{num_contexts} experts exceeds {EXPLICIT_BUDGET}")
        self.num_contexts = num_contexts
        self.num_actions = num_actions
        self.learning_rate = float(learning_rate)
        self.experts = expert_table(num_contexts, num_actions)
        if prior is None:
            self.log_theta = np.full(size, -math.log(size))
        else:
            prior = np.asarray(prior, dtype=float)
            if prior.shape == (num_contexts, num_actions):
                prior = product_prior(prior, self.experts)
            if prior.shape != (size,) or prior.min() <= 0:
                raise ValueError("prior must be a positive vector over experts or an (N, K) row prior")
            self.log_theta = _log_normalize(np.log(prior))

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.log_theta)

    def query(self, x) -> np.ndarray:
        return np.bincount(self.experts[:, x], weights=self.theta, minlength=self.num_actions)

    def update(self, x, g) -> None:
        g = _check_gradient(g, self.num_actions)
        self.log_theta = _log_normalize(self.log_theta - self.learning_rate * g[self.experts[:, x]])

    def update_experts(self, nu) -> None:
        """Apply ``theta <- theta * exp(-learning_rate * nu) / Z`` directly."""
        self.log_theta = _log_normalize(self.log_theta - self.learning_rate * np.asarray(nu, dtype=float))

    def state_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "kind": self.kind,
            "dims": {"num_contexts": self.num_contexts, "num_actions": self.num_actions},
            "learning_rate": self.learning_rate,
            "log_weights": self.log_theta.tolist(),
        }


def product_prior(rows: np.ndarray, experts: np.ndarray) -> np.ndarray:
    """Expert prior ``theta(e) = prod_x rows[x, e(x)]``."""
    rows = np.asarray(rows, dtype=float)
    return np.prod(rows[np.arange(rows.shape[0]), experts], axis=1)


def expert_gradient(lam: np.ndarray, experts: np.ndarray) -> np.ndarray:
    """``nu(e) = sum_x lam[x, e(x)]`` for one group's ``(N, K)`` gradient."""
    lam = np.asarray(lam, dtype=float)
    return lam[np.arange(lam.shape[0]), experts].sum(axis=1)


def relative_entropy(a, b) -> float:
    """``sum_e a(e) ln(a(e) / b(e))`` with ``0 ln 0 = 0``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = a > 0
    if np.any(b[pos] <= 0):
        raise DivergenceUndefined("first distribution puts mass where the second has none")
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])))


def phi_tabular(comparator, prior=None) -> float:
    """Complexity term for a per-context comparator against a per-context prior.

    ``comparator`` is an ``(M, N, K)`` policy; its product-form expert
    weights give a divergence that factorises over contexts.  ``prior``
    defaults to uniform rows.
    """
    comparator = np.asarray(comparator, dtype=float)
    m, n, k = comparator.shape
    if prior is None:
        prior = np.full((n, k), 1.0 / k)
    prior = np.asarray(prior, dtype=float)
    return sum(relative_entropy(comparator[i, x], prior[x]) for i in range(m) for x in range(n))


def learner_from_state(state: dict) -> BaseLearner:
    """Rebuild a learner from :meth:`state_dict` output."""
    if state.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {state.get('version')!r}")
    n = state["dims"]["num_contexts"]
    k = state["dims"]["num_actions"]
    lr = state["learning_rate"]
    logw = np.asarray(state["log_weights"], dtype=float)
    kind = state["kind"]
    if kind == "tabular":
        learner = TabularHedge(n, k, lr)
        learner.log_weights = logw.reshape(n, k).copy()
    elif kind == "fixedshare":
        learner = FixedShare(n, k, lr, state["share_rate"])
        learner.log_weights = logw.reshape(n, k).copy()
    elif kind == "explicit":
        learner = ExplicitHedge(n, k, lr)
        learner.log_theta = logw.copy()
    else:
        raise ValueError(f"unknown learner kind {kind!r}")
    return learner


def dumps_state(learner: BaseLearner) -> str:
    return json.dumps(learner.state_dict())


def loads_state(text: str) -> BaseLearner:
    return learner_from_state(json.loads(text))

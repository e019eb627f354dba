"""Learning-rate ensembles and online-to-batch fair classification.

With full information the tuning parameter need not be chosen: copies of
the meta-algorithm run side by side with exponentially spaced tuning and a
master Hedge mixes their fair rows.  A mixture of fair policies for one
target is fair, so the combined policy keeps exact parity.  Averaging the
per-trial policies over a training set gives a fair batch classifier.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import Dims, check_target
from .few import Few, FewConfig, make_few


@dataclass
class StackedState:
    fair: np.ndarray        # (J, M, N, K) fair policies of every copy
    beta: np.ndarray        # (J,)
    kappa_up: np.ndarray    # (J, K)
    kappa_down: np.ndarray  # (J, K)
    target: np.ndarray


class StackedTabularFew:
    """Several full-information copies over per-context Hedge, sharing the
    target and instance stream, advanced together in one array pass.

    Numerically the same as running each copy through :class:`Few` with a
    :class:`~fairbandit.base.TabularHedge` per group; kept because the
    ensemble runs tens of copies per trial.
    """

    def __init__(self, dims: Dims, learning_rates: Sequence[float]):
        self.dims = dims
        self.learning_rates = np.asarray(learning_rates, dtype=float)
        shape = (len(self.learning_rates),) + dims.policy_shape
        self.log_weights = np.full(shape, -math.log(dims.num_actions))

    def begin_trial(self, target) -> StackedState:
        mu = check_target(target, self.dims)
        k = self.dims.num_actions
        xi = np.exp(self.log_weights)
        omega = np.einsum("in,jina->jia", mu, xi)
        top = omega.max(axis=1)
        delta = top[:, None, :] - omega
        beta = (top - omega.min(axis=1)).sum(axis=1)
        psi = (xi + delta[:, :, None, :]) / (1.0 + beta)[:, None, None, None]
        pi = psi + (1.0 - psi.sum(axis=-1, keepdims=True)) / k
        pi /= pi.sum(axis=-1, keepdims=True)
        return StackedState(pi, beta, omega.argmax(axis=1), omega.argmin(axis=1), mu)

    def feedback_full(self, state: StackedState, i: int, x: int, losses) -> None:
        if state.target[i, x] == 0:
            raise ValueError(f"context {x} is outside the support of group {i}")
        groups = np.arange(self.dims.num_groups)[None, :, None]
        sign = (state.kappa_up[:, None, :] == groups).astype(float) - (state.kappa_down[:, None, :] == groups)
        grad = state.target[None, :, :, None] * sign[:, :, None, :]
        grad[state.beta <= 1, i, x, :] += np.asarray(losses, dtype=float)
        lw = self.log_weights - self.learning_rates[:, None, None, None] * grad
        m = lw.max(axis=-1, keepdims=True)
        self.log_weights = lw - (m + np.log(np.exp(lw - m).sum(axis=-1, keepdims=True)))


class DoublingEnsemble:
    """Full-information copies with tuning ``eta_min * 2**j`` mixed by Hedge.

    With the default per-context Hedge base the copies run stacked in one
    array (``stacked=True``); otherwise each copy is a separate :class:`Few`.
    """

    def __init__(self, dims: Dims, base: str = "tabular", num_copies: Optional[int] = None,
                 eta_min: Optional[float] = None, master_rate: Optional[float] = None,
                 initial_weights: Optional[Sequence[float]] = None, share_rate: Optional[float] = None,
                 prior: Optional[np.ndarray] = None, stacked: Optional[bool] = None, mode: str = "full"):
        if mode != "full":
            raise ValueError("the ensemble needs full-information feedback")
        t, k = dims.horizon, dims.num_actions
        self.dims = dims
        self.num_copies = num_copies or math.ceil(math.log2(t)) + 1
        eta_min = eta_min if eta_min is not None else 1.0 / math.sqrt(k * t)
        cap = math.sqrt(t / k)
        self.etas = [min(eta_min * 2.0 ** j, cap) for j in range(self.num_copies)]
        if stacked is None:
            stacked = base == "tabular" and prior is None
        self.stack: Optional[StackedTabularFew] = None
        self.copies: List[Few] = []
        if stacked:
            if base != "tabular" or prior is not None:
                raise ValueError("stacked copies support only the uniform per-context Hedge base")
            self.stack = StackedTabularFew(dims, [eta / math.sqrt(k * t) for eta in self.etas])
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self.copies = [
                    make_few(FewConfig(dims, eta, mode="full"), base, share_rate, prior) for eta in self.etas
                ]
        if master_rate is None:
            master_rate = math.sqrt(8.0 * math.log(self.num_copies) / t)
        self.master_rate = master_rate
        if initial_weights is None:
            self.log_weights = np.full(self.num_copies, -math.log(self.num_copies))
        else:
            w = np.asarray(initial_weights, dtype=float)
            with np.errstate(divide="ignore"):
                self.log_weights = np.log(w / w.sum())

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    def begin_trial(self, target):
        if self.stack is not None:
            return self.stack.begin_trial(target)
        return [few.begin_trial(target) for few in self.copies]

    def copy_rows(self, states, i: int, x: int) -> np.ndarray:
        """``(J, K)`` fair rows of every copy at instance ``(i, x)``."""
        if self.stack is not None:
            return states.fair[:, i, x]
        return np.array([few.policy_row(ts, i, x) for few, ts in zip(self.copies, states)])

    def combined_row(self, states, i: int, x: int) -> np.ndarray:
        return self.weights @ self.copy_rows(states, i, x)

    def combined_policy(self, states) -> np.ndarray:
        if self.stack is not None:
            stacked = states.fair
        else:
            n = self.dims.num_contexts
            stacked = np.array([few.dense_policy(ts, n) for few, ts in zip(self.copies, states)])
        return np.tensordot(self.weights, stacked, axes=1)

    def master_update(self, copy_losses) -> None:
        lw = self.log_weights - self.master_rate * np.asarray(copy_losses, dtype=float)
        m = lw.max()
        self.log_weights = lw - (m + math.log(np.exp(lw - m).sum()))

    def feedback(self, states, i: int, x: int, losses) -> None:
        losses = np.asarray(losses, dtype=float)
        if self.stack is not None:
            copy_losses = states.fair[:, i, x] @ losses
            self.stack.feedback_full(states, i, x, losses)
        else:
            copy_losses = []
            for few, ts in zip(self.copies, states):
                row = few.observe_instance(ts, i, x)
                copy_losses.append(float(row @ losses))
                few.feedback_full(ts, losses)
        self.master_update(copy_losses)

    def step(self, target, i: int, x: int, losses) -> np.ndarray:
        """One full-information trial; returns the combined fair row played."""
        states = self.begin_trial(target)
        row = self.combined_row(states, i, x)
        self.feedback(states, i, x, losses)
        return row


class AveragedPolicy:
    """Streaming arithmetic mean of per-trial policies."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.count = 0

    def add(self, policy: np.ndarray) -> None:
        self.total += policy
        self.count += 1

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no policies averaged yet")
        return self.total / self.count


@dataclass
class FiniteDistribution:
    """A distribution over (group, context, loss-vector) with finite support."""

    probs: np.ndarray
    groups: np.ndarray
    contexts: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.groups = np.asarray(self.groups, dtype=int)
        self.contexts = np.asarray(self.contexts, dtype=int)
        self.losses = np.asarray(self.losses, dtype=float)
        if abs(self.probs.sum() - 1) > 1e-12 or self.probs.min() < 0:
            raise ValueError("probs must form a distribution")

    def expected_cost(self, num_groups: int, num_contexts: int) -> np.ndarray:
        """``C[i, x, a] = E[[i_t = i][x_t = x] l_t(a)]``."""
        cost = np.zeros((num_groups, num_contexts, self.losses.shape[1]))
        np.add.at(cost, (self.groups, self.contexts), self.probs[:, None] * self.losses)
        return cost

    def sample(self, rng: np.random.Generator, size: int) -> list:
        idx = rng.choice(len(self.probs), size=size, p=self.probs)
        return [(int(self.groups[j]), int(self.contexts[j]), self.losses[j]) for j in idx]


def generalisation_regret(policy, comparator, dist: FiniteDistribution) -> float:
    """Exact ``E[sum_a (pi - comparator)(i, x, a) l(a)]`` under ``dist``."""
    policy = np.asarray(policy, dtype=float)
    comparator = np.asarray(comparator, dtype=float)
    diff = policy[dist.groups, dist.contexts] - comparator[dist.groups, dist.contexts]
    return float(np.sum(dist.probs * np.einsum("sa,sa->s", diff, dist.losses)))


def train_fair_classifier(dataset: Sequence, target, base: str = "tabular", **ensemble_kwargs) -> np.ndarray:
    """Run the full-information ensemble over ``dataset`` with a fixed target
    and return the average of the per-trial fair policies.

    ``dataset`` is a sequence of ``(group, context, loss_vector)``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    target = check_target(target)
    m, n = target.shape
    k = len(dataset[0][2])
    dims = Dims(m, n, k, len(dataset))
    ens = DoublingEnsemble(dims, base=base, **ensemble_kwargs)
    avg = AveragedPolicy(dims.policy_shape)
    for i, x, losses in dataset:
        states = ens.begin_trial(target)
        avg.add(ens.combined_policy(states))
        ens.feedback(states, int(i), int(x), losses)
    return avg.mean


def policy_to_json(policy: np.ndarray) -> str:
    policy = np.asarray(policy, dtype=float)
    m, n, k = policy.shape
    return json.dumps({
        "dims": {"num_groups": m, "num_contexts": n, "num_actions": k},
        "probs": policy.ravel().tolist(),
    })


def policy_from_json(text: str) -> np.ndarray:
    data = json.loads(text)
    d = data["dims"]
    return np.asarray(data["probs"], dtype=float).reshape(d["num_groups"], d["num_contexts"], d["num_actions"])

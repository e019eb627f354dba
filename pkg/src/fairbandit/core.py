"""Targets, policies and the statistical-parity machinery.

Groups, contexts and actions are dense integer indices.  A target is an
``(M, N)`` row-stochastic array; ``target[i, x]`` is the probability of
context ``x`` given group ``i``.  A policy is an ``(M, N, K)`` array whose
``(i, x)`` slices are action distributions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

ROW_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes disagree with the problem dimensions."""


@dataclass(frozen=True)
class Dims:
    """Problem dimensions: groups, contexts, actions and horizon."""

    num_groups: int
    num_contexts: int
    num_actions: int
    horizon: int = 1

    def __post_init__(self):
        for name in ("num_groups", "num_contexts", "num_actions", "horizon"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")

    @property
    def target_shape(self):
        return (self.num_groups, self.num_contexts)

    @property
    def policy_shape(self):
        return (self.num_groups, self.num_contexts, self.num_actions)


class TargetViolation(NamedTuple):
    row: int
    kind: str  # "sum" or "negative" or "above-one"
    deviation: float


def validate_target(mass, dims: Optional[Dims] = None, tol: float = ROW_TOL) -> list:
    """Check that ``mass`` is a valid target.

    Returns a list of :class:`TargetViolation`; an empty list means the
    target is valid.  A shape mismatch against ``dims`` raises
    :class:`DimensionError`.
    """
    mass = np.asarray(mass, dtype=float)
    if mass.ndim != 2:
        raise DimensionError(f"target must be 2-d, got shape {mass.shape}")
    if dims is not None and mass.shape != dims.target_shape:
        raise DimensionError(f"target shape {mass.shape} != {dims.target_shape}")
    report = []
    for i, row in enumerate(mass):
        low = row.min()
        if low < 0:
            report.append(TargetViolation(i, "negative", float(-low)))
        high = row.max()
        if high > 1:
            report.append(TargetViolation(i, "above-one", float(high - 1)))
        dev = abs(row.sum() - 1.0)
        if dev > tol:
            report.append(TargetViolation(i, "sum", float(dev)))
    return report


def check_target(mass, dims: Optional[Dims] = None) -> np.ndarray:
    """Return ``mass`` as a float array or raise ``ValueError`` if invalid."""
    mass = np.asarray(mass, dtype=float)
    if (mass.ndim == 2 and (dims is None or mass.shape == dims.target_shape)
            and mass.min() >= 0 and mass.max() <= 1
            and np.all(np.abs(mass.sum(axis=1) - 1.0) <= ROW_TOL)):
        return mass
    report = validate_target(mass, dims)
    if report:
        raise ValueError(f"invalid target: {report}")
    return mass


def validate_policy(probs, dims: Optional[Dims] = None, tol: float = ROW_TOL) -> bool:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 3:
        raise DimensionError(f"policy must be 3-d, got shape {probs.shape}")
    if dims is not None and probs.shape != dims.policy_shape:
        raise DimensionError(f"policy shape {probs.shape} != {dims.policy_shape}")
    in_range = probs.min() >= -tol and probs.max() <= 1 + tol
    return bool(in_range and np.all(np.abs(probs.sum(axis=2) - 1.0) <= tol))


def is_action_dist(p, tol: float = ROW_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(p.ndim == 1 and p.min() >= -tol and p.max() <= 1 + tol and abs(p.sum() - 1) <= tol)


def support(target, i: int) -> np.ndarray:
    """Contexts with non-zero mass for group ``i``.

    Uses an exact zero test: targets are inputs, not computed values.
    """
    return np.flatnonzero(np.asarray(target)[i] != 0)


RowProvider = Callable[[int, int], np.ndarray]


def group_action_marginal(policy: Union[np.ndarray, RowProvider], target) -> np.ndarray:
    """Per-group action marginals ``omega[i, a] = sum_x mu[i, x] pi[i, x, a]``.

    ``policy`` is either a dense ``(M, N, K)`` array or a callable
    ``(i, x) -> row``; the callable is only evaluated on the support of
    each group.
    """
    target = np.asarray(target, dtype=float)
    if callable(policy):
        rows = []
        for i in range(target.shape[0]):
            xs = support(target, i)
            stacked = np.array([policy(i, int(x)) for x in xs], dtype=float)
            rows.append(target[i, xs] @ stacked)
        return np.array(rows)
    policy = np.asarray(policy, dtype=float)
    if policy.shape[:2] != target.shape:
        raise DimensionError(f"policy shape {policy.shape} incompatible with target {target.shape}")
    return np.einsum("ix,ixa->ia", target, policy)


def marginal_spread(omega) -> float:
    """Largest gap between two groups' selection probabilities of one action."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape[0] < 2:
        return 0.0
    return float(np.max(omega.max(axis=0) - omega.min(axis=0)))


def parity_violation(policy, target) -> float:
    """``max_{i, i', a} |omega[i, a] - omega[i', a]|``; zero iff the policy is fair."""
    return marginal_spread(group_action_marginal(policy, target))


def uniform_target(num_groups: int, num_contexts: int) -> np.ndarray:
    return np.full((num_groups, num_contexts), 1.0 / num_contexts)


def uniform_policy(num_groups: int, num_contexts: int, num_actions: int) -> np.ndarray:
    return np.full((num_groups, num_contexts, num_actions), 1.0 / num_actions)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for the sub-stream ``stream`` of ``seed``.

    Streams with different index tuples are independent, so per-group or
    per-cell generators do not depend on execution order.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def sample_action(row: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from the distribution ``row``."""
    cdf = np.cumsum(row)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(row) - 1))


def random_target(rng: np.random.Generator, num_groups: int, num_contexts: int,
                  zero_prob: float = 0.0) -> np.ndarray:
    """Random row-stochastic target; entries are zeroed with ``zero_prob``
    (each row keeps at least one non-zero entry)."""
    mass = rng.random((num_groups, num_contexts)) + 1e-3
    if zero_prob > 0:
        drop = rng.random((num_groups, num_contexts)) < zero_prob
        keep = rng.integers(num_contexts, size=num_groups)
        drop[np.arange(num_groups), keep] = False
        mass[drop] = 0.0
    return mass / mass.sum(axis=1, keepdims=True)


def random_policy(rng: np.random.Generator, shape: Sequence[int], concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(shape[-1], concentration), size=tuple(shape[:-1]))

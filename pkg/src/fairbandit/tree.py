"""Hierarchical context decomposition for massive context spaces.

The true context space is ``[0, 1)``, decomposed into dyadic intervals.
Nodes use heap numbering: the root is 1 and node ``v`` has children
``2v`` and ``2v + 1``; node ``v`` at depth ``d`` covers
``[j / 2**d, (j + 1) / 2**d)`` with ``j = v - 2**d``.

Each group owns a :class:`TreeHedge`, a Hedge learner whose experts label
every node of the full tree with an action.  The prior labels the root
uniformly and copies a parent's label to each child with probability
``1 - switch_prob`` (otherwise it redraws uniformly).  Queries and updates
run exact sum-product on the grown part of the tree only, since ungrown
nodes carry no evidence.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .base import BaseLearner, _check_gradient

DEFAULT_MAX_DEPTH = 20


class GrowError(ValueError):
    """Attempt to grow a node that is not a leaf of the subtree."""


def node_depth(v: int) -> int:
    return int(v).bit_length() - 1


def node_interval(v: int) -> Tuple[float, float]:
    d = node_depth(v)
    j = v - (1 << d)
    scale = 1.0 / (1 << d)
    return j * scale, (j + 1) * scale


def path_to(v: int) -> List[int]:
    """Nodes from the root down to ``v`` inclusive."""
    out = []
    while v >= 1:
        out.append(v)
        v >>= 1
    return out[::-1]


def required_sample_size(horizon: int, height: int, epsilon: float) -> int:
    """Smallest ``n`` with ``n >= 8 ln(2T) (h / epsilon)**2``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if horizon < 1 or height < 1:
        raise ValueError("horizon and height must be positive")
    return math.ceil(8.0 * math.log(2.0 * horizon) * (height / epsilon) ** 2)


class TreeHedge(BaseLearner):
    """Hedge over node labelings of a dyadic tree, restricted to a growing subtree."""

    kind = "tree"

    def __init__(self, num_actions: int, learning_rate: float, switch_prob: float = 0.1,
                 max_depth: int = DEFAULT_MAX_DEPTH):
        if not 0 < switch_prob <= 1:
            raise ValueError("switch_prob must lie in (0, 1]")
        self.num_actions = num_actions
        self.learning_rate = float(learning_rate)
        self.switch_prob = float(switch_prob)
        self.max_depth = max_depth
        self.grown = set()
        self.log_pot: Dict[int, np.ndarray] = {}
        self._up: Dict[int, np.ndarray] = {}
        self._dirty = set()

    # structure

    def is_leaf(self, v: int) -> bool:
        return v not in self.grown and (v == 1 or (v >> 1) in self.grown)

    def in_subtree(self, v: int) -> bool:
        return v == 1 or (v >> 1) in self.grown

    def leaves(self) -> np.ndarray:
        stack, out = [1], []
        while stack:
            v = stack.pop()
            if v in self.grown:
                stack.extend((2 * v, 2 * v + 1))
            else:
                out.append(v)
        return np.array(sorted(out), dtype=np.int64)

    def locate(self, x_star: float) -> int:
        """The leaf of the subtree whose interval contains ``x_star``."""
        if not 0.0 <= x_star < 1.0:
            raise ValueError(f"true context {x_star} outside [0, 1)")
        v = 1
        while v in self.grown:
            lo, hi = node_interval(v)
            v = 2 * v + (x_star >= 0.5 * (lo + hi))
        return v

    def can_grow(self, v: int) -> bool:
        return node_depth(v) < self.max_depth

    def grow(self, v: int) -> bool:
        """Add the children of leaf ``v``; returns False at the depth cap."""
        if not self.is_leaf(v):
            raise GrowError(f"node {v} is not a leaf of the subtree")
        if not self.can_grow(v):
            return False
        self.grown.add(v)
        self._mark(v)
        return True

    # inference

    def _prop(self, vec: np.ndarray) -> np.ndarray:
        """Apply the edge transition ``(1 - g) I + (g / K) 1 1^T``."""
        g = self.switch_prob
        return (1.0 - g) * vec + g * vec.sum() / self.num_actions

    def _pot(self, v: int) -> np.ndarray:
        lp = self.log_pot.get(v)
        if lp is None:
            return np.ones(self.num_actions)
        return np.exp(lp - lp.max())

    def _mark(self, v: int) -> None:
        while v >= 1 and v not in self._dirty:
            self._dirty.add(v)
            v >>= 1

    def _upward(self, v: int) -> np.ndarray:
        """Normalised evidence from the subtree rooted at ``v``, as a
        function of ``v``'s label."""
        if v in self._up and v not in self._dirty:
            return self._up[v]
        vec = self._pot(v)
        if v in self.grown:
            vec = vec * self._prop(self._upward(2 * v)) * self._prop(self._upward(2 * v + 1))
        vec = vec / vec.sum()
        self._up[v] = vec
        self._dirty.discard(v)
        return vec

    def query(self, v) -> np.ndarray:
        v = int(v)
        if not self.in_subtree(v):
            raise ValueError(f"node {v} is not in the subtree")
        path = path_to(v)
        down = np.full(self.num_actions, 1.0 / self.num_actions)
        for u, c in zip(path[:-1], path[1:]):
            inc = down * self._pot(u)
            sibling = c ^ 1
            inc = inc * self._prop(self._upward(sibling))
            down = self._prop(inc / inc.sum())
        marg = down * self._upward(v)
        return marg / marg.sum()

    def update(self, v, g) -> None:
        v = int(v)
        g = _check_gradient(g, self.num_actions)
        step = -self.learning_rate * g
        lp = self.log_pot.get(v)
        lp = step if lp is None else lp + step
        self.log_pot[v] = lp - lp.max()
        self._mark(v)

    def state_dict(self) -> dict:
        nodes = []
        for v in sorted(self.grown | set(self.leaves().tolist())):
            lo, hi = node_interval(v)
            lp = self.log_pot.get(v)
            nodes.append({
                "id": v, "lo": lo, "hi": hi, "grown": v in self.grown,
                "log_potential": None if lp is None else lp.tolist(),
            })
        return {
            "version": 1, "kind": self.kind,
            "dims": {"num_actions": self.num_actions, "max_depth": self.max_depth},
            "learning_rate": self.learning_rate, "switch_prob": self.switch_prob,
            "nodes": nodes,
        }

    @classmethod
    def from_state(cls, state: dict) -> "TreeHedge":
        learner = cls(state["dims"]["num_actions"], state["learning_rate"], state["switch_prob"],
                      state["dims"]["max_depth"])
        for node in state["nodes"]:
            if node["grown"]:
                learner.grown.add(node["id"])
            if node["log_potential"] is not None:
                learner.log_pot[node["id"]] = np.asarray(node["log_potential"], dtype=float)
        return learner


Cdf = Callable[[float], float]


class HierarchicalLearner:
    """Per-group subtrees plus the target they induce.

    With ``cdfs`` (one cumulative distribution function per group) the
    target is known and a node's mass is ``cdf(hi) - cdf(lo)``; the
    subtree of the current instance's group grows at the end of every
    trial.  Without ``cdfs`` masses are estimated: a leaf grows only after
    ``sample_threshold`` of its group's instances have landed in it, and
    the split proportions observed at that moment define the children's
    masses.
    """

    def __init__(self, num_groups: int, num_actions: int, learning_rate: float,
                 switch_prob: float = 0.1, max_depth: int = DEFAULT_MAX_DEPTH,
                 cdfs: Optional[Sequence[Cdf]] = None, sample_threshold: Optional[int] = None):
        if cdfs is None and sample_threshold is None:
            raise ValueError("need either known cdfs or a sample threshold")
        if cdfs is not None and len(cdfs) != num_groups:
            raise ValueError("one cdf per group required")
        self.num_groups = num_groups
        self.num_actions = num_actions
        self.max_depth = max_depth
        self.cdfs = list(cdfs) if cdfs is not None else None
        self.sample_threshold = sample_threshold
        self.learners = [TreeHedge(num_actions, learning_rate, switch_prob, max_depth)
                         for _ in range(num_groups)]
        self.counts: List[Dict[int, int]] = [dict() for _ in range(num_groups)]
        self.left_counts: List[Dict[int, int]] = [dict() for _ in range(num_groups)]
        self.proportions: List[Dict[int, float]] = [dict() for _ in range(num_groups)]
        self.est_mass: List[Dict[int, float]] = [{1: 1.0} for _ in range(num_groups)]

    @property
    def mode(self) -> str:
        return "known" if self.cdfs is not None else "empirical"

    @property
    def height(self) -> int:
        return self.max_depth

    def locate_leaf(self, i: int, x_star: float) -> int:
        return self.learners[i].locate(x_star)

    def leaves(self, i: int) -> np.ndarray:
        return self.learners[i].leaves()

    def node_mass(self, i: int, v: int) -> float:
        if self.cdfs is not None:
            lo, hi = node_interval(v)
            return float(self.cdfs[i](hi) - self.cdfs[i](lo))
        return self.est_mass[i].get(v, 0.0)

    def leaf_target(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        leaves = self.leaves(i)
        return leaves, np.array([self.node_mass(i, int(v)) for v in leaves])

    def target(self) -> list:
        return [self.leaf_target(i) for i in range(self.num_groups)]

    def bp_query(self, i: int, leaf: int) -> np.ndarray:
        return self.learners[i].query(leaf)

    def bp_update(self, i: int, leaf: int, g) -> None:
        self.learners[i].update(leaf, g)

    def grow(self, i: int, leaf: int) -> bool:
        """Grow ``leaf`` in group ``i``'s subtree.  Returns False (without
        change) at the depth cap or, in empirical mode, before the leaf has
        seen ``sample_threshold`` instances."""
        learner = self.learners[i]
        if not learner.is_leaf(leaf):
            raise GrowError(f"node {leaf} is not a leaf of group {i}'s subtree")
        if not learner.can_grow(leaf):
            return False
        if self.cdfs is None:
            count = self.counts[i].get(leaf, 0)
            if count < self.sample_threshold:
                return False
            p_left = self.left_counts[i].get(leaf, 0) / count
            parent = self.est_mass[i].get(leaf, 0.0)
            for child, p in ((2 * leaf, p_left), (2 * leaf + 1, 1.0 - p_left)):
                self.proportions[i][child] = p
                self.est_mass[i][child] = p * parent
        return learner.grow(leaf)

    def record_and_maybe_grow(self, i: int, x_star: float) -> bool:
        leaf = self.locate_leaf(i, x_star)
        lo, hi = node_interval(leaf)
        self.counts[i][leaf] = self.counts[i].get(leaf, 0) + 1
        if x_star < 0.5 * (lo + hi):
            self.left_counts[i][leaf] = self.left_counts[i].get(leaf, 0) + 1
        return self.grow(i, leaf)

    def end_trial(self, i: int, x_star: float) -> bool:
        if self.cdfs is not None:
            return self.grow(i, self.locate_leaf(i, x_star))
        return self.record_and_maybe_grow(i, x_star)

    def state_dict(self) -> dict:
        groups = []
        for i, learner in enumerate(self.learners):
            state = learner.state_dict()
            for node in state["nodes"]:
                v = node["id"]
                node["count"] = self.counts[i].get(v, 0)
                node["left_count"] = self.left_counts[i].get(v, 0)
                node["proportion"] = self.proportions[i].get(v)
                node["mass"] = self.node_mass(i, v)
            groups.append(state)
        return {"version": 1, "kind": "hierarchical", "mode": self.mode,
                "sample_threshold": self.sample_threshold, "groups": groups}


def true_leaf_marginal(policy_row: Callable[[int, int], np.ndarray], learner: HierarchicalLearner,
                       cdfs: Sequence[Cdf]) -> np.ndarray:
    """Per-group action marginals of the induced true-context policy under
    the true distributions ``cdfs``; each leaf's row applies to its whole
    interval."""
    rows = []
    for i in range(learner.num_groups):
        total = np.zeros(learner.num_actions)
        for v in learner.leaves(i):
            lo, hi = node_interval(int(v))
            mass = cdfs[i](hi) - cdfs[i](lo)
            if mass > 0:
                total += mass * policy_row(i, int(v))
        rows.append(total)
    return np.array(rows)

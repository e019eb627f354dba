"""
Turning an unfair policy into a fair one
========================================

Two groups, two contexts, two actions.  The raw policy sends group 0 to
action 0 and group 1 to action 1, so the groups' action marginals differ
by 1.  The processing step raises each group toward the largest marginal
and spreads the leftover mass uniformly; the result has exact parity.
"""

import numpy as np

from fairbandit.base import BaseLearner
from fairbandit.core import parity_violation
from fairbandit.few import Few


class Fixed(BaseLearner):
    # a learner that always answers with preset rows
    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)
        self.num_actions = self.rows.shape[1]

    def query(self, x):
        return self.rows[x]

    def update(self, x, g):
        pass


target = np.full((2, 2), 0.5)
raw = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
print("raw parity violation:", parity_violation(raw, target))

few = Few([Fixed(raw[0]), Fixed(raw[1])])
ts = few.begin_trial(target)
print("group marginals:\n", ts.omega)
print("deficits:\n", ts.delta)
print("budget:", ts.beta)

fair = few.dense_policy(ts, 2)
print("fair rows of group 0:\n", fair[0])
print("fair parity violation:", parity_violation(fair, target))

# a milder disagreement keeps more of the raw preference
mild = np.array([[[0.6, 0.4]] * 2, [[0.4, 0.6]] * 2])
few = Few([Fixed(mild[0]), Fixed(mild[1])])
ts = few.begin_trial(target)
print("\nmild budget:", ts.beta)
print("mild fair row:", few.policy_row(ts, 0, 0))

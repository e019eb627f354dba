"""
Fair and unfair bandits on opposed preferences
==============================================

Group 0 does best with action 0 and group 1 with action 1.  A separate
bandit learner per group exploits this and ends up treating the groups
very differently.  The fair learner keeps the groups' action marginals
equal at every trial and competes with the best fair policy instead.
"""

import math

import numpy as np

from fairbandit.core import Dims
from fairbandit.few import FewConfig, make_few
from fairbandit.harness import (FewAgent, best_fair_comparator, exp4_per_group, parity_audit, regret, run,
                                stochastic_script)

T = 4000
target = np.full((2, 2), 0.5)
means = np.array([[[0.1, 0.9], [0.1, 0.9]], [[0.9, 0.1], [0.9, 0.1]]])
script = stochastic_script(0, target, means, T)
dims = Dims(2, 2, 2, T)

fair = run(FewAgent(make_few(FewConfig(dims, eta=1.0))), script, seed=0)
unfair = run(exp4_per_group(dims), script, seed=0)
best = best_fair_comparator(script)

print("fair learner    loss %.1f  parity max %.2e" % (fair.cum_exp_loss, parity_audit(fair)["parity_max"]))
print("per-group Exp4  loss %.1f  parity mean %.3f" % (unfair.cum_exp_loss, parity_audit(unfair)["parity_mean"]))
print("regret of the fair learner against the best fair policy: %.1f" % regret(fair, best, script))

bound = (8 + 4 * math.log(2)) * math.sqrt(2 * T)
print("regret bound at eta = 1: %.1f" % bound)

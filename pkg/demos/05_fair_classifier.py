"""
A fair classifier from an online learner
========================================

Running the full-information ensemble over a sample and averaging its
per-trial policies gives a batch classifier.  Each per-trial policy is
fair for the fixed target, so the average is too, and its expected loss
approaches that of the best fair policy as the sample grows.
"""

import numpy as np

from fairbandit.core import make_rng, parity_violation
from fairbandit.harness import solve_fair_lp
from fairbandit.meta import generalisation_regret, policy_to_json, train_fair_classifier
from fairbandit.verify import classification_distribution

dist = classification_distribution()
target = np.full((2, 2), 0.5)
best = solve_fair_lp(dist.expected_cost(2, 2), target)
print("best fair policy:\n", np.round(best, 3))

for T in (500, 2000, 8000):
    data = dist.sample(make_rng(0, T), T)
    policy = train_fair_classifier(data, target)
    print(f"T={T:5d}  regret {generalisation_regret(policy, best, dist):.4f}  "
          f"parity {parity_violation(policy, target):.1e}")

print("\nexported:", policy_to_json(policy)[:80], "...")

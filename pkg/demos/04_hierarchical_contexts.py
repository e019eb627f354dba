"""
Continuous contexts through a growing tree
==========================================

True contexts live in [0, 1).  Each group grows its own dyadic subtree;
the leaves act as contexts and the target gives each leaf its estimated
mass.  Parity is exact for the estimated masses and approximate for the
true distributions, with the gap driven by the error of the estimated
split proportions.
"""

import numpy as np

from fairbandit.few import Few
from fairbandit.harness import TREE_CDFS, run_tree, tree_instance
from fairbandit.tree import HierarchicalLearner, required_sample_size
from fairbandit.verify import iid_tree_run, split_error

T, height = 3000, 3
for threshold in (30, 120, 480):
    result, hier = iid_tree_run(seed=0, horizon=T, height=height, threshold=threshold)
    leaves = [len(h.leaves()) for h in hier.learners]
    print(f"threshold {threshold:4d}: leaves per group {leaves}, "
          f"split error {split_error(hier):.3f}, worst true parity {np.nanmax(result.true_parity):.4f}")

print("\nsample size for T=1000, height 5, epsilon 0.25:", required_sample_size(1000, 5, 0.25))

# with known distributions the parity is exact for the true contexts too
groups, x_stars, losses = tree_instance(0, 500, 3)
hier = HierarchicalLearner(2, 3, 0.05, 0.1, max_depth=4, cdfs=TREE_CDFS)
res = run_tree(Few(hier.learners), hier, groups, x_stars, losses, 0, true_cdfs=TREE_CDFS)
print("known distributions, worst true parity:", np.nanmax(res.true_parity))

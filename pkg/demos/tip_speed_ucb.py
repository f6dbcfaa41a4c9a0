"""BayesOpt-UCB on the peak tip-speed task for one seed.

    python demos/tip_speed_ucb.py [seed]

Prints how far 60 acquisition trials improve on the best of 12 random ones.
"""

import sys

from softbo.arm import ArmModel, TaskSpec
from softbo.episode import PolicyEvaluator
from softbo.optimizers import BudgetedObjective, run_method

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
ev = PolicyEvaluator(ArmModel(), TaskSpec.for_kind("tip_speed", step_limit=30.0))
obj = BudgetedObjective(ev, 72, "bo-ucb", seed)
run_method("bo-ucb", obj, ev.dims, seed, {"kappa": 0.9, "n_init": 12})
random_best = obj.records[11].best_so_far
print(f"best of 12 random: {random_best:.2f} m/s")
print(f"after 60 more:     {obj.best:.2f} m/s  ({obj.best / random_best:.2f}x)")

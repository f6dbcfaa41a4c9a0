"""LogEI against random search on a known 11-dimensional quadratic.

    python demos/synthetic_optimum.py
"""

import numpy as np

from softbo.optimizers import BudgetedObjective, run_method

target = np.random.default_rng(7).uniform(0.2, 0.8, 11)


def J(x):
    return -float(np.sum((x - target) ** 2))


for method in ("random", "bo-lei"):
    bests = []
    for seed in range(3):
        obj = BudgetedObjective(J, 100, method, seed)
        run_method(method, obj, 11, seed)
        bests.append(obj.best)
    print(f"{method:7s} best after 100 trials: " + "  ".join(f"{b:8.4f}" for b in bests))

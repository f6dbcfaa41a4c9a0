"""Roll out one hand-written policy on each task and print its score.

    python demos/simulate_policy.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from softbo.arm import ArmModel, TaskSpec
from softbo.episode import PolicyEvaluator

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo_policy")
out.mkdir(parents=True, exist_ok=True)
model = ArmModel()
# alternate between the first and last binary action: a coherent swing
swing = np.array([0.999 if t % 2 else 0.0 for t in range(10)])

for kind, theta in [("throw", np.r_[swing, 0.75]), ("hammer", swing),
                    ("tip_speed", swing)]:
    task = TaskSpec.for_kind(kind, step_limit=30.0 if kind == "tip_speed" else None)
    ev = PolicyEvaluator(model, task)
    traj = ev.rollout(theta)
    traj.write_csv(out / f"{kind}.csv")
    print(f"{kind:10s} J = {ev(theta):9.3f}   peak tip speed {traj.dense_speeds.max():6.2f} m/s")
print(f"trajectories in {out}/")

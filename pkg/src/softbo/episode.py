"""Policy evaluation: theta -> pressure commands -> rollout -> objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm.model import ArmModel
from .arm.tasks import TaskSpec, Trajectory, rollout, score
from .policy import ActionSet, PolicyParams, build_action_set, decode, to_command_sequence


@dataclass
class PolicyEvaluator:
    """Callable objective over the unit box for one (model, task) pair."""

    model: ArmModel
    task: TaskSpec
    nominal: np.ndarray | None = None
    actions: ActionSet = field(init=False)

    def __post_init__(self):
        self.actions = build_action_set(self.task.P, self.model.rho_max)

    @property
    def dims(self) -> int:
        return self.task.dims

    def params(self, theta) -> PolicyParams:
        return PolicyParams(np.asarray(theta, float), self.task.H, self.task.uses_release)

    def commands(self, theta) -> tuple[np.ndarray, int | None]:
        idx, t_R = decode(self.params(theta), self.actions)
        cmds = to_command_sequence(idx, self.actions, self.task.step_limit, self.nominal)
        return cmds, t_R

    def rollout(self, theta) -> Trajectory:
        cmds, t_R = self.commands(theta)
        return rollout(self.model, self.task, cmds, release_step=t_R)

    def __call__(self, theta) -> float:
        return score(self.rollout(theta), self.task)

"""Disk-chain soft-arm simulator and episodic tasks."""

from .model import (
    ArmModel,
    ContinuumJoint,
    RigidLink,
    SimState,
    SimulationDiverged,
    actuation_torques,
    mechanical_energy,
    step,
    tip_kinematics,
)
from .tasks import (
    TaskSpec,
    Trajectory,
    hammer_objective,
    rollout,
    score,
    throw_objective,
    tip_speed_objective,
)

__all__ = [
    "ArmModel", "ContinuumJoint", "RigidLink", "SimState", "SimulationDiverged",
    "actuation_torques", "mechanical_energy", "step", "tip_kinematics",
    "TaskSpec", "Trajectory", "hammer_objective", "rollout", "score", "throw_objective",
    "tip_speed_objective",
]

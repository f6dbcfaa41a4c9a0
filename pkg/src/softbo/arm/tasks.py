"""Episodic rollouts and the throw / hammer / tip-speed objectives."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import (
    ArmModel,
    ObjectState,
    SimState,
    SimulationDiverged,
    actuation_torques,
    build_chain,
    relax_pressure,
    time_to_ground,
    tip_kinematics,
)

TASK_KINDS = ("throw", "hammer", "tip_speed")


@dataclass(frozen=True)
class TaskSpec:
    """Which objective to score, over what horizon and discretisation.

    Mass, goal and sensor fields default per task kind; see ``for_kind``.
    """

    kind: str = "throw"
    H: int = 10
    duration: float = 5.0
    P: int = 2
    dt: float = 0.005
    object_mass: float = 0.25
    goal_position: tuple[float, float, float] = (-0.5, 0.5, 0.0)
    sensor_radius: float = 0.25
    activation_force: float = 5.0
    tip_radius: float = 0.05
    contact_stiffness: float = 5000.0
    flight_timeout: float = 10.0
    momentum_sign: float = 1.0
    literal_release_indicator: bool = False
    step_limit: float | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not self.duration > 0 or not self.dt > 0:
            raise ValueError("duration and dt must be positive")
        if self.P < 2:
            raise ValueError("P must be >= 2")
        if self.step_limit is not None and not self.step_limit >= 0:
            raise ValueError("step_limit must be non-negative")

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "TaskSpec":
        defaults = {"throw": 0.25, "hammer": 2.0, "tip_speed": 0.0}
        if kind not in defaults:
            raise ValueError(f"unknown task kind {kind!r}")
        kw.setdefault("object_mass", defaults[kind])
        return cls(kind=kind, **kw)

    @property
    def t0(self) -> int:
        """First (1-based) step of the hammer distance penalty."""
        return math.ceil(round(0.7 * self.H, 9))

    @property
    def uses_release(self) -> bool:
        return self.kind == "throw"

    @property
    def dims(self) -> int:
        return self.H + (1 if self.uses_release else 0)

    @property
    def substeps(self) -> int:
        """Substeps per held command."""
        return max(1, int(round(self.duration / self.H / self.dt)))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["goal_position"] = list(self.goal_position)
        return d


@dataclass(eq=False)
class Trajectory:
    """Per-command records (``H`` rows) plus dense per-substep tip kinematics."""

    t: np.ndarray
    tip_pos: np.ndarray
    tip_vel: np.ndarray
    commands: np.ndarray
    obj_pos: np.ndarray
    released: np.ndarray
    force: np.ndarray
    dense_t: np.ndarray
    dense_pos: np.ndarray
    dense_vel: np.ndarray
    dense_force: np.ndarray
    release_step: int | None = None
    landing_point: np.ndarray | None = None
    landed: bool = False
    object_mass: float = 0.0

    @property
    def H(self) -> int:
        return len(self.t)

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.tip_vel, axis=1)

    @property
    def dense_speeds(self) -> np.ndarray:
        return np.linalg.norm(self.dense_vel, axis=1)

    @property
    def d_cube(self) -> float:
        """Horizontal distance of the landing point from the base."""
        if self.landing_point is None:
            return 0.0
        return float(np.hypot(self.landing_point[0], self.landing_point[1]))

    def equals(self, other: "Trajectory") -> bool:
        """Bitwise equality of every recorded array."""
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    def write_csv(self, path, dense: bool = False) -> None:
        """Columns: t, tip xyz, tip velocity xyz, speed, F, object xyz, released."""
        header = ["t", "tip_x", "tip_y", "tip_z", "tip_vx", "tip_vy", "tip_vz",
                  "speed", "F", "obj_x", "obj_y", "obj_z", "released"]
        if dense:
            t, pos, vel, frc = self.dense_t, self.dense_pos, self.dense_vel, self.dense_force
            obj = np.array([self.object_position(tt) for tt in t])
            rel = np.array([self.release_time is not None and tt >= self.release_time - 1e-12
                            for tt in t])
        else:
            t, pos, vel, frc = self.t, self.tip_pos, self.tip_vel, self.force
            obj, rel = self.obj_pos, self.released
        speed = np.linalg.norm(vel, axis=1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(t)):
                w.writerow([f"{t[i]:.4f}", *(f"{x:.6f}" for x in pos[i]),
                            *(f"{x:.6f}" for x in vel[i]), f"{speed[i]:.6f}",
                            f"{frc[i]:.6f}", *(f"{x:.6f}" for x in obj[i]), int(bool(rel[i]))])

    # filled by rollout for dense object reconstruction
    release_time: float | None = None
    release_pos: np.ndarray | None = None
    release_vel: np.ndarray | None = None
    gravity: float = 9.81

    def object_position(self, t: float) -> np.ndarray:
        """Object position at time ``t``; follows the tip until release."""
        if self.release_time is None or t < self.release_time:
            k = min(int(np.searchsorted(self.dense_t, t, side="right")) - 1, len(self.dense_t) - 1)
            return self.dense_pos[max(k, 0)]
        return ballistic_position(self.release_pos, self.release_vel, t - self.release_time,
                                  self.gravity)


def ballistic_position(p0, v0, tau: float, gravity: float) -> np.ndarray:
    """Closed-form projectile position, resting on z=0 after landing."""
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    t_land = time_to_ground(p0[2], v0[2], gravity)
    tau = min(max(tau, 0.0), t_land)
    out = p0 + v0 * tau
    out[2] -= 0.5 * gravity * tau * tau
    if tau >= t_land:
        out[2] = 0.0
    return out


def rollout(model: ArmModel, task: TaskSpec, commands, release_step: int | None = None) -> Trajectory:
    """Hold each of ``H`` commands for ``duration / H`` seconds from rest at q = 0.

    Chamber pressures start at the nominal ``rho_max / 2`` and lag the
    commands with the model's pressure time constant.

    Throw: the object leaves the tip at the end of command ``release_step``
    (default ``H``) with the tip's velocity and flies until z = 0 or the
    flight timeout.  Hammer: a penalty contact against the sensor pushes on
    the tip and its force is recorded.
    """
    commands = np.asarray(commands, dtype=float)
    H = task.H
    if commands.shape != (H, 12):
        raise ValueError(f"expected {H} commands of 12 pressures, got {commands.shape}")
    if task.kind == "hammer" and model.mount != "upright":
        raise ValueError("hammer contact requires the upright mount")
    n_sub = task.substeps
    dt = task.dt
    hold = n_sub * dt
    throw = task.kind == "throw"
    if throw:
        release_step = H if release_step is None else int(release_step)
        if not 1 <= release_step <= H:
            raise ValueError("release_step must be in 1..H")
    else:
        release_step = None
    payload = task.object_mass if task.kind in ("throw", "hammer") else 0.0
    chain = build_chain(model, payload)
    contact = task.kind == "hammer"
    sensor = np.asarray(task.goal_position, dtype=float)

    n = model.dof
    q = np.zeros(n)
    qd = np.zeros(n)
    total = H * n_sub
    dense_pos = np.empty((total + 1, 3))
    dense_vel = np.empty((total + 1, 3))
    dense_force = np.zeros(total + 1)
    rec_pos = np.empty((H, 3))
    rec_vel = np.empty((H, 3))
    rec_force = np.empty(H)
    released = np.zeros(H, dtype=bool)
    rel_time = rel_p = rel_v = None
    pressure = model.nominal_pressure
    decay = model.pressure_decay(dt)

    for t in range(H):
        tau = actuation_torques(model, commands[t])
        tau0 = actuation_torques(model, pressure)
        sl = slice(t * n_sub, (t + 1) * n_sub)
        status = _kernels.integrate(
            q, qd, n_sub, dt, chain.axis, chain.zoff, chain.inertia, chain.stiffness,
            chain.damping, tau, tau0, decay, model.base_gravity, model.joint_limit,
            chain.tip_z, contact, sensor, task.sensor_radius, task.tip_radius,
            task.contact_stiffness, dense_pos[sl], dense_vel[sl], dense_force[sl])
        pressure = relax_pressure(model, pressure, commands[t], n_sub, dt)
        if status:
            raise SimulationDiverged(t * n_sub + status - 1, f"command {t + 1}")
        pos, vel = _kernels.tip_state(q, qd, chain.axis, chain.zoff, chain.tip_z)
        rec_pos[t], rec_vel[t] = pos, vel
        rec_force[t] = dense_force[sl].max()
        t_end = (t + 1) * hold
        released[t] = rel_time is not None
        if throw and t + 1 == release_step:
            rel_time, rel_p, rel_v = t_end, pos.copy(), vel.copy()
            released[t] = True
            chain = build_chain(model, 0.0)

    pos, vel = _kernels.tip_state(q, qd, chain.axis, chain.zoff, chain.tip_z)
    dense_pos[total], dense_vel[total] = pos, vel
    if contact:
        f = np.empty(3)
        dense_force[total] = _kernels._contact_force(pos, sensor, task.sensor_radius,
                                                     task.tip_radius, task.contact_stiffness, f)
    dense_pos = model.to_world(dense_pos)
    dense_vel = model.to_world(dense_vel, velocity=True)
    rec_pos = model.to_world(rec_pos)
    rec_vel = model.to_world(rec_vel, velocity=True)
    obj_pos = rec_pos.copy()
    landing = None
    landed = False
    if rel_time is not None:
        rel_p = model.to_world(rel_p)
        rel_v = model.to_world(rel_v, velocity=True)
        t_land = time_to_ground(rel_p[2], rel_v[2], model.gravity)
        landed = t_land <= task.flight_timeout
        landing = ballistic_position(rel_p, rel_v, min(t_land, task.flight_timeout), model.gravity)
        for t in range(H):
            if released[t]:
                obj_pos[t] = ballistic_position(rel_p, rel_v, (t + 1) * hold - rel_time,
                                                model.gravity)

    return Trajectory(
        t=np.arange(1, H + 1) * hold,
        tip_pos=rec_pos, tip_vel=rec_vel, commands=commands.copy(), obj_pos=obj_pos,
        released=released, force=rec_force,
        dense_t=np.arange(total + 1) * dt, dense_pos=dense_pos, dense_vel=dense_vel,
        dense_force=dense_force, release_step=release_step, landing_point=landing,
        landed=landed, object_mass=payload, release_time=rel_time, release_pos=rel_p,
        release_vel=rel_v, gravity=model.gravity,
    )


def throw_objective(traj: Trajectory, t_R: int | None = None, literal_indicator: bool = False) -> float:
    """Sum of tip speeds over steps 1..t_R plus the landed horizontal range.

    With ``literal_indicator`` the range only counts when ``t_R == H``.
    """
    t_R = traj.release_step if t_R is None else t_R
    if t_R is None:
        raise ValueError("throw objective needs a release step")
    speed_sum = math.fsum(traj.speeds[:t_R])   # exact, so monotone in t_R
    if literal_indicator and t_R != traj.H:
        return speed_sum
    return speed_sum + traj.d_cube


def hammer_objective(traj: Trajectory, task: TaskSpec) -> float:
    # sum_t m*vz_t + F_t - [t >= t0] * ||x_t - g||
    m = task.object_mass
    steps = np.arange(1, traj.H + 1)
    dist = np.linalg.norm(traj.tip_pos - np.asarray(task.goal_position), axis=1)
    penalty = np.where(steps >= task.t0, dist, 0.0)
    return float(np.sum(task.momentum_sign * m * traj.tip_vel[:, 2] + traj.force - penalty))


def tip_speed_objective(traj: Trajectory) -> float:
    """Peak tip speed over the dense substep samples."""
    return float(traj.dense_speeds.max())


def score(traj: Trajectory, task: TaskSpec) -> float:
    if task.kind == "throw":
        return throw_objective(traj, literal_indicator=task.literal_release_indicator)
    if task.kind == "hammer":
        return hammer_objective(traj, task)
    return tip_speed_objective(traj)

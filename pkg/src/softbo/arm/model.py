"""Arm geometry, physical constants and the single-substep ``step`` API."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

N_CHAMBERS = 12


class SimulationDiverged(RuntimeError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"simulation diverged at substep {step}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class ContinuumJoint:
    """One bending segment, discretised into ``disk_count`` universal joints.

    Stiffness and damping act per universal-joint axis; ``torque_gain`` is the
    N*m produced per kPa of antagonistic pressure difference, split evenly over
    the disks.
    """

    disk_count: int = 4
    segment_length: float = 0.25
    disk_mass: float = 0.5
    stiffness: float = 8.0
    damping: float = 0.8
    torque_gain: float = 0.05


@dataclass(frozen=True)
class RigidLink:
    length: float = 0.275
    mass: float = 1.0


# (stiffness, damping, torque_gain) per continuum joint, base to tip. The base
# carries the whole arm against gravity, so it must be far stiffer than the tip
# for the upright pose at q = 0 to be stable (critical ~[240, 120, 40]).
DEFAULT_JOINT_CONSTANTS = ((1056.0, 1.4, 1.8), (528.0, 0.7, 0.9), (176.0, 1.4, 0.3))


def _default_joints():
    return tuple(ContinuumJoint(stiffness=k, damping=c, torque_gain=g)
                 for k, c, g in DEFAULT_JOINT_CONSTANTS)


def _default_links():
    return (RigidLink(), RigidLink())


@dataclass(frozen=True)
class ArmModel:
    """Three continuum joints joined by two rigid links, mounted upright at the origin."""

    joints: tuple[ContinuumJoint, ...] = field(default_factory=_default_joints)
    links: tuple[RigidLink, ...] = field(default_factory=_default_links)
    gravity: float = 9.81
    rho_max: float = 205.0
    disk_radius: float = 0.1
    joint_limit: float = math.pi / 2
    mount: str = "upright"
    pressure_time_constant: float = 0.1

    def __post_init__(self):
        if len(self.joints) != 3 or len(self.links) != 2:
            raise ValueError("arm needs exactly 3 continuum joints and 2 rigid links")
        for j in self.joints:
            if j.disk_count < 1:
                raise ValueError("disk_count must be >= 1")
            for name in ("segment_length", "disk_mass", "stiffness", "damping", "torque_gain"):
                if not getattr(j, name) >= 0.0:
                    raise ValueError(f"joint {name} must be non-negative")
            if j.segment_length <= 0 or j.disk_mass <= 0:
                raise ValueError("segment_length and disk_mass must be positive")
        for l in self.links:
            if l.length <= 0 or l.mass <= 0:
                raise ValueError("link length and mass must be positive")
        if self.mount not in ("upright", "hanging"):
            raise ValueError("mount must be 'upright' or 'hanging'")
        if self.rho_max <= 0 or self.gravity < 0 or self.joint_limit <= 0:
            raise ValueError("rho_max and joint_limit must be positive, gravity non-negative")
        if not self.pressure_time_constant >= 0:
            raise ValueError("pressure_time_constant must be non-negative")

    @property
    def total_length(self) -> float:
        return sum(j.segment_length for j in self.joints) + sum(l.length for l in self.links)

    @property
    def base_gravity(self) -> float:
        """Signed gravity along the base frame's z axis, as the kernels expect."""
        return self.gravity if self.mount == "upright" else -self.gravity

    def to_world(self, p, velocity: bool = False) -> np.ndarray:
        """Map base-frame vectors to the world; a hanging base sits ``total_length`` up."""
        p = np.asarray(p, dtype=float)
        if self.mount == "upright":
            return p.copy()
        out = p * np.array([1.0, -1.0, -1.0])
        if not velocity:
            out[..., 2] += self.total_length
        return out

    @property
    def nominal_pressure(self) -> np.ndarray:
        return np.full(N_CHAMBERS, 0.5 * self.rho_max)

    def pressure_decay(self, dt: float) -> float:
        """Per-substep relaxation factor of chamber pressure toward the command."""
        tc = self.pressure_time_constant
        return math.exp(-dt / tc) if tc > 0 else 0.0

    @property
    def dof(self) -> int:
        return 2 * sum(j.disk_count for j in self.joints)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArmModel":
        d = dict(d)
        joints = tuple(ContinuumJoint(**j) for j in d.pop("joints", [{}] * 3))
        links = tuple(RigidLink(**l) for l in d.pop("links", [{}] * 2))
        return cls(joints=joints, links=links, **d)

    def with_overrides(self, **kw) -> "ArmModel":
        """Replace fields; joint/link fields apply to every joint or link.

        ``stiffness=[60, 30, 10]`` style sequences set per-joint values.
        """
        joint_fields = {f.name for f in dataclasses.fields(ContinuumJoint)}
        link_fields = {f.name for f in dataclasses.fields(RigidLink)}
        joints = list(self.joints)
        links = list(self.links)
        top = {}
        for key, val in kw.items():
            if key in joint_fields:
                vals = val if isinstance(val, (list, tuple)) else [val] * 3
                joints = [dataclasses.replace(j, **{key: v}) for j, v in zip(joints, vals)]
            elif key.startswith("link_") and key[5:] in link_fields:
                vals = val if isinstance(val, (list, tuple)) else [val] * 2
                links = [dataclasses.replace(l, **{key[5:]: v}) for l, v in zip(links, vals)]
            else:
                top[key] = val
        return dataclasses.replace(self, joints=tuple(joints), links=tuple(links), **top)


@dataclass(frozen=True, eq=False)
class Chain:
    """Flattened revolute-joint tree consumed by the kernels."""

    axis: np.ndarray
    zoff: np.ndarray
    inertia: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    stiffness: np.ndarray
    damping: np.ndarray
    gain: np.ndarray
    chamber_a: np.ndarray
    chamber_b: np.ndarray
    tip_z: float


def _spatial_inertia(m, c, Ic):
    cx = np.array([[0.0, -c[2], c[1]], [c[2], 0.0, -c[0]], [-c[1], c[0], 0.0]])
    out = np.zeros((6, 6))
    out[:3, :3] = Ic + m * cx @ cx.T
    out[:3, 3:] = m * cx
    out[3:, :3] = m * cx.T
    out[3:, 3:] = m * np.eye(3)
    return out


@functools.lru_cache(maxsize=32)
def build_chain(model: ArmModel, payload_mass: float = 0.0) -> Chain:
    """Flatten ``model`` into per-axis arrays; a payload sits at the tip."""
    axis, zoff, inertia, mass, com = [], [], [], [], []
    stiff, damp, gain, cha, chb = [], [], [], [], []
    r = model.disk_radius
    pending = 0.0
    for ci, joint in enumerate(model.joints):
        s = joint.segment_length / joint.disk_count
        for d in range(joint.disk_count):
            for ax in (0, 1):
                axis.append(ax)
                zoff.append(pending if ax == 0 else 0.0)
                stiff.append(joint.stiffness)
                damp.append(joint.damping)
                gain.append(joint.torque_gain / joint.disk_count)
                cha.append(4 * ci + 2 * ax)
                chb.append(4 * ci + 2 * ax + 1)
                if ax == 0:
                    inertia.append(np.zeros((6, 6)))
                    mass.append(0.0)
                    com.append(np.zeros(3))
                    continue
                m = joint.disk_mass
                Ic = np.diag([m * r * r / 4, m * r * r / 4, m * r * r / 2])
                I6 = _spatial_inertia(m, np.array([0.0, 0.0, s]), Ic)
                mtot, mz = m, m * s
                last_disk = d == joint.disk_count - 1
                if last_disk and ci < len(model.links):
                    link = model.links[ci]
                    cl = np.array([0.0, 0.0, s + link.length / 2])
                    Il = np.diag([link.mass * link.length**2 / 12] * 2 + [1e-6 * link.mass])
                    I6 = I6 + _spatial_inertia(link.mass, cl, Il)
                    mtot += link.mass
                    mz += link.mass * cl[2]
                    pending = s + link.length
                else:
                    pending = s
                if last_disk and ci == len(model.joints) - 1 and payload_mass > 0:
                    I6 = I6 + _spatial_inertia(payload_mass, np.array([0.0, 0.0, s]), np.zeros((3, 3)))
                    mtot += payload_mass
                    mz += payload_mass * s
                inertia.append(I6)
                mass.append(mtot)
                com.append(np.array([0.0, 0.0, mz / mtot]))
    tip_z = model.joints[-1].segment_length / model.joints[-1].disk_count
    arr = lambda x, dt=float: np.ascontiguousarray(np.array(x, dtype=dt))
    return Chain(
        axis=arr(axis, np.int64), zoff=arr(zoff), inertia=arr(inertia), mass=arr(mass),
        com=arr(com), stiffness=arr(stiff), damping=arr(damp), gain=arr(gain),
        chamber_a=arr(cha, np.int64), chamber_b=arr(chb, np.int64), tip_z=float(tip_z),
    )


def actuation_torques(model: ArmModel, command) -> np.ndarray:
    """Per-axis actuation torque ``c_tau * (rho_a - rho_b) / n_d``."""
    chain = build_chain(model)
    cmd = np.asarray(command, dtype=float)
    if cmd.shape != (N_CHAMBERS,):
        raise ValueError(f"command must have {N_CHAMBERS} chamber pressures")
    return chain.gain * (cmd[chain.chamber_a] - cmd[chain.chamber_b])


@dataclass
class ObjectState:
    """A carried object: attached to the tip until released, then ballistic."""

    mass: float
    released: bool = False
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    landed: bool = False

    def copy(self) -> "ObjectState":
        return ObjectState(self.mass, self.released, self.position.copy(),
                           self.velocity.copy(), self.landed)


@dataclass
class SimState:
    """Joint state plus the 12 chamber pressures, which lag the commands."""

    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0
    attached_object: ObjectState | None = None
    pressure: np.ndarray | None = None

    @classmethod
    def initial(cls, model: ArmModel, object_mass: float = 0.0) -> "SimState":
        n = model.dof
        obj = None
        if object_mass > 0:
            obj = ObjectState(object_mass)
        st = cls(np.zeros(n), np.zeros(n), 0.0, obj, model.nominal_pressure)
        if obj is not None:
            obj.position, obj.velocity = tip_kinematics(model, st)
        return st

    def copy(self) -> "SimState":
        obj = None if self.attached_object is None else self.attached_object.copy()
        p = None if self.pressure is None else self.pressure.copy()
        return SimState(self.q.copy(), self.qdot.copy(), self.t, obj, p)


def tip_kinematics(model: ArmModel, state: SimState) -> tuple[np.ndarray, np.ndarray]:
    """World-frame tip position and velocity."""
    chain = build_chain(model)
    pos, vel = _kernels.tip_state(np.asarray(state.q, float), np.asarray(state.qdot, float),
                                  chain.axis, chain.zoff, chain.tip_z)
    return model.to_world(pos), model.to_world(vel, velocity=True)


def _payload(state: SimState) -> float:
    obj = state.attached_object
    if obj is None or obj.released:
        return 0.0
    return obj.mass


def mechanical_energy(model: ArmModel, state: SimState) -> float:
    """Kinetic + gravitational (ground reference z=0) + joint-spring energy.

    An attached payload is included; a released object is not.
    """
    chain = build_chain(model, _payload(state))
    kin, pot = _kernels.energy(np.asarray(state.q, float), np.asarray(state.qdot, float),
                               chain.axis, chain.zoff, chain.inertia, chain.mass, chain.com,
                               model.base_gravity, chain.stiffness)
    if model.mount == "hanging":
        pot += chain.mass.sum() * model.gravity * model.total_length
    return kin + pot


def advance_ballistic(obj: ObjectState, dt: float, gravity: float) -> None:
    """Exact free-flight update of a released object; stops on the ground z=0."""
    if not obj.released or obj.landed:
        return
    p, v = obj.position, obj.velocity
    z_next = p[2] + v[2] * dt - 0.5 * gravity * dt * dt
    if z_next > 0.0:
        obj.position = p + v * dt - np.array([0.0, 0.0, 0.5 * gravity * dt * dt])
        obj.velocity = v - np.array([0.0, 0.0, gravity * dt])
        return
    tau = time_to_ground(p[2], v[2], gravity)
    tau = min(tau, dt)
    obj.position = p + v * tau - np.array([0.0, 0.0, 0.5 * gravity * tau * tau])
    obj.position[2] = 0.0
    obj.velocity = np.zeros(3)
    obj.landed = True


def time_to_ground(z: float, vz: float, gravity: float) -> float:
    if z <= 0.0:
        return 0.0
    if gravity <= 0.0:
        return math.inf if vz >= 0 else -z / vz
    return (vz + math.sqrt(vz * vz + 2.0 * gravity * z)) / gravity


def relax_pressure(model: ArmModel, pressure, command, n_sub: int, dt: float) -> np.ndarray:
    """Chamber pressures after ``n_sub`` substeps of tracking ``command``."""
    command = np.asarray(command, dtype=float)
    if pressure is None:
        return command.copy()
    return command + (np.asarray(pressure, float) - command) * model.pressure_decay(dt) ** n_sub


def step(model: ArmModel, state: SimState, command, dt: float) -> SimState:
    """One implicit-midpoint substep; returns a new state.

    Chamber pressures first relax toward ``command``; a state without a
    pressure record takes the command directly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    new = state.copy()
    chain = build_chain(model, _payload(state))
    command = np.asarray(command, dtype=float)
    tau = actuation_torques(model, command)
    tau0 = tau if state.pressure is None else actuation_torques(model, state.pressure)
    pos = np.empty((1, 3))
    vel = np.empty((1, 3))
    frc = np.empty(1)
    status = _kernels.integrate(
        new.q, new.qdot, 1, dt, chain.axis, chain.zoff, chain.inertia, chain.stiffness,
        chain.damping, tau, tau0, model.pressure_decay(dt), model.base_gravity,
        model.joint_limit, chain.tip_z, False, np.zeros(3), 0.0, 0.0, 0.0, pos, vel, frc)
    if status:
        raise SimulationDiverged(0)
    new.pressure = relax_pressure(model, state.pressure, command, 1, dt)
    new.t = state.t + dt
    obj = new.attached_object
    if obj is not None:
        if obj.released:
            advance_ballistic(obj, dt, model.gravity)
        else:
            obj.position, obj.velocity = tip_kinematics(model, new)
    return new

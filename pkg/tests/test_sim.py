import math

import numpy as np
import pytest

from softbo.arm import (
    ArmModel,
    SimState,
    SimulationDiverged,
    actuation_torques,
    mechanical_energy,
    step,
    tip_kinematics,
)
from softbo.arm.model import ObjectState, advance_ballistic, relax_pressure
from softbo.policy import build_action_set

DT = 0.005


def run_steps(model, state, command, n, dt=DT):
    energies = [mechanical_energy(model, state)]
    for _ in range(n):
        state = step(model, state, command, dt)
        energies.append(mechanical_energy(model, state))
    return state, np.array(energies)


def test_arm_length_about_1_3_m():
    assert ArmModel().total_length == pytest.approx(1.3, abs=0.05)


def test_model_validation():
    with pytest.raises(ValueError):
        ArmModel().with_overrides(disk_mass=0.0)
    with pytest.raises(ValueError):
        ArmModel(mount="sideways")
    with pytest.raises(ValueError):
        ArmModel(pressure_time_constant=-1.0)


def test_per_joint_overrides():
    m = ArmModel().with_overrides(stiffness=[10.0, 20.0, 30.0])
    assert [j.stiffness for j in m.joints] == [10.0, 20.0, 30.0]


def test_neutral_command_gives_zero_torque():
    m = ArmModel()
    np.testing.assert_array_equal(actuation_torques(m, m.nominal_pressure), 0.0)


def test_torque_sign_and_scale():
    m = ArmModel()
    cmd = m.nominal_pressure.copy()
    cmd[0] = m.rho_max
    tau = actuation_torques(m, cmd)
    per_disk = m.joints[0].torque_gain * (m.rho_max - 0.5 * m.rho_max) / m.joints[0].disk_count
    assert tau[0] == pytest.approx(per_disk)
    assert np.count_nonzero(tau) == m.joints[0].disk_count


def test_zero_pressure_equilibrium_is_fixed():
    m = ArmModel()
    s = SimState.initial(m)
    s, _ = run_steps(m, s, np.zeros(12), 200)
    assert np.abs(s.q).max() < 1e-12
    assert np.abs(s.qdot).max() < 1e-12


def test_step_rejects_bad_dt():
    m = ArmModel()
    with pytest.raises(ValueError):
        step(m, SimState.initial(m), m.nominal_pressure, 0.0)


def test_nonfinite_state_raises_with_step():
    m = ArmModel()
    s = SimState.initial(m)
    s.q[0] = np.nan
    with pytest.raises(SimulationDiverged, match="step"):
        step(m, s, m.nominal_pressure, DT)


def test_step_returns_new_state():
    m = ArmModel()
    s = SimState.initial(m)
    cmd = build_action_set(2, m.rho_max)[5]
    s2 = step(m, s, cmd, DT)
    assert np.all(s.q == 0) and s2.t == pytest.approx(DT)


def test_undamped_unsprung_chain_conserves_energy():
    # free swing under gravity: suspend the chain and displace the base joint
    m = ArmModel(mount="hanging").with_overrides(stiffness=0.0, damping=0.0)
    s = SimState.initial(m)
    s.q[0], s.q[1] = 0.5, 0.25
    _, E = run_steps(m, s, m.nominal_pressure, int(round(5.0 / DT)))
    assert np.abs(E - E[0]).max() / abs(E[0]) < 0.005


def test_undamped_sprung_chain_conserves_energy():
    m = ArmModel().with_overrides(damping=0.0)
    s = SimState.initial(m)
    n = m.joints[0].disk_count
    s.q[0:2 * n:2] = 0.1
    _, E = run_steps(m, s, m.nominal_pressure, int(round(5.0 / DT)))
    assert np.abs(E - E[0]).max() / abs(E[0]) < 0.005


def _actuated_state(model, seed):
    rng = np.random.default_rng(seed)
    A = build_action_set(2, model.rho_max)
    s = SimState.initial(model)
    for _ in range(3):
        a = A[int(rng.integers(len(A)))]
        for _ in range(100):
            s = step(model, s, a, DT)
    s.pressure = model.nominal_pressure.copy()   # actuation off from here
    return s


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("mount", ["upright", "hanging"])
def test_passive_with_default_damping(mount, seed):
    m = ArmModel(mount=mount)
    _, E = run_steps(m, _actuated_state(m, seed), m.nominal_pressure, 600)
    assert np.diff(E).max() <= 1e-9


@pytest.mark.xfail(strict=True, reason="midpoint energy error (~dt^2) exceeds near-zero damping")
def test_passive_with_tiny_damping():
    m = ArmModel().with_overrides(damping=1e-3)
    _, E = run_steps(m, _actuated_state(m, 0), m.nominal_pressure, 600)
    assert np.diff(E).max() <= 1e-9


def test_hard_stop_limits_angles():
    m = ArmModel()
    cmd = np.zeros(12)
    cmd[0::2] = m.rho_max
    s = SimState.initial(m)
    m2 = m.with_overrides(stiffness=1.0)
    for _ in range(400):
        s = step(m2, s, cmd, DT)
        assert np.abs(s.q).max() <= m.joint_limit


def test_ballistic_matches_closed_form():
    g = 9.81
    obj = ObjectState(0.25, released=True, position=np.array([0.0, 0.0, 1.0]),
                      velocity=np.array([1.0, 0.0, 0.0]))
    t = 0.0
    t_land = math.sqrt(2.0 / g)
    while not obj.landed:
        advance_ballistic(obj, DT, g)
        t += DT
        tau = min(t, t_land)
        expected = np.array([tau, 0.0, max(1.0 - 0.5 * g * tau * tau, 0.0)])
        assert np.abs(obj.position - expected).max() < 1e-6
    assert obj.position[0] == pytest.approx(t_land, abs=1e-12)


def test_released_object_advances_inside_step():
    m = ArmModel()
    s = SimState.initial(m, object_mass=0.25)
    s.attached_object.released = True
    s.attached_object.velocity = np.array([0.5, 0.0, 2.0])
    p0 = s.attached_object.position.copy()
    s = step(m, s, m.nominal_pressure, DT)
    expected = p0 + np.array([0.5, 0.0, 2.0]) * DT - np.array([0, 0, 0.5 * 9.81 * DT * DT])
    np.testing.assert_allclose(s.attached_object.position, expected, atol=1e-12)


def test_attached_object_follows_tip():
    m = ArmModel()
    s = SimState.initial(m, object_mass=0.25)
    cmd = build_action_set(2, m.rho_max)[7]
    for _ in range(20):
        s = step(m, s, cmd, DT)
    np.testing.assert_array_equal(s.attached_object.position, tip_kinematics(m, s)[0])


def test_upright_tip_at_rest():
    m = ArmModel()
    pos, vel = tip_kinematics(m, SimState.initial(m))
    np.testing.assert_allclose(pos, [0.0, 0.0, m.total_length], atol=1e-12)
    np.testing.assert_array_equal(vel, 0.0)


def test_hanging_tip_at_ground_level():
    m = ArmModel(mount="hanging")
    pos, _ = tip_kinematics(m, SimState.initial(m))
    np.testing.assert_allclose(pos, [0.0, 0.0, 0.0], atol=1e-12)


def test_pressure_relaxes_exponentially():
    m = ArmModel()
    cmd = np.zeros(12)
    s = SimState.initial(m)
    for _ in range(20):
        s = step(m, s, cmd, DT)
    a = math.exp(-DT / m.pressure_time_constant)
    np.testing.assert_allclose(s.pressure, 0.5 * m.rho_max * a ** 20, rtol=1e-12)


def test_relax_pressure_composes():
    m = ArmModel()
    p0 = np.linspace(0, 200, 12)
    c = np.full(12, 50.0)
    once = relax_pressure(m, p0, c, 10, DT)
    twice = relax_pressure(m, relax_pressure(m, p0, c, 4, DT), c, 6, DT)
    np.testing.assert_allclose(once, twice, rtol=1e-12)


def test_zero_time_constant_applies_command_directly():
    m = ArmModel(pressure_time_constant=0.0)
    cmd = build_action_set(2, m.rho_max)[9]
    s = step(m, SimState.initial(m), cmd, DT)
    np.testing.assert_array_equal(s.pressure, cmd)
    direct = SimState.initial(m)
    direct.pressure = None
    np.testing.assert_array_equal(step(m, direct, cmd, DT).q, s.q)

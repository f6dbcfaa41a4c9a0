"""Numba kernels for the disk-chain arm.

The chain is a serial tree of revolute joints about body-local x or y, each
joint origin offset from its parent along the parent's local z axis.  Forward
dynamics use the articulated-body algorithm in body coordinates with spatial
vectors ordered ``[angular; linear]``.  Joint springs and dampers are folded
into the joint "armature" so they are integrated implicitly.
"""

import numpy as np
from numba import njit

MIDPOINT_ITERS = 2


@njit(cache=True)
def _joint_rotation(axis, angle, out):
    # child -> parent coordinates
    c = np.cos(angle)
    s = np.sin(angle)
    out[:, :] = 0.0
    if axis == 0:
        out[0, 0] = 1.0
        out[1, 1] = c
        out[1, 2] = -s
        out[2, 1] = s
        out[2, 2] = c
    else:
        out[0, 0] = c
        out[0, 2] = s
        out[1, 1] = 1.0
        out[2, 0] = -s
        out[2, 2] = c


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def _motion_to_child(E, z, wp, vp, wc, vc):
    """Plucker motion transform parent -> child; child origin at (0, 0, z)."""
    # v - r x w with r = (0, 0, z)
    t0 = vp[0] + z * wp[1]
    t1 = vp[1] - z * wp[0]
    t2 = vp[2]
    for a in range(3):
        wc[a] = E[a, 0] * wp[0] + E[a, 1] * wp[1] + E[a, 2] * wp[2]
        vc[a] = E[a, 0] * t0 + E[a, 1] * t1 + E[a, 2] * t2


@njit(cache=True)
def _force_to_parent(E, z, fc, fp):
    """fp += X^T fc for a 6-vector force fc expressed in child coordinates."""
    n0 = E[0, 0] * fc[0] + E[1, 0] * fc[1] + E[2, 0] * fc[2]
    n1 = E[0, 1] * fc[0] + E[1, 1] * fc[1] + E[2, 1] * fc[2]
    n2 = E[0, 2] * fc[0] + E[1, 2] * fc[1] + E[2, 2] * fc[2]
    f0 = E[0, 0] * fc[3] + E[1, 0] * fc[4] + E[2, 0] * fc[5]
    f1 = E[0, 1] * fc[3] + E[1, 1] * fc[4] + E[2, 1] * fc[5]
    f2 = E[0, 2] * fc[3] + E[1, 2] * fc[4] + E[2, 2] * fc[5]
    # n + r x f with r = (0, 0, z)
    fp[0] += n0 - z * f1
    fp[1] += n1 + z * f0
    fp[2] += n2
    fp[3] += f0
    fp[4] += f1
    fp[5] += f2


@njit(cache=True)
def _inertia_to_parent(E, z, Ic, Ip, tmp, rot):
    """Ip += X^T Ic X, the congruence of a 6x6 inertia into the parent frame."""
    # rotate each 3x3 block: E^T M E
    for bi in range(2):
        for bj in range(2):
            for a in range(3):
                for b in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += Ic[3 * bi + a, 3 * bj + k] * E[k, b]
                    tmp[3 * bi + a, 3 * bj + b] = acc
    for bi in range(2):
        for bj in range(2):
            for a in range(3):
                for b in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += E[k, a] * tmp[3 * bi + k, 3 * bj + b]
                    rot[3 * bi + a, 3 * bj + b] = acc
    # translate by r = (0, 0, z), R = skew(r):
    # A'' = A - B R + R B^T - R C R, B'' = B + R C, C'' = C
    for a in range(3):
        for b in range(3):
            # (R C)[a, b]
            if a == 0:
                rc = -z * rot[4, 3 + b]
            elif a == 1:
                rc = z * rot[3, 3 + b]
            else:
                rc = 0.0
            # (B R)[a, b]
            if b == 0:
                br = z * rot[a, 4]
            elif b == 1:
                br = -z * rot[a, 3]
            else:
                br = 0.0
            # (R B^T)[a, b] = -(B R)[b, a]
            if a == 0:
                rbt = -z * rot[b, 4]
            elif a == 1:
                rbt = z * rot[b, 3]
            else:
                rbt = 0.0
            # (R C R)[a, b] = ((R C) R)[a, b]
            rcr = 0.0
            if b == 0:
                if a == 0:
                    rcr = -z * z * rot[4, 4]
                elif a == 1:
                    rcr = z * z * rot[3, 4]
            elif b == 1:
                if a == 0:
                    rcr = z * z * rot[4, 3]
                elif a == 1:
                    rcr = -z * z * rot[3, 3]
            Ip[a, b] += rot[a, b] - br + rbt - rcr
            bb = rot[a, 3 + b] + rc
            Ip[a, 3 + b] += bb
            Ip[3 + b, a] += bb
            Ip[3 + a, 3 + b] += rot[3 + a, 3 + b]


@njit(cache=True)
def _kinematics(q, qd, axis, zoff, E, Rw, pw, w, v):
    """Body rotations/positions (world) and spatial velocities (body coords)."""
    n = q.shape[0]
    rot = np.empty((3, 3))
    zero = np.zeros(3)
    eye = np.eye(3)
    for i in range(n):
        _joint_rotation(axis[i], q[i], rot)
        for a in range(3):
            for b in range(3):
                E[i, a, b] = rot[b, a]
        if i == 0:
            wp = zero
            vp = zero
            Rp = eye
            pp = zero
        else:
            wp = w[i - 1]
            vp = v[i - 1]
            Rp = Rw[i - 1]
            pp = pw[i - 1]
        _motion_to_child(E[i], zoff[i], wp, vp, w[i], v[i])
        w[i, axis[i]] += qd[i]
        for a in range(3):
            pw[i, a] = pp[a] + Rp[a, 2] * zoff[i]
            for b in range(3):
                acc = 0.0
                for k in range(3):
                    acc += Rp[a, k] * rot[k, b]
                Rw[i, a, b] = acc


@njit(cache=True)
def _tip_state(Rw, pw, w, v, tip_z, pos, vel):
    last = Rw.shape[0] - 1
    # body-frame tip velocity v + w x r, r = (0, 0, tip_z)
    bv0 = v[last, 0] + w[last, 1] * tip_z
    bv1 = v[last, 1] - w[last, 0] * tip_z
    bv2 = v[last, 2]
    for a in range(3):
        pos[a] = pw[last, a] + Rw[last, a, 2] * tip_z
        vel[a] = Rw[last, a, 0] * bv0 + Rw[last, a, 1] * bv1 + Rw[last, a, 2] * bv2


@njit(cache=True)
def _contact_force(pos, sensor, sensor_radius, tip_radius, k_contact, force):
    """Penalty force of a sphere against a cylinder occupying z <= sensor_z."""
    dx = pos[0] - sensor[0]
    dy = pos[1] - sensor[1]
    dz = pos[2] - sensor[2]
    rh = np.sqrt(dx * dx + dy * dy)
    force[:] = 0.0
    if rh <= sensor_radius:
        pen = tip_radius - dz
        if pen > 0.0:
            force[2] = k_contact * pen
            return k_contact * pen
        return 0.0
    # nearest point on the rim (or the side wall below it)
    ex = dx * (1.0 - sensor_radius / rh)
    ey = dy * (1.0 - sensor_radius / rh)
    ez = dz if dz > 0.0 else 0.0
    d = np.sqrt(ex * ex + ey * ey + ez * ez)
    pen = tip_radius - d
    if pen <= 0.0 or d == 0.0:
        return 0.0
    mag = k_contact * pen
    force[0] = mag * ex / d
    force[1] = mag * ey / d
    force[2] = mag * ez / d
    return mag


@njit(cache=True)
def _aba(q, qd, axis, zoff, inertia, tau, arm, gravity, fw, tip_z, E, Rw, pw,
         w, v, cw, cv, IA, pA, U, D, u, ac_w, ac_v, qdd, Ia, tmp, rot):
    """Articulated-body forward dynamics at (q, qd).

    ``tau`` is the generalized force, ``arm`` a diagonal added to the joint
    inertia, ``fw`` a world-frame force at the tip (zero for none).
    """
    n = q.shape[0]
    last = n - 1
    t3 = np.empty(3)
    t3b = np.empty(3)
    vel6 = np.empty(6)
    Iv = np.empty(6)
    pa = np.empty(6)
    ap_w = np.zeros(3)
    ap_v = np.zeros(3)
    _kinematics(q, qd, axis, zoff, E, Rw, pw, w, v)
    for i in range(n):
        ax = axis[i]
        # bias acceleration c = v x (S qd)
        for a in range(3):
            t3[a] = 0.0
        t3[ax] = qd[i]
        _cross(w[i], t3, t3b)
        for a in range(3):
            cw[i, a] = t3b[a]
        _cross(v[i], t3, t3b)
        for a in range(3):
            cv[i, a] = t3b[a]
        for a in range(6):
            for b in range(6):
                IA[i, a, b] = inertia[i, a, b]
        for a in range(3):
            vel6[a] = w[i, a]
            vel6[3 + a] = v[i, a]
        for a in range(6):
            acc = 0.0
            for b in range(6):
                acc += inertia[i, a, b] * vel6[b]
            Iv[a] = acc
        # p = v x* (I v)
        _cross(w[i], Iv[0:3], t3)
        _cross(v[i], Iv[3:6], t3b)
        for a in range(3):
            pA[i, a] = t3[a] + t3b[a]
        _cross(w[i], Iv[3:6], t3)
        for a in range(3):
            pA[i, 3 + a] = t3[a]

    if fw[0] != 0.0 or fw[1] != 0.0 or fw[2] != 0.0:
        # external force at the tip, in last-body coordinates
        for a in range(3):
            t3[a] = Rw[last, 0, a] * fw[0] + Rw[last, 1, a] * fw[1] + Rw[last, 2, a] * fw[2]
        pA[last, 0] -= -tip_z * t3[1]
        pA[last, 1] -= tip_z * t3[0]
        for a in range(3):
            pA[last, 3 + a] -= t3[a]

    for i in range(n - 1, -1, -1):
        ax = axis[i]
        for a in range(6):
            U[i, a] = IA[i, a, ax]
        D[i] = IA[i, ax, ax] + arm[i]
        u[i] = tau[i] - pA[i, ax]
        if i > 0:
            for a in range(6):
                for b in range(6):
                    Ia[a, b] = IA[i, a, b] - U[i, a] * U[i, b] / D[i]
            for a in range(6):
                acc = pA[i, a] + U[i, a] * u[i] / D[i]
                for b in range(3):
                    acc += Ia[a, b] * cw[i, b] + Ia[a, 3 + b] * cv[i, b]
                pa[a] = acc
            _inertia_to_parent(E[i], zoff[i], Ia, IA[i - 1], tmp, rot)
            _force_to_parent(E[i], zoff[i], pa, pA[i - 1])

    for i in range(n):
        if i == 0:
            ap_v[2] = gravity
            _motion_to_child(E[i], zoff[i], ap_w, ap_v, ac_w[i], ac_v[i])
        else:
            _motion_to_child(E[i], zoff[i], ac_w[i - 1], ac_v[i - 1],
                             ac_w[i], ac_v[i])
        for a in range(3):
            ac_w[i, a] += cw[i, a]
            ac_v[i, a] += cv[i, a]
        acc = u[i]
        for a in range(3):
            acc -= U[i, a] * ac_w[i, a] + U[i, 3 + a] * ac_v[i, a]
        qdd[i] = acc / D[i]
        ac_w[i, axis[i]] += qdd[i]


@njit(cache=True)
def integrate(q, qd, n_sub, dt, axis, zoff, inertia, stiff, damp, tau_act,
              tau_start, decay, gravity, limit, tip_z, contact, sensor,
              sensor_radius, tip_radius, k_contact, dense_pos, dense_vel,
              dense_force):
    """Advance ``n_sub`` implicit-midpoint substeps in place.

    The linear joint spring-dampers enter exactly through the joint armature;
    the remaining terms (gravity, velocity products, configuration-dependent
    inertia) are evaluated at the midpoint by ``MIDPOINT_ITERS`` fixed-point
    passes.  Contact is explicit, evaluated at the start of the substep.

    Chamber pressures relax toward the command with per-substep factor
    ``decay``, so substep ``k`` applies
    ``tau_act + (tau_start - tau_act) * decay**(k + 1)``.

    ``dense_*[k]`` receive the tip state at the start of substep ``k``.
    Returns the status: 0 ok, otherwise 1 + index of the substep at which the
    state became non-finite.
    """
    n = q.shape[0]
    E = np.empty((n, 3, 3))
    Rw = np.empty((n, 3, 3))
    pw = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    cw = np.zeros((n, 3))
    cv = np.zeros((n, 3))
    IA = np.empty((n, 6, 6))
    pA = np.empty((n, 6))
    U = np.empty((n, 6))
    D = np.empty(n)
    u = np.empty(n)
    ac_w = np.empty((n, 3))
    ac_v = np.empty((n, 3))
    qdd = np.zeros(n)
    pos = np.empty(3)
    vel = np.empty(3)
    fw = np.zeros(3)
    arm = np.empty(n)
    tau = np.empty(n)
    qm = np.empty(n)
    vm = np.empty(n)
    Ia = np.empty((6, 6))
    tmp = np.empty((6, 6))
    rot = np.empty((6, 6))
    for i in range(n):
        arm[i] = 0.5 * dt * damp[i] + 0.25 * dt * dt * stiff[i]

    lag = 1.0
    for k in range(n_sub):
        lag *= decay
        _kinematics(q, qd, axis, zoff, E, Rw, pw, w, v)
        _tip_state(Rw, pw, w, v, tip_z, pos, vel)
        fmag = 0.0
        fw[:] = 0.0
        if contact:
            fmag = _contact_force(pos, sensor, sensor_radius, tip_radius,
                                  k_contact, fw)
        for a in range(3):
            dense_pos[k, a] = pos[a]
            dense_vel[k, a] = vel[a]
        dense_force[k] = fmag

        for i in range(n):
            tau[i] = (tau_act[i] + (tau_start[i] - tau_act[i]) * lag
                      - stiff[i] * (q[i] + 0.5 * dt * qd[i]) - damp[i] * qd[i])
            qdd[i] = 0.0
        for it in range(MIDPOINT_ITERS):
            for i in range(n):
                vm[i] = qd[i] + 0.5 * dt * qdd[i]
                qm[i] = q[i] + 0.5 * dt * vm[i]
            _aba(qm, vm, axis, zoff, inertia, tau, arm, gravity, fw, tip_z, E,
                 Rw, pw, w, v, cw, cv, IA, pA, U, D, u, ac_w, ac_v, qdd, Ia,
                 tmp, rot)

        bad = False
        for i in range(n):
            v_old = qd[i]
            qd[i] += dt * qdd[i]
            q[i] += 0.5 * dt * (v_old + qd[i])
            if q[i] > limit:
                q[i] = limit
                if qd[i] > 0.0:
                    qd[i] = 0.0
            elif q[i] < -limit:
                q[i] = -limit
                if qd[i] < 0.0:
                    qd[i] = 0.0
            if not (np.isfinite(q[i]) and np.isfinite(qd[i])):
                bad = True
        if bad:
            return k + 1
    return 0


@njit(cache=True)
def tip_state(q, qd, axis, zoff, tip_z):
    n = q.shape[0]
    E = np.empty((n, 3, 3))
    Rw = np.empty((n, 3, 3))
    pw = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    _kinematics(q, qd, axis, zoff, E, Rw, pw, w, v)
    pos = np.empty(3)
    vel = np.empty(3)
    _tip_state(Rw, pw, w, v, tip_z, pos, vel)
    return pos, vel


@njit(cache=True)
def energy(q, qd, axis, zoff, inertia, mass, com, gravity, stiff):
    """Kinetic, gravitational and spring potential energy of the chain."""
    n = q.shape[0]
    E = np.empty((n, 3, 3))
    Rw = np.empty((n, 3, 3))
    pw = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    _kinematics(q, qd, axis, zoff, E, Rw, pw, w, v)
    kin = 0.0
    pot = 0.0
    vel6 = np.empty(6)
    for i in range(n):
        for a in range(3):
            vel6[a] = w[i, a]
            vel6[3 + a] = v[i, a]
        for a in range(6):
            for b in range(6):
                kin += 0.5 * vel6[a] * inertia[i, a, b] * vel6[b]
        z = pw[i, 2]
        for b in range(3):
            z += Rw[i, 2, b] * com[i, b]
        pot += mass[i] * gravity * z
        pot += 0.5 * stiff[i] * q[i] * q[i]
    return kin, pot


@njit(cache=True)
def mass_matrix(q, axis, zoff, inertia, gravity_off):
    """Joint-space mass matrix by unit-acceleration inverse dynamics (tests)."""
    n = q.shape[0]
    M = np.empty((n, n))
    qd = np.zeros(n)
    E = np.empty((n, 3, 3))
    Rw = np.empty((n, 3, 3))
    pw = np.empty((n, 3))
    w = np.empty((n, 3))
    v = np.empty((n, 3))
    _kinematics(q, qd, axis, zoff, E, Rw, pw, w, v)
    aw = np.empty((n, 3))
    av = np.empty((n, 3))
    f = np.empty((n, 6))
    zero = np.zeros(3)
    a6 = np.empty(6)
    for j in range(n):
        for i in range(n):
            if i == 0:
                _motion_to_child(E[i], zoff[i], zero, zero, aw[i], av[i])
            else:
                _motion_to_child(E[i], zoff[i], aw[i - 1], av[i - 1], aw[i], av[i])
            if i == j:
                aw[i, axis[i]] += 1.0
            for a in range(3):
                a6[a] = aw[i, a]
                a6[3 + a] = av[i, a]
            for a in range(6):
                acc = 0.0
                for b in range(6):
                    acc += inertia[i, a, b] * a6[b]
                f[i, a] = acc
        for i in range(n - 1, -1, -1):
            M[i, j] = f[i, axis[i]]
            if i > 0:
                _force_to_parent(E[i], zoff[i], f[i], f[i - 1])
    return M

"""Compiled numerics: the slowed flow, its integrator, and the hybrid map.

Everything here is numba-jitted and operates on a packed float64 parameter
vector P (layout below) plus the chart coefficient arrays, so the hot loops
(passage audits, orbit generation, return-time searches) run at native
speed on a single core.

Integration uses the Dormand-Prince 5(4) embedded pair with standard step
control; event times (radius crossings, the tan-theta = 1 time) are located
by bisection, re-taking a single fixed step from the bracketing step's
start, which inherits the accepted step's accuracy.

Status codes returned by integrators: 0 ok, 1 step size underflow,
2 step budget exceeded.
"""

import numpy as np
from numba import njit

# P layout
ALPHA, R0, R1, GAMMA, BETA, M, LAM, ETA, VRAD, CRAD, RTOL, ATOL, MAXSTEPS, \
    MINSTEP, DHW = range(15)

OK, STEP_UNDERFLOW, BUDGET, NO_EVENT = 0, 1, 2, 3

TWO_PI = 2.0 * np.pi

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                          64448.0 / 6561.0, -212.0 / 729.0)
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0,
                                46732.0 / 5247.0, 49.0 / 176.0,
                                -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0,
                                71.0 / 1920.0, -17253.0 / 339200.0,
                                22.0 / 525.0, -1.0 / 40.0)


@njit(cache=True)
def psi_pair(r, P):
    """(psi(r), psi'(r)): pure power below r0, 1 above r1, Hermite between."""
    alpha, r0, r1 = P[ALPHA], P[R0], P[R1]
    if r <= 0.0:
        return 0.0, 0.0
    if r <= r0:
        p = r**alpha
        return p, alpha * p / r
    if r >= r1:
        return 1.0, 0.0
    width = r1 - r0
    s = (r - r0) / width
    p0 = r0**alpha
    m0 = alpha * p0 / r0 * width
    s2 = s * s
    s3 = s2 * s
    val = ((2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0
           + (-2.0 * s3 + 3.0 * s2) * 1.0)
    der = ((6.0 * s2 - 6.0 * s) * p0 + (3.0 * s2 - 4.0 * s + 1.0) * m0
           + (-6.0 * s2 + 6.0 * s) * 1.0) / width
    return val, der


@njit(cache=True)
def field3(u, v, w, P):
    """Slowed field psi(|z|) * (gamma u, -beta v, -beta w)."""
    r = np.sqrt(u * u + v * v + w * w)
    ps, _ = psi_pair(r, P)
    return ps * P[GAMMA] * u, -ps * P[BETA] * v, -ps * P[BETA] * w


@njit(cache=True)
def _rk45_step3(u, v, w, h, P):
    """One Dormand-Prince step; returns 5th-order update and error estimate."""
    k1u, k1v, k1w = field3(u, v, w, P)
    k2u, k2v, k2w = field3(u + h * _A21 * k1u, v + h * _A21 * k1v,
                           w + h * _A21 * k1w, P)
    k3u, k3v, k3w = field3(u + h * (_A31 * k1u + _A32 * k2u),
                           v + h * (_A31 * k1v + _A32 * k2v),
                           w + h * (_A31 * k1w + _A32 * k2w), P)
    k4u, k4v, k4w = field3(u + h * (_A41 * k1u + _A42 * k2u + _A43 * k3u),
                           v + h * (_A41 * k1v + _A42 * k2v + _A43 * k3v),
                           w + h * (_A41 * k1w + _A42 * k2w + _A43 * k3w), P)
    k5u, k5v, k5w = field3(
        u + h * (_A51 * k1u + _A52 * k2u + _A53 * k3u + _A54 * k4u),
        v + h * (_A51 * k1v + _A52 * k2v + _A53 * k3v + _A54 * k4v),
        w + h * (_A51 * k1w + _A52 * k2w + _A53 * k3w + _A54 * k4w), P)
    k6u, k6v, k6w = field3(
        u + h * (_A61 * k1u + _A62 * k2u + _A63 * k3u + _A64 * k4u
                 + _A65 * k5u),
        v + h * (_A61 * k1v + _A62 * k2v + _A63 * k3v + _A64 * k4v
                 + _A65 * k5v),
        w + h * (_A61 * k1w + _A62 * k2w + _A63 * k3w + _A64 * k4w
                 + _A65 * k5w), P)
    nu = u + h * (_B1 * k1u + _B3 * k3u + _B4 * k4u + _B5 * k5u + _B6 * k6u)
    nv = v + h * (_B1 * k1v + _B3 * k3v + _B4 * k4v + _B5 * k5v + _B6 * k6v)
    nw = w + h * (_B1 * k1w + _B3 * k3w + _B4 * k4w + _B5 * k5w + _B6 * k6w)
    k7u, k7v, k7w = field3(nu, nv, nw, P)
    eu = h * (_E1 * k1u + _E3 * k3u + _E4 * k4u + _E5 * k5u + _E6 * k6u
              + _E7 * k7u)
    ev = h * (_E1 * k1v + _E3 * k3v + _E4 * k4v + _E5 * k5v + _E6 * k6v
              + _E7 * k7v)
    ew = h * (_E1 * k1w + _E3 * k3w + _E4 * k4w + _E5 * k5w + _E6 * k6w
              + _E7 * k7w)
    return nu, nv, nw, eu, ev, ew


@njit(cache=True)
def _err_norm3(u, v, w, nu, nv, nw, eu, ev, ew, P):
    rt, at = P[RTOL], P[ATOL]
    su = at + rt * max(abs(u), abs(nu))
    sv = at + rt * max(abs(v), abs(nv))
    sw = at + rt * max(abs(w), abs(nw))
    return np.sqrt(((eu / su) ** 2 + (ev / sv) ** 2 + (ew / sw) ** 2) / 3.0)


@njit(cache=True)
def _initial_step3(u, v, w, P):
    fu, fv, fw = field3(u, v, w, P)
    fn = np.sqrt(fu * fu + fv * fv + fw * fw)
    zn = np.sqrt(u * u + v * v + w * w)
    if fn < 1e-300:
        return 1e-2
    h = 1e-2 * (P[ATOL] + P[RTOL] * zn) ** 0.2 / fn**0.2
    return min(max(h, 1e-10), 0.1)


@njit(cache=True, nogil=True)
def integrate_fixed3(u, v, w, t_total, P):
    """Integrate the slowed field for exactly t_total; returns (u,v,w,status,n)."""
    t = 0.0
    h = min(_initial_step3(u, v, w, P), t_total)
    n = 0
    max_steps = int(P[MAXSTEPS])
    while t < t_total:
        if n >= max_steps:
            return u, v, w, BUDGET, n
        landing = False
        if t + h >= t_total:
            h = t_total - t
            landing = True
        nu, nv, nw, eu, ev, ew = _rk45_step3(u, v, w, h, P)
        err = _err_norm3(u, v, w, nu, nv, nw, eu, ev, ew, P)
        n += 1
        if err <= 1.0:
            t = t_total if landing else t + h
            u, v, w = nu, nv, nw
            fac = 5.0 if err < 1e-300 else min(5.0, max(0.2, 0.9 * err**-0.2))
            h = h * fac
        else:
            h = h * max(0.2, 0.9 * err**-0.2)
            if h < P[MINSTEP]:
                return u, v, w, STEP_UNDERFLOW, n
    return u, v, w, OK, n


@njit(cache=True)
def _step_to3(u, v, w, tau, P):
    """Single uncontrolled step of size tau from (u,v,w) (event refinement)."""
    nu, nv, nw, _, _, _ = _rk45_step3(u, v, w, tau, P)
    return nu, nv, nw


@njit(cache=True, nogil=True)
def integrate_exit3(u, v, w, radius, P, buf):
    """Integrate until |z| crosses `radius` outward; record dense samples.

    Starts may lie on the sphere (moving inward) or strictly inside.  The
    exit event arms once the norm is strictly below radius and fires on the
    first accepted step whose endpoint norm reaches radius; the crossing
    time is then located by bisection to 2^-60 of the step.

    buf rows are (t, u, v, w, psi); when full, every other row is dropped
    and the recording stride doubles.  Returns
    (T, u_T, v_T, w_T, status, n_rows, T1) where T1 is the first time with
    |u| >= |(v,w)| (tan-theta = 1), -1.0 if tan-theta(0) <= 1 never crossed
    because it started there (caller handles), located by the same bisection.
    """
    t = 0.0
    h = _initial_step3(u, v, w, P)
    n = 0
    max_steps = int(P[MAXSTEPS])
    cap = buf.shape[0]
    stride = 1
    n_rows = 0
    since = 0

    r = np.sqrt(u * u + v * v + w * w)
    ps, _ = psi_pair(r, P)
    buf[0, 0] = 0.0
    buf[0, 1] = u
    buf[0, 2] = v
    buf[0, 3] = w
    buf[0, 4] = ps
    n_rows = 1

    armed = r < radius * (1.0 - 1e-13)
    s0 = abs(u) - np.sqrt(v * v + w * w)
    T1 = 0.0 if s0 >= 0.0 else -1.0

    while True:
        if n >= max_steps:
            return t, u, v, w, BUDGET, n_rows, T1
        nu, nv, nw, eu, ev, ew = _rk45_step3(u, v, w, h, P)
        err = _err_norm3(u, v, w, nu, nv, nw, eu, ev, ew, P)
        n += 1
        if err > 1.0:
            h = h * max(0.2, 0.9 * err**-0.2)
            if h < P[MINSTEP]:
                return t, u, v, w, STEP_UNDERFLOW, n_rows, T1
            continue

        new_r = np.sqrt(nu * nu + nv * nv + nw * nw)

        if T1 < 0.0:
            s_new = abs(nu) - np.sqrt(nv * nv + nw * nw)
            if s_new >= 0.0:
                lo, hi = 0.0, h
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    mu, mv, mw = _step_to3(u, v, w, mid, P)
                    if abs(mu) - np.sqrt(mv * mv + mw * mw) >= 0.0:
                        hi = mid
                    else:
                        lo = mid
                T1 = t + hi

        if armed and new_r >= radius:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                mu, mv, mw = _step_to3(u, v, w, mid, P)
                if np.sqrt(mu * mu + mv * mv + mw * mw) >= radius:
                    hi = mid
                else:
                    lo = mid
            fu, fv, fw = _step_to3(u, v, w, hi, P)
            T = t + hi
            fr = np.sqrt(fu * fu + fv * fv + fw * fw)
            ps, _ = psi_pair(fr, P)
            if n_rows < cap:
                buf[n_rows, 0] = T
                buf[n_rows, 1] = fu
                buf[n_rows, 2] = fv
                buf[n_rows, 3] = fw
                buf[n_rows, 4] = ps
                n_rows += 1
            return T, fu, fv, fw, OK, n_rows, T1

        if not armed and new_r < radius * (1.0 - 1e-13):
            armed = True

        t += h
        u, v, w = nu, nv, nw
        since += 1
        if since >= stride:
            since = 0
            if n_rows >= cap:
                half = n_rows // 2
                for i in range(half):
                    for j in range(5):
                        buf[i, j] = buf[2 * i, j]
                n_rows = half
                stride *= 2
            ps, _ = psi_pair(new_r, P)
            buf[n_rows, 0] = t
            buf[n_rows, 1] = u
            buf[n_rows, 2] = v
            buf[n_rows, 3] = w
            buf[n_rows, 4] = ps
            n_rows += 1

        fac = 5.0 if err < 1e-300 else min(5.0, max(0.2, 0.9 * err**-0.2))
        h = h * fac


@njit(cache=True, nogil=True)
def integrate_entry3(u, v, w, radius, t_max, P):
    """Integrate until |z| first crosses `radius` downward, within t_max.

    Returns (t_in, u, v, w, status); the crossing is located by bisection to
    2^-60 of the bracketing step.  A start already strictly inside the
    radius returns immediately with t_in = 0.  NO_EVENT means the norm
    stayed at or above the radius for all of [0, t_max].
    """
    r = np.sqrt(u * u + v * v + w * w)
    if r < radius:
        return 0.0, u, v, w, OK
    t = 0.0
    h = min(_initial_step3(u, v, w, P), t_max)
    n = 0
    max_steps = int(P[MAXSTEPS])
    while t < t_max:
        if n >= max_steps:
            return t, u, v, w, BUDGET
        if t + h > t_max:
            h = t_max - t
        nu, nv, nw, eu, ev, ew = _rk45_step3(u, v, w, h, P)
        err = _err_norm3(u, v, w, nu, nv, nw, eu, ev, ew, P)
        n += 1
        if err > 1.0:
            h = h * max(0.2, 0.9 * err**-0.2)
            if h < P[MINSTEP]:
                return t, u, v, w, STEP_UNDERFLOW
            continue
        if np.sqrt(nu * nu + nv * nv + nw * nw) < radius:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                mu, mv, mw = _step_to3(u, v, w, mid, P)
                if np.sqrt(mu * mu + mv * mv + mw * mw) < radius:
                    hi = mid
                else:
                    lo = mid
            fu, fv, fw = _step_to3(u, v, w, hi, P)
            return t + hi, fu, fv, fw, OK
        t += h
        u, v, w = nu, nv, nw
        fac = 5.0 if err < 1e-300 else min(5.0, max(0.2, 0.9 * err**-0.2))
        h = h * fac
    return t, u, v, w, NO_EVENT


@njit(cache=True, nogil=True)
def integrate_dense3(u, v, w, t_total, P, buf):
    """Like integrate_fixed3 but recording (t,u,v,w,psi) rows into buf.

    Returns (u, v, w, status, n_rows); stride doubles when buf fills.
    """
    t = 0.0
    h = min(_initial_step3(u, v, w, P), t_total)
    n = 0
    max_steps = int(P[MAXSTEPS])
    cap = buf.shape[0]
    stride = 1
    since = 0
    r = np.sqrt(u * u + v * v + w * w)
    ps, _ = psi_pair(r, P)
    buf[0, 0] = 0.0
    buf[0, 1] = u
    buf[0, 2] = v
    buf[0, 3] = w
    buf[0, 4] = ps
    n_rows = 1
    while t < t_total:
        if n >= max_steps:
            return u, v, w, BUDGET, n_rows
        landing = False
        if t + h >= t_total:
            h = t_total - t
            landing = True
        nu, nv, nw, eu, ev, ew = _rk45_step3(u, v, w, h, P)
        err = _err_norm3(u, v, w, nu, nv, nw, eu, ev, ew, P)
        n += 1
        if err <= 1.0:
            t = t_total if landing else t + h
            u, v, w = nu, nv, nw
            since += 1
            if since >= stride or landing:
                since = 0
                if n_rows >= cap:
                    half = n_rows // 2
                    for i in range(half):
                        for j in range(5):
                            buf[i, j] = buf[2 * i, j]
                    n_rows = half
                    stride *= 2
                r = np.sqrt(u * u + v * v + w * w)
                ps, _ = psi_pair(r, P)
                buf[n_rows, 0] = t
                buf[n_rows, 1] = u
                buf[n_rows, 2] = v
                buf[n_rows, 3] = w
                buf[n_rows, 4] = ps
                n_rows += 1
            fac = 5.0 if err < 1e-300 else min(5.0, max(0.2, 0.9 * err**-0.2))
            h = h * fac
        else:
            h = h * max(0.2, 0.9 * err**-0.2)
            if h < P[MINSTEP]:
                return u, v, w, STEP_UNDERFLOW, n_rows
    return u, v, w, OK, n_rows


@njit(cache=True)
def var_field6(u, v, w, du, dv, dw, P):
    """Slowed field plus its derivative along a tangent vector."""
    g, b = P[GAMMA], P[BETA]
    r = np.sqrt(u * u + v * v + w * w)
    ps, dps = psi_pair(r, P)
    fu, fv, fw = ps * g * u, -ps * b * v, -ps * b * w
    if r > 0.0:
        zdot = (u * du + v * dv + w * dw) / r
    else:
        zdot = 0.0
    gu = dps * zdot * g * u + ps * g * du
    gv = -dps * zdot * b * v - ps * b * dv
    gw = -dps * zdot * b * w - ps * b * dw
    return fu, fv, fw, gu, gv, gw


@njit(cache=True)
def _var_field_arr(y, out, P):
    fu, fv, fw, gu, gv, gw = var_field6(y[0], y[1], y[2], y[3], y[4], y[5], P)
    out[0] = fu
    out[1] = fv
    out[2] = fw
    out[3] = gu
    out[4] = gv
    out[5] = gw


@njit(cache=True)
def _rk45_step6(y, h, P, ynew, eout, k, tmp):
    """Dormand-Prince step for the 6D variational system (array form)."""
    _var_field_arr(y, k[0], P)
    for i in range(6):
        tmp[i] = y[i] + h * _A21 * k[0, i]
    _var_field_arr(tmp, k[1], P)
    for i in range(6):
        tmp[i] = y[i] + h * (_A31 * k[0, i] + _A32 * k[1, i])
    _var_field_arr(tmp, k[2], P)
    for i in range(6):
        tmp[i] = y[i] + h * (_A41 * k[0, i] + _A42 * k[1, i] + _A43 * k[2, i])
    _var_field_arr(tmp, k[3], P)
    for i in range(6):
        tmp[i] = y[i] + h * (_A51 * k[0, i] + _A52 * k[1, i] + _A53 * k[2, i]
                             + _A54 * k[3, i])
    _var_field_arr(tmp, k[4], P)
    for i in range(6):
        tmp[i] = y[i] + h * (_A61 * k[0, i] + _A62 * k[1, i] + _A63 * k[2, i]
                             + _A64 * k[3, i] + _A65 * k[4, i])
    _var_field_arr(tmp, k[5], P)
    for i in range(6):
        ynew[i] = y[i] + h * (_B1 * k[0, i] + _B3 * k[2, i] + _B4 * k[3, i]
                              + _B5 * k[4, i] + _B6 * k[5, i])
    _var_field_arr(ynew, k[6], P)
    for i in range(6):
        eout[i] = h * (_E1 * k[0, i] + _E3 * k[2, i] + _E4 * k[3, i]
                       + _E5 * k[4, i] + _E6 * k[5, i] + _E7 * k[6, i])


@njit(cache=True)
def _err_norm6(y, ynew, eout, P):
    rt, at = P[RTOL], P[ATOL]
    acc = 0.0
    for i in range(6):
        s = at + rt * max(abs(y[i]), abs(ynew[i]))
        acc += (eout[i] / s) ** 2
    return np.sqrt(acc / 6.0)


@njit(cache=True, nogil=True)
def integrate_fixed6(y0, t_total, P):
    """Point + tangent over exactly t_total; returns (y, status, n_steps)."""
    y = y0.copy()
    ynew = np.empty(6)
    eout = np.empty(6)
    k = np.empty((7, 6))
    tmp = np.empty(6)
    t = 0.0
    h = min(_initial_step3(y[0], y[1], y[2], P), t_total)
    n = 0
    max_steps = int(P[MAXSTEPS])
    while t < t_total:
        if n >= max_steps:
            return y, BUDGET, n
        landing = False
        if t + h >= t_total:
            h = t_total - t
            landing = True
        _rk45_step6(y, h, P, ynew, eout, k, tmp)
        err = _err_norm6(y, ynew, eout, P)
        n += 1
        if err <= 1.0:
            t = t_total if landing else t + h
            for i in range(6):
                y[i] = ynew[i]
            fac = 5.0 if err < 1e-300 else min(5.0, max(0.2, 0.9 * err**-0.2))
            h = h * fac
        else:
            h = h * max(0.2, 0.9 * err**-0.2)
            if h < P[MINSTEP]:
                return y, STEP_UNDERFLOW, n
    return y, OK, n


@njit(cache=True, nogil=True)
def integrate_exit6(y0, radius, P):
    """Point + tangent until the point's norm crosses `radius` outward.

    Same event logic as integrate_exit3 without dense recording; returns
    (T, y_at_T, status).
    """
    y = y0.copy()
    ynew = np.empty(6)
    eout = np.empty(6)
    k = np.empty((7, 6))
    tmp = np.empty(6)
    yev = np.empty(6)
    kev = np.empty((7, 6))
    t = 0.0
    h = _initial_step3(y[0], y[1], y[2], P)
    n = 0
    max_steps = int(P[MAXSTEPS])
    r = np.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
    armed = r < radius * (1.0 - 1e-13)
    while True:
        if n >= max_steps:
            return t, y, BUDGET
        _rk45_step6(y, h, P, ynew, eout, k, tmp)
        err = _err_norm6(y, ynew, eout, P)
        n += 1
        if err > 1.0:
            h = h * max(0.2, 0.9 * err**-0.2)
            if h < P[MINSTEP]:
                return t, y, STEP_UNDERFLOW
            continue
        new_r = np.sqrt(ynew[0] ** 2 + ynew[1] ** 2 + ynew[2] ** 2)
        if armed and new_r >= radius:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                _rk45_step6(y, mid, P, yev, eout, kev, tmp)
                if np.sqrt(yev[0] ** 2 + yev[1] ** 2 + yev[2] ** 2) >= radius:
                    hi = mid
                else:
                    lo = mid
            _rk45_step6(y, hi, P, yev, eout, kev, tmp)
            for i in range(6):
                y[i] = yev[i]
            return t + hi, y, OK
        if not armed and new_r < radius * (1.0 - 1e-13):
            armed = True
        t += h
        for i in range(6):
            y[i] = ynew[i]
        fac = 5.0 if err < 1e-300 else min(5.0, max(0.2, 0.9 * err**-0.2))
        h = h * fac


@njit(cache=True)
def horner_pair(u, a, b):
    """Evaluate both chart coefficient polynomials at u."""
    av = 0.0
    bv = 0.0
    for i in range(len(a) - 1, -1, -1):
        av = av * u + a[i]
        bv = bv * u + b[i]
    return av, bv


@njit(cache=True)
def lift_scalar(t):
    return 0.5 - (0.5 - t) % 1.0


@njit(cache=True)
def apply_F_scalar(t, x, y, P):
    arg = TWO_PI * t
    return ((P[M] * t) % 1.0, P[LAM] * x + P[ETA] * np.cos(arg),
            P[LAM] * y + P[ETA] * np.sin(arg))


@njit(cache=True)
def chart_norm(t, x, y, a, b):
    """Norm of the chart image of q (valid in the chart angular domain)."""
    u = lift_scalar(t)
    av, bv = horner_pair(u, a, b)
    cv = x - av
    cw = y - bv
    return np.sqrt(u * u + cv * cv + cw * cw)


@njit(cache=True)
def apply_g_scalar(t, x, y, P, a, b):
    """One step of the hybrid map; returns (t', x', y', used_chart, status)."""
    u = lift_scalar(t)
    av, bv = horner_pair(u, a, b)
    cv = x - av
    cw = y - bv
    if np.sqrt(u * u + cv * cv + cw * cw) <= P[VRAD]:
        zu, zv, zw, status, _ = integrate_fixed3(u, cv, cw, 1.0, P)
        if status != OK:
            return t, x, y, True, status
        av1, bv1 = horner_pair(zu, a, b)
        return zu % 1.0, zv + av1, zw + bv1, True, OK
    t2, x2, y2 = apply_F_scalar(t, x, y, P)
    return t2, x2, y2, False, OK


@njit(cache=True, nogil=True)
def apply_g_batch(pts, P, a, b):
    """Vectorized hybrid step over an (n, 3) array; returns (out, status)."""
    n = pts.shape[0]
    out = np.empty_like(pts)
    for i in range(n):
        t2, x2, y2, _, status = apply_g_scalar(pts[i, 0], pts[i, 1],
                                               pts[i, 2], P, a, b)
        if status != OK:
            return out, status
        out[i, 0] = t2
        out[i, 1] = x2
        out[i, 2] = y2
    return out, OK


@njit(cache=True, nogil=True)
def orbit_kernel(t, x, y, n_burn, n_keep, P, a, b, kicks, kick_every, out):
    """Iterate the hybrid map, storing n_keep points after n_burn burn-in.

    kicks is a pre-drawn array of angle offsets (one per kick event, scale
    already applied) consumed in order; a kick is applied every kick_every
    steps to refresh the low bits of the angle (see solenoid.kick_angle).
    Returns (status, step): the failing step index, or the total on success.
    """
    ki = 0
    total = n_burn + n_keep
    for step in range(total):
        t, x, y, _, status = apply_g_scalar(t, x, y, P, a, b)
        if status != OK:
            return status, step
        if kick_every > 0 and (step + 1) % kick_every == 0 and ki < len(kicks):
            t = (t + kicks[ki]) % 1.0
            ki += 1
        if step >= n_burn:
            j = step - n_burn
            out[j, 0] = t
            out[j, 1] = x
            out[j, 2] = y
    return OK, total


@njit(cache=True, nogil=True)
def return_times_kernel(starts, t_lo, t_hi, cap, P, a, b, kicks, kick_every,
                        taus):
    """First hitting time of the angular window for each start point.

    taus[i] = min k in [1, cap] with angle of g^k(q_i) in [t_lo, t_hi);
    0 marks a right-censored start (no hit within cap).  kicks/kick_every
    dither the angle as in orbit_kernel (the same pre-drawn sequence is
    replayed for every start, keeping results order-independent).
    Returns a status.
    """
    n = starts.shape[0]
    for i in range(n):
        t, x, y = starts[i, 0], starts[i, 1], starts[i, 2]
        taus[i] = 0
        ki = 0
        for k in range(1, cap + 1):
            t, x, y, _, status = apply_g_scalar(t, x, y, P, a, b)
            if status != OK:
                return status
            if t_lo <= t < t_hi:
                taus[i] = k
                break
            if kick_every > 0 and k % kick_every == 0 and ki < len(kicks):
                t = (t + kicks[ki]) % 1.0
                ki += 1
    return OK
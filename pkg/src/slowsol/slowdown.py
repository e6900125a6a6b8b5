"""The slow-down profile, the slowed flow, and the hybrid global map.

The profile psi multiplies the linear saddle field A = diag(gamma, -beta,
-beta) in chart coordinates: psi(r) = r^alpha below r0 freezes the flow
polynomially near the origin, psi = 1 beyond r1 leaves it untouched, and a
monotone cubic Hermite bridges [r0, r1].  The global map applies the
time-one flow of the slowed field to points whose chart image lies in the
membership ball of radius V_radius and the plain solenoid map elsewhere;
the parameter constraint r1/lam <= V_radius makes the two branches agree
wherever trajectories stay outside the slow ball, which
branch_consistency_audit measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .chart import (
    SeriesCoefficients,
    eval_ab_prime,
    from_chart,
    series_coefficients,
    to_chart,
)
from .constants import (
    DerivedConstants,
    SlowdownParams,
    SolenoidParams,
    derive_constants,
    require_valid,
)
from .errors import BudgetExceeded, StepFailure, ValidationError
from .solenoid import apply_F, differential_F
from .util import rng_stream, torus_dist


@dataclass(frozen=True)
class PsiProfile:
    """Slow-down factor: r^alpha_slow below r0, 1 above r1, Hermite between.

    Construction verifies the blend numerically: one-sided values and slopes
    agree at both knots to 1e-12, and the profile is strictly increasing on
    a dense grid over [r0, r1].
    """

    alpha_slow: float
    r0: float
    r1: float

    def __post_init__(self):
        if not (0.0 < self.r0 < self.r1):
            raise ValidationError("need 0 < r0 < r1")
        P = self._packed()
        lo_v, lo_d = K.psi_pair(self.r0 * (1 - 1e-14), P)
        hi_v, hi_d = K.psi_pair(self.r0 * (1 + 1e-14), P)
        if abs(lo_v - hi_v) > 1e-12 or abs(lo_d - hi_d) > 1e-9 * abs(lo_d):
            raise ValidationError("profile not continuous at r0")
        lo_v, lo_d = K.psi_pair(self.r1 * (1 - 1e-14), P)
        # the probe sits 1e-14*r1 inside the knot, where the blend slope is
        # O(eps/width^2); tolerate it relative to the blend's natural slope
        slope_scale = (1.0 - self.r0**self.alpha_slow) / (self.r1 - self.r0)
        if abs(lo_v - 1.0) > 1e-12 or abs(lo_d) > 1e-9 * (1.0 + slope_scale):
            raise ValidationError("profile not continuous at r1")
        grid = np.linspace(self.r0, self.r1, 10_000)
        vals = self.psi(grid)
        if not np.all(np.diff(vals) > 0):
            raise ValidationError(
                "Hermite blend is not strictly increasing on [r0, r1] for "
                f"alpha={self.alpha_slow}, r0={self.r0}, r1={self.r1}"
            )

    def _packed(self) -> np.ndarray:
        P = np.zeros(15)
        P[K.ALPHA], P[K.R0], P[K.R1] = self.alpha_slow, self.r0, self.r1
        return P

    def psi(self, r):
        P = self._packed()
        r = np.asarray(r, dtype=float)
        if r.ndim == 0:
            return K.psi_pair(float(r), P)[0]
        return np.array([K.psi_pair(float(x), P)[0] for x in r])

    def dpsi(self, r):
        P = self._packed()
        r = np.asarray(r, dtype=float)
        if r.ndim == 0:
            return K.psi_pair(float(r), P)[1]
        return np.array([K.psi_pair(float(x), P)[1] for x in r])

    def to_csv(self, path, r_max: float | None = None, n: int = 2001) -> None:
        r_max = 2.0 * self.r1 if r_max is None else r_max
        grid = np.linspace(0.0, r_max, n)
        with open(path, "w") as f:
            f.write("r,psi,dpsi\n")
            for r in grid:
                f.write(f"{float(r)!r},{float(self.psi(r))!r},"
                        f"{float(self.dpsi(r))!r}\n")


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_steps: int = 1_000_000
    min_step: float = 1e-12

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValidationError("tolerances must be positive")


def psi(r: float, prof: PsiProfile) -> float:
    return prof.psi(r)


def pack_params(
    prof: PsiProfile,
    c: DerivedConstants,
    icfg: IntegratorConfig,
    sol: SolenoidParams | None = None,
    sd: SlowdownParams | None = None,
) -> np.ndarray:
    """Pack everything the kernels need into the flat parameter vector."""
    P = np.zeros(15)
    P[K.ALPHA], P[K.R0], P[K.R1] = prof.alpha_slow, prof.r0, prof.r1
    P[K.GAMMA], P[K.BETA] = c.gamma, c.beta
    P[K.RTOL], P[K.ATOL] = icfg.rel_tol, icfg.abs_tol
    P[K.MAXSTEPS], P[K.MINSTEP] = float(icfg.max_steps), icfg.min_step
    if sol is not None:
        P[K.M], P[K.LAM], P[K.ETA] = float(sol.m), sol.lam, sol.eta
    if sd is not None:
        P[K.VRAD], P[K.CRAD] = sd.V_radius, sd.chart_radius
    P[K.DHW] = 0.5
    return P


def slow_field(z, prof: PsiProfile, c: DerivedConstants) -> np.ndarray:
    """psi(|z|) * (gamma u, -beta v, -beta w)."""
    z = np.asarray(z, dtype=float)
    P = pack_params(prof, c, IntegratorConfig())
    return np.array(K.field3(z[0], z[1], z[2], P))


def _raise_for_status(status: int, context: str):
    if status == K.STEP_UNDERFLOW:
        raise StepFailure(f"{context}: step size underflow below min_step")
    if status == K.BUDGET:
        raise BudgetExceeded(f"{context}: step budget exhausted")


def time_one_map(z, prof: PsiProfile, c: DerivedConstants,
                 icfg: IntegratorConfig | None = None) -> np.ndarray:
    """Integrate the slowed field from z for unit time."""
    icfg = icfg or IntegratorConfig()
    z = np.asarray(z, dtype=float)
    P = pack_params(prof, c, icfg)
    u, v, w, status, _ = K.integrate_fixed3(z[0], z[1], z[2], 1.0, P)
    _raise_for_status(status, "time_one_map")
    out = np.array([u, v, w])
    # a priori growth bound: |z(t)| <= e^(gamma t) |z(0)|
    growth = np.exp(c.gamma)
    if np.linalg.norm(out) > growth * np.linalg.norm(z) * (1 + 1e-9):
        raise StepFailure(
            "time_one_map violated the norm growth bound "
            f"(|out| = {np.linalg.norm(out):.6e}, |in| = {np.linalg.norm(z):.6e})"
        )
    return out


def time_one_dense(z, prof: PsiProfile, c: DerivedConstants,
                   icfg: IntegratorConfig | None = None, t_total: float = 1.0,
                   cap: int = 200_000):
    """Dense trajectory of the slowed flow: array of (t, u, v, w, psi) rows."""
    icfg = icfg or IntegratorConfig()
    z = np.asarray(z, dtype=float)
    P = pack_params(prof, c, icfg)
    buf = np.empty((cap, 5))
    _, _, _, status, n_rows = K.integrate_dense3(z[0], z[1], z[2], t_total,
                                                 P, buf)
    _raise_for_status(status, "time_one_dense")
    return buf[:n_rows].copy()


def trajectory_csv(path, z, prof, c, icfg=None, t_total: float = 1.0) -> None:
    rows = time_one_dense(z, prof, c, icfg, t_total)
    with open(path, "w") as f:
        f.write("time,u,v,w,psi\n")
        for t, u, v, w, ps in rows:
            f.write(f"{float(t)!r},{float(u)!r},{float(v)!r},{float(w)!r},"
                    f"{float(ps)!r}\n")


def linear_min_norm(z, c: DerivedConstants, horizon: float = 1.0) -> float:
    """Minimum of |e^(tA) z| over [0, horizon] for the unslowed linear flow.

    n(t)^2 = u^2 e^(2 gamma t) + s^2 e^(-2 beta t) has a unique interior
    critical point t* = log(beta s^2 / (gamma u^2)) / (2 (gamma + beta)),
    clamped to the horizon.
    """
    z = np.asarray(z, dtype=float)
    u2 = z[0] ** 2
    s2 = z[1] ** 2 + z[2] ** 2

    def norm_at(t):
        return np.sqrt(u2 * np.exp(2 * c.gamma * t)
                       + s2 * np.exp(-2 * c.beta * t))

    if u2 == 0.0:
        return norm_at(horizon)
    if s2 == 0.0:
        return norm_at(0.0)
    t_star = np.log(c.beta * s2 / (c.gamma * u2)) / (2 * (c.gamma + c.beta))
    t_star = min(max(t_star, 0.0), horizon)
    return float(min(norm_at(0.0), norm_at(t_star), norm_at(horizon)))


class SlowdownMap:
    """The hybrid global map: slowed time-one flow in the chart ball, the
    solenoid map outside.  Implements the mapper protocol shared with
    SolenoidMap (step / step_many / tangent_step / jacobian)."""

    def __init__(
        self,
        sol: SolenoidParams | None = None,
        sd: SlowdownParams | None = None,
        icfg: IntegratorConfig | None = None,
        coeffs: SeriesCoefficients | None = None,
    ):
        self.sol = sol or SolenoidParams()
        self.sd = sd or SlowdownParams()
        self.icfg = icfg or IntegratorConfig()
        require_valid(self.sol, self.sd, integrator=self.icfg)
        self.constants = derive_constants(self.sol, self.sd)
        self.profile = PsiProfile(alpha_slow=self.sd.alpha, r0=self.sd.r0,
                                  r1=self.sd.r1)
        self.coeffs = coeffs if coeffs is not None else series_coefficients(
            self.sol, K=self.sd.series_K)
        self.P = pack_params(self.profile, self.constants, self.icfg,
                             self.sol, self.sd)
        self._a = np.asarray(self.coeffs.a, dtype=float)
        self._b = np.asarray(self.coeffs.b, dtype=float)

    # -- membership ---------------------------------------------------------

    def chart_norm(self, q) -> float:
        q = np.asarray(q, dtype=float)
        return float(K.chart_norm(q[0], q[1], q[2], self._a, self._b))

    def in_V(self, q) -> bool:
        return self.chart_norm(q) <= self.sd.V_radius

    def meets_ball_in_one_step(self, q) -> bool:
        """True when the continuous one-step trajectory touches B(0, r1).

        Outside the ball the slowed and linear flows coincide, so the
        trajectory reaches radius r1 exactly when the linear one does; the
        closed-form linear minimum decides without integration.
        """
        if not self.in_V(q):
            return False
        z = to_chart(q, self.coeffs)
        if np.linalg.norm(z) <= self.sd.r1:
            return True
        return linear_min_norm(z, self.constants) <= self.sd.r1

    # -- mapper protocol ----------------------------------------------------

    def step(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        t, x, y, _, status = K.apply_g_scalar(q[0], q[1], q[2], self.P,
                                              self._a, self._b)
        _raise_for_status(status, "apply_g")
        return np.array([t, x, y])

    def step_many(self, Q) -> np.ndarray:
        Q = np.ascontiguousarray(Q, dtype=float)
        out, status = K.apply_g_batch(Q, self.P, self._a, self._b)
        _raise_for_status(status, "apply_g")
        return out

    def _chart_tangent_in(self, u, v):
        ap, bp = eval_ab_prime(self.coeffs, u)
        return np.array([v[0], v[1] - ap * v[0], v[2] - bp * v[0]])

    def _chart_tangent_out(self, u, d):
        ap, bp = eval_ab_prime(self.coeffs, u)
        return np.array([d[0], d[1] + ap * d[0], d[2] + bp * d[0]])

    def tangent_step(self, q, v):
        """One hybrid step of point and tangent; returns (q', v', stretch)."""
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.in_V(q):
            z = to_chart(q, self.coeffs)
            d = self._chart_tangent_in(z[0], v)
            y0 = np.concatenate([z, d])
            y1, status, _ = K.integrate_fixed6(y0, 1.0, self.P)
            _raise_for_status(status, "tangent_step")
            q2 = from_chart(y1[:3], self.coeffs)
            v2 = self._chart_tangent_out(y1[0], y1[3:])
        else:
            q2 = apply_F(q, self.sol)
            v2 = differential_F(q, self.sol) @ v
        stretch = float(np.linalg.norm(v2)) / max(float(np.linalg.norm(v)),
                                                  1e-300)
        return q2, v2, stretch

    def jacobian(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if not self.in_V(q):
            return differential_F(q, self.sol)
        cols = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            _, col, _ = self.tangent_step(q, e)
            cols.append(col)
        return np.column_stack(cols)

    def excluded_from_expansion(self, q) -> bool:
        return self.meets_ball_in_one_step(q)


def apply_g(q, mapper: SlowdownMap) -> np.ndarray:
    """Functional alias for SlowdownMap.step."""
    return mapper.step(q)


def branch_consistency_audit(mapper: SlowdownMap, n_samples: int = 10_000,
                             seed: int = 0) -> dict:
    """Compare the two branch definitions where both are exact.

    Samples chart points in the membership annulus |z| in (r1, V_radius]
    whose linear trajectory stays outside B(0, r1) for the whole unit time
    (so the slowed flow is exactly the linear one and the chart conjugacy
    makes both branches compute the same map); reports the worst
    discrepancy in the torus metric.
    """
    rng = rng_stream(seed, 21)
    c = mapper.constants
    sd = mapper.sd
    worst = 0.0
    worst_point = None
    kept = 0
    while kept < n_samples:
        draw = rng.standard_normal((256, 3))
        draw /= np.linalg.norm(draw, axis=1, keepdims=True)
        radii = sd.V_radius * rng.random(256) ** (1.0 / 3.0)
        Z = draw * radii[:, None]
        for z in Z:
            r = np.linalg.norm(z)
            if r <= sd.r1 or linear_min_norm(z, c) <= sd.r1:
                continue
            kept += 1
            q = from_chart(z, mapper.coeffs)
            flow_branch = mapper.step(q)
            map_branch = apply_F(q, mapper.sol)
            d = float(torus_dist(flow_branch, map_branch))
            if d > worst:
                worst, worst_point = d, q.copy()
            if kept >= n_samples:
                break
    return {
        "n_samples": n_samples,
        "max_discrepancy": worst,
        "worst_point": None if worst_point is None else worst_point.tolist(),
    }

"""Parameter containers and derived rate constants.

The base system is the solenoid map on the solid torus S^1 x D,

    F(t, x, y) = (m t mod 1,  lam x + eta cos 2 pi t,  lam y + eta sin 2 pi t),

with integer expansion factor m >= 2 and disk contraction 0 < lam < 1/m.
The perturbed map slows the dynamics down near the fixed point
p = (0, eta/(1-lam), 0): inside a chart ball it is replaced by the time-one
flow of  z' = psi(||z||) A z  with  A = diag(gamma, -beta, -beta)  and
psi(r) = r^alpha near the origin.

Every quantitative statement downstream — passage-time envelopes, separation
growth through the ball, return-time tail exponents — reduces to a handful of
rate constants derived from (m, lam, alpha).  This module computes and
validates them once; the rest of the package treats them as plain numbers.

Derived constants
-----------------
gamma     = log m           unstable rate of the unperturbed map
beta      = log(1/lam)      stable rate (beta > gamma is required implicitly
                            by lam < 1/m)
chi       = alpha*(beta-gamma)/2
                            lower bound on d/dt ||z||^(-alpha) during the
                            incoming (stable-dominated) phase of a passage
q1_const  = 2/(alpha*(beta-gamma))
                            envelope constant for the incoming phase:
                            ||z(t)||^alpha <= q1_const/(1+t)
q2_const  = 2^(alpha/2)/(alpha*gamma)
                            envelope constant for the outgoing phase:
                            ||z(t)||^alpha <= q2_const/(1+T-t)
gamma1    = gamma*(1+alpha)*(q1_const+q2_const)
                            growth exponent bounding separation of nearby
                            trajectories through the ball: d(T) <= (T+1)^gamma1 d(0)
gamma2    = 1 + 1/alpha     matching lower growth exponent (axis passages
                            realize it exactly)
s1        = 1/alpha - 1     target decay exponent of correlations
s2        = gamma1 - 2      decay exponent available in the fast-mixing regime
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class SolenoidParams:
    """Parameters of the solenoid embedding on the solid torus.

    m   : integer circle expansion factor, >= 2
    lam : disk contraction factor, 0 < lam < 1/m
    eta : radius of the circle traced by the disk centers, 0 < eta < 1;
          lam < min(eta, 1-eta) keeps the m image rings disjoint and inside
          the unit disk.
    """

    m: int = 2
    lam: float = 0.3
    eta: float = 0.6


@dataclass(frozen=True)
class SlowdownParams:
    """Parameters of the slow-down perturbation.

    alpha        : slow-down power, psi(r) = r^alpha for r <= r0; 0 < alpha < 1
    r0, r1       : inner/outer radii of the profile blend, 0 < r0 < r1
    V_radius     : chart-ball radius on which the time-one flow replaces the map
    chart_radius : radius on which the linearizing chart must stay valid;
                   m*V_radius <= chart_radius so one flow step cannot escape it
    series_K     : truncation order of the chart power series
    """

    alpha: float = 0.5
    r0: float = 0.02
    r1: float = 0.04
    V_radius: float = 0.14
    chart_radius: float = 0.30
    series_K: int = 40


@dataclass(frozen=True)
class DerivedConstants:
    """Rate constants derived from (m, lam, alpha).  See module docstring."""

    alpha: float
    gamma: float
    beta: float
    chi: float
    gamma1: float
    gamma2: float
    s1: float
    s2: float
    q1_const: float
    q2_const: float


@dataclass
class ValidationReport:
    """Outcome of the structural parameter checks.

    checks is a list of (name, ok, detail) triples; ok is the conjunction.
    """

    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str) -> None:
        self.checks.append((name, bool(ok), detail))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self) -> list[str]:
        return [name for name, ok, _ in self.checks if not ok]

    def __str__(self) -> str:
        lines = []
        for name, ok, detail in self.checks:
            lines.append(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
        return "\n".join(lines)


def validate_params(
    sol: SolenoidParams,
    slow: SlowdownParams,
    integrator=None,
) -> ValidationReport:
    """Check structural validity of a parameter set.

    Returns a report rather than raising; use require_valid() at construction
    boundaries.  When an integrator config is supplied, its absolute tolerance
    is additionally required to sit two orders of magnitude below r1 so that
    ball-entry events remain resolvable.
    """
    rep = ValidationReport()
    rep.add("m_integer_ge_2", isinstance(sol.m, int) and sol.m >= 2, f"m = {sol.m}")
    rep.add(
        "lam_below_1_over_m",
        0.0 < sol.lam < 1.0 / sol.m,
        f"lam = {sol.lam}, 1/m = {1.0 / sol.m}",
    )
    rep.add("eta_in_unit_interval", 0.0 < sol.eta < 1.0, f"eta = {sol.eta}")
    rep.add(
        "lam_below_min_eta_1_minus_eta",
        sol.lam < min(sol.eta, 1.0 - sol.eta),
        f"lam = {sol.lam}, min(eta, 1-eta) = {min(sol.eta, 1.0 - sol.eta)}",
    )
    rep.add("alpha_in_0_1", 0.0 < slow.alpha < 1.0, f"alpha = {slow.alpha}")
    rep.add(
        "radii_ordered",
        0.0 < slow.r0 < slow.r1 < slow.V_radius,
        f"r0 = {slow.r0}, r1 = {slow.r1}, V_radius = {slow.V_radius}",
    )
    rep.add(
        "chart_covers_one_step",
        sol.m * slow.V_radius <= slow.chart_radius,
        f"m*V_radius = {sol.m * slow.V_radius}, chart_radius = {slow.chart_radius}",
    )
    rep.add(
        "ball_reachable_only_from_V",
        slow.r1 / sol.lam <= slow.V_radius,
        f"r1/lam = {slow.r1 / sol.lam}, V_radius = {slow.V_radius}",
    )
    rep.add(
        "chart_radius_below_half",
        slow.chart_radius < 0.5,
        f"chart_radius = {slow.chart_radius}",
    )
    if integrator is not None:
        rep.add(
            "abs_tol_two_orders_below_r1",
            integrator.abs_tol <= slow.r1 * 1e-2,
            f"abs_tol = {integrator.abs_tol}, r1/100 = {slow.r1 * 1e-2}",
        )
    return rep


def require_valid(sol: SolenoidParams, slow: SlowdownParams, integrator=None) -> None:
    """Raise ValidationError if the parameter set fails any check."""
    from .errors import ValidationError

    rep = validate_params(sol, slow, integrator)
    if not rep.ok:
        raise ValidationError(
            f"invalid parameters, failed checks: {rep.failures()}\n{rep}"
        )


def derive_constants(sol: SolenoidParams, slow: SlowdownParams) -> DerivedConstants:
    """Derive the rate constants from (m, lam, alpha)."""
    alpha = slow.alpha
    gamma = math.log(sol.m)
    beta = math.log(1.0 / sol.lam)
    chi = alpha * (beta - gamma) / 2.0
    q1 = 2.0 / (alpha * (beta - gamma))
    q2 = 2.0 ** (alpha / 2.0) / (alpha * gamma)
    gamma1 = gamma * (1.0 + alpha) * (q1 + q2)
    gamma2 = 1.0 + 1.0 / alpha
    return DerivedConstants(
        alpha=alpha,
        gamma=gamma,
        beta=beta,
        chi=chi,
        gamma1=gamma1,
        gamma2=gamma2,
        s1=1.0 / alpha - 1.0,
        s2=gamma1 - 2.0,
        q1_const=q1,
        q2_const=q2,
    )


@dataclass(frozen=True)
class RegimeReport:
    """Outcome of the fast-mixing-regime check.

    The regime holds when alpha < 1/2 and

        (alpha+1) * (2 gamma/(beta-gamma) + 2^(alpha/2)) < 2 alpha + 1,

    equivalently gamma1 < gamma2 + 1 (tested as an identity elsewhere).
    """

    alpha_ok: bool
    inequality_ok: bool
    lhs: float
    rhs: float

    @property
    def regime(self) -> bool:
        return self.alpha_ok and self.inequality_ok


def check_theorem2_regime(c: DerivedConstants) -> RegimeReport:
    """Check whether the parameters give correlation decay at exponent s2."""
    lhs = (c.alpha + 1.0) * (2.0 * c.gamma / (c.beta - c.gamma) + 2.0 ** (c.alpha / 2.0))
    rhs = 2.0 * c.alpha + 1.0
    return RegimeReport(
        alpha_ok=0.0 < c.alpha < 0.5,
        inequality_ok=lhs < rhs,
        lhs=lhs,
        rhs=rhs,
    )


def constants_dict(sol: SolenoidParams, slow: SlowdownParams) -> dict:
    """Flat dict of the derived constants plus the regime check (JSON-ready)."""
    c = derive_constants(sol, slow)
    reg = check_theorem2_regime(c)
    return {
        "gamma": c.gamma,
        "beta": c.beta,
        "chi": c.chi,
        "gamma1": c.gamma1,
        "gamma2": c.gamma2,
        "s1": c.s1,
        "s2": c.s2,
        "q1_const": c.q1_const,
        "q2_const": c.q2_const,
        "regime_theorem2": reg.regime,
        "regime_lhs": reg.lhs,
        "regime_rhs": reg.rhs,
    }


def constants_json(sol: SolenoidParams, slow: SlowdownParams) -> str:
    return json.dumps(constants_dict(sol, slow), indent=2, sort_keys=True)

"""Single-passage laboratory for the slowed flow.

Everything here studies one trip through the slow-down ball: closed-form
escape times on the unstable axis, event-located passages with their
tan-theta split point, and empirical audits of the passage inequalities --
the two per-phase bounds on |x(t)|^alpha, the (T+1)^gamma1 cap on how far
two nearby unstable-leaf points can separate across a passage, and the
power-law transfer of unstable-curve length through the ball.

Audits run at ``audit_radius = r0`` (the pure-power zone of the profile,
where the bounds' derivations hold exactly); the blend annulus [r0, r1] is
timed separately and reported without a bound.  Trials are independent
with per-trial RNG substreams, so multi-threaded runs aggregate to
byte-identical reports.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .chart import eval_ab_prime, from_chart
from .constants import DerivedConstants
from .errors import (
    BudgetExceeded,
    CurveTooCoarse,
    NoExit,
    OutOfDomain,
    StepFailure,
    ValidationError,
)
from .slowdown import IntegratorConfig, SlowdownMap, pack_params
from .util import rng_stream, torus_dist

SLACK_TOL = 0.01
_EXIT_BUF_CAP = 200_000


# -- closed-form axis oracles -----------------------------------------------

def axis_escape_time(u0: float, r_exit: float, c: DerivedConstants,
                     r0: float) -> float:
    """Exact time for an unstable-axis point to flow from u0 out to r_exit.

    On the axis the slowed field is du/dt = gamma * u^(1+alpha) while
    u <= r0, which integrates to t = (u0^-alpha - r_exit^-alpha) / (alpha
    gamma).  Valid only in the pure-power zone, hence r_exit <= r0.
    """
    if not 0.0 < u0 <= r_exit:
        raise OutOfDomain(f"need 0 < u0 <= r_exit, got u0={u0}, "
                          f"r_exit={r_exit}")
    if r_exit > r0:
        raise OutOfDomain(f"closed form needs r_exit <= r0, got "
                          f"r_exit={r_exit} > r0={r0}")
    a = c.alpha
    return (u0**-a - r_exit**-a) / (a * c.gamma)


def measured_axis_escape_time(u0: float, r_exit: float, mapper: SlowdownMap,
                              icfg: IntegratorConfig | None = None) -> float:
    """Event-located integration of the same escape, for cross-checking."""
    if u0 >= r_exit * (1.0 - 1e-12):
        return 0.0
    P = mapper.P if icfg is None else pack_params(mapper.profile,
                                                  mapper.constants, icfg)
    buf = np.empty((4096, 5))
    T, _, _, _, status, _, _ = K.integrate_exit3(u0, 0.0, 0.0, r_exit, P, buf)
    _raise_for_status(status, "measured_axis_escape_time")
    return float(T)


def _raise_for_status(status: int, context: str) -> None:
    if status == K.STEP_UNDERFLOW:
        raise StepFailure(f"{context}: step size fell below the floor")
    if status == K.BUDGET:
        raise BudgetExceeded(f"{context}: step budget exhausted")


# -- single passages --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BallPassage:
    """One trip through the audit ball, entry to exit.

    samples rows are (t, u, v, w, psi); the last row is the located exit.
    T1 splits the passage where tan(theta) = |(v,w)| / |u| crosses 1
    (T1 = 0 when the entry already has tan(theta) <= 1).  noise_floor is
    the absolute integration noise in (v, w): once the stable components
    decay beneath it they wobble instead of shrinking, so the
    cone-contraction check allows tan fluctuations of that size.
    """

    entry: np.ndarray
    radius: float
    T: float
    T1: float
    samples: np.ndarray
    noise_floor: float = 0.0

    def __post_init__(self):
        exit_norm = float(np.linalg.norm(self.samples[-1, 1:4]))
        if abs(exit_norm - self.radius) > 1e-9:
            raise ValidationError(
                f"exit radius off by {abs(exit_norm - self.radius):.3e}")
        tan = self.tan_theta()
        u = np.maximum(np.abs(self.samples[:-1, 1]), 1e-300)
        slack = 1e-9 * (1.0 + tan[:-1]) + 2.0 * self.noise_floor / u
        if np.any(np.diff(tan) > slack):
            raise ValidationError("tan(theta) failed to decrease along the "
                                  "passage")
        if not 0.0 <= self.T1 <= self.T + 1e-12:
            raise ValidationError(f"T1={self.T1} outside [0, T={self.T}]")

    def tan_theta(self) -> np.ndarray:
        u = np.abs(self.samples[:, 1])
        s = np.hypot(self.samples[:, 2], self.samples[:, 3])
        return s / np.maximum(u, 1e-300)


def compute_passage(entry, audit_radius: float, mapper: SlowdownMap,
                    icfg: IntegratorConfig | None = None) -> BallPassage:
    """Integrate from an on-sphere entry to the located exit event.

    The entry must sit on the audit sphere, inside the pure-power zone
    (audit_radius <= r0).  A pure stable-plane entry (u = 0) never exits
    and raises NoExit; an entry already moving outward returns the
    degenerate passage T = 0.
    """
    entry = np.asarray(entry, dtype=float)
    c = mapper.constants
    if audit_radius > mapper.profile.r0:
        raise OutOfDomain(f"audit_radius={audit_radius} is inside the blend "
                          f"annulus (r0={mapper.profile.r0})")
    if abs(np.linalg.norm(entry) - audit_radius) > 1e-9:
        raise OutOfDomain("entry point is not on the audit sphere")
    if entry[0] == 0.0:
        raise NoExit("entry on the stable plane limits to the origin")
    P = mapper.P if icfg is None else pack_params(mapper.profile, c, icfg)
    u, v, w = entry
    s2 = v * v + w * w
    if c.gamma * u * u >= c.beta * s2:
        # radial derivative is outward at t = 0: degenerate passage
        ps = float(K.psi_pair(audit_radius, P)[0])
        row = np.array([[0.0, u, v, w, ps]])
        return BallPassage(entry=entry, radius=audit_radius, T=0.0, T1=0.0,
                           samples=row)
    buf = np.empty((_EXIT_BUF_CAP, 5))
    T, _, _, _, status, n_rows, T1 = K.integrate_exit3(u, v, w, audit_radius,
                                                       P, buf)
    _raise_for_status(status, "compute_passage")
    return BallPassage(entry=entry, radius=audit_radius, T=float(T),
                       T1=float(T1), samples=buf[:n_rows].copy(),
                       noise_floor=float(P[K.ATOL]))


# -- audit plumbing ---------------------------------------------------------

@dataclass
class AuditReport:
    """Order-independent aggregate of independent audit trials.

    records hold one dict per (trial, quantity) with keys
    trial, quantity, T, bound, observed, ratio, violated; n_violations
    counts records whose observed value exceeds bound * (1 + slack).
    """

    n_trials: int
    n_violations: int
    worst_ratio: float
    records: list[dict] = field(default_factory=list)
    fitted_slope: float | None = None
    slope_ci_lo: float | None = None
    slope_ci_hi: float | None = None

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("trial,quantity,T,bound,observed,ratio,violated\n")
            for r in self.records:
                f.write(f"{r['trial']},{r['quantity']},{float(r['T'])!r},"
                        f"{float(r['bound'])!r},{float(r['observed'])!r},"
                        f"{float(r['ratio'])!r},{int(r['violated'])}\n")

    def summary(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_violations": self.n_violations,
            "worst_ratio": self.worst_ratio,
            "fitted_slope": self.fitted_slope,
            "slope_ci_lo": self.slope_ci_lo,
            "slope_ci_hi": self.slope_ci_hi,
        }

    def write_summary(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def _collect(records_per_trial: list[list[dict]]) -> tuple[list[dict], int,
                                                           float]:
    records: list[dict] = []
    worst = 0.0
    n_viol = 0
    for recs in records_per_trial:
        for r in recs:
            records.append(r)
            worst = max(worst, r["ratio"])
            n_viol += int(r["violated"])
    return records, n_viol, worst


def _fit_loglog(x, y, seed: int, n_boot: int = 200):
    """Least-squares slope of log y vs log x with a bootstrap CI."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.column_stack([lx, np.ones_like(lx)])
    slope = float(np.linalg.lstsq(A, ly, rcond=None)[0][0])
    rng = rng_stream(seed, 77)
    n = len(lx)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, n)
        boot[b] = np.linalg.lstsq(A[idx], ly[idx], rcond=None)[0][0]
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return slope, float(lo), float(hi)


def _run_trials(n_trials: int, one_trial, threads: int) -> list[list[dict]]:
    if threads <= 1:
        return [one_trial(i) for i in range(n_trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one_trial, range(n_trials)))


# -- audit 1: per-phase bounds on |x(t)|^alpha ------------------------------

def _sample_inward_entry(rng, radius: float, c: DerivedConstants):
    """Uniform point on the u > 0 hemisphere, restricted to the inward cone.

    Inward means the radial derivative is negative at entry:
    gamma u^2 < beta s^2, i.e. tan(theta) > sqrt(gamma/beta); a 2% margin
    keeps the exit event well-conditioned.
    """
    thr = np.sqrt(c.gamma / c.beta) * 1.02
    while True:
        mu = rng.random()          # cos(polar angle), uniform on hemisphere
        s = np.sqrt(1.0 - mu * mu)
        if s <= thr * mu:
            continue
        zeta = 2.0 * np.pi * rng.random()
        return radius * np.array([mu, s * np.cos(zeta), s * np.sin(zeta)])


def audit_Q_bounds(n_trials: int, audit_radius: float, mapper: SlowdownMap,
                   *, slack_tol: float = SLACK_TOL, seed: int = 12345,
                   threads: int = 1,
                   annulus_t_max: float = 1e3) -> AuditReport:
    """Check the per-phase passage bounds on random inward entries.

    Phase 1 (t <= T1):   |x(t)|^alpha <= q1 / (1 + t), plus the sharper
                         1 / (R^-alpha + chi t).
    Phase 2 (T1..T):     |x(t)|^alpha <= q2 / (1 + T - t).

    Each trial also times the matching blend-annulus transit (same entry
    direction started on the r1 sphere, clocked down to the audit sphere);
    those rows carry bound = inf and never count as violations.
    """
    c = mapper.constants
    prof = mapper.profile
    if audit_radius > prof.r0:
        raise OutOfDomain(f"audit_radius={audit_radius} is inside the blend "
                          f"annulus (r0={prof.r0})")
    a = c.alpha
    R_pow = audit_radius**-a

    def one_trial(i: int) -> list[dict]:
        rng = rng_stream(seed, 1000 + i)
        entry = _sample_inward_entry(rng, audit_radius, c)
        p = compute_passage(entry, audit_radius, mapper)
        t = p.samples[:, 0]
        rho = np.linalg.norm(p.samples[:, 1:4], axis=1) ** a
        recs = []
        phase1 = t <= p.T1
        for quantity, mask, bound in (
            ("Q1", phase1, c.q1_const / (1.0 + t)),
            ("Q1_sharp", phase1, 1.0 / (R_pow + c.chi * t)),
            ("Q2", ~phase1 | (t == p.T1), c.q2_const / (1.0 + p.T - t)),
        ):
            if not np.any(mask):
                recs.append(dict(trial=i, quantity=quantity, T=p.T,
                                 bound=np.inf, observed=0.0, ratio=0.0,
                                 violated=False))
                continue
            ratios = rho[mask] / bound[mask]
            j = int(np.argmax(ratios))
            recs.append(dict(trial=i, quantity=quantity, T=p.T,
                             bound=float(bound[mask][j]),
                             observed=float(rho[mask][j]),
                             ratio=float(ratios[j]),
                             violated=bool(ratios[j] > 1.0 + slack_tol)))
        direction = entry / audit_radius
        e1 = prof.r1 * direction
        t_in, _, _, _, status = K.integrate_entry3(
            e1[0], e1[1], e1[2], audit_radius, annulus_t_max, mapper.P)
        if status == K.OK:
            recs.append(dict(trial=i, quantity="annulus_transit", T=t_in,
                             bound=np.inf, observed=float(t_in), ratio=0.0,
                             violated=False))
        return recs

    per_trial = _run_trials(n_trials, one_trial, threads)
    records, n_viol, worst = _collect(per_trial)
    return AuditReport(n_trials=n_trials, n_violations=n_viol,
                       worst_ratio=worst, records=records)


# -- audit 2: pair separation across a passage ------------------------------

def audit_pair_separation(n_trials: int, mapper: SlowdownMap, *,
                          audit_radius: float | None = None,
                          delta0: float = 1e-9, seed: int = 12345,
                          depth_floor: float = 3e-8,
                          slack_tol: float = SLACK_TOL) -> AuditReport:
    """Measure separation growth of unstable-direction pairs through a
    passage of the slow ball.

    Each trial places an entry point on the audit sphere with the
    unstable component log-distributed over [depth_floor, 0.75 R] and a
    random stable azimuth (the stable plane is rotation-symmetric), then
    flows the variational system with an unstable-direction offset of
    size delta0 until the norm exits the sphere.  Varying the unstable
    component sweeps the passage duration T over decades: the shallower
    the entry, the longer the stall and the harder the pair is stretched
    on exit.  The per-trial ratio rho = |delta(T)| / delta0 is checked
    against (T+1)^gamma1 and the (T, rho) cloud is fitted for the growth
    exponent.

    The entry points sit at the Cantor-transverse positions of generic
    attractor branches only in the angle coordinate; their offset pair is
    taken along the unstable axis itself, which is the tangent of every
    local unstable curve at the chart origin.  This constructed ensemble
    probes the sharp passage amplification; orbit-harvested entries would
    mix in the branch-offset suppression that the survival statistics
    measure separately.
    """
    c = mapper.constants
    R = mapper.profile.r0 if audit_radius is None else audit_radius
    if R > mapper.profile.r0:
        raise OutOfDomain(f"audit_radius={R} is inside the blend annulus "
                          f"(r0={mapper.profile.r0})")
    if not 0.0 < depth_floor < 0.75 * R:
        raise ValidationError(f"depth_floor={depth_floor} must lie in "
                              f"(0, 0.75*R) with R={R}")

    records: list[dict] = []
    Ts: list[float] = []
    rhos: list[float] = []
    n_viol = 0
    worst = 0.0
    lo_u, hi_u = np.log(depth_floor), np.log(0.75 * R)
    for i in range(n_trials):
        rng = rng_stream(seed, i)
        u0 = float(np.exp(lo_u + (hi_u - lo_u) * rng.random()))
        phi = 2.0 * np.pi * rng.random()
        s = np.sqrt(R * R - u0 * u0)
        y0 = np.array([u0, s * np.cos(phi), s * np.sin(phi),
                       delta0, 0.0, 0.0])
        T, y_T, status = K.integrate_exit6(y0, R, mapper.P)
        if status != K.OK:
            raise StepFailure(f"pair-separation trial {i}: passage "
                              f"integration failed with status {status}")
        rho = float(np.linalg.norm(y_T[3:]) / delta0)
        bound = (T + 1.0) ** c.gamma1
        ratio = rho / bound
        violated = ratio > 1.0 + slack_tol
        records.append(dict(trial=i, quantity="separation", T=float(T),
                            bound=float(bound), observed=rho,
                            ratio=float(ratio), violated=bool(violated)))
        Ts.append(float(T))
        rhos.append(rho)
        n_viol += int(violated)
        worst = max(worst, ratio)

    report = AuditReport(n_trials=n_trials, n_violations=n_viol,
                         worst_ratio=worst, records=records)
    if n_trials >= 3:
        slope, lo, hi = _fit_loglog(np.asarray(Ts) + 1.0, rhos, seed)
        report.fitted_slope = slope
        report.slope_ci_lo = lo
        report.slope_ci_hi = hi
    return report


# -- audit 3: curve length through the ball ---------------------------------

def _curve_point(theta, coeffs):
    """Exact unstable-curve point at a given angle (the chart axis image)."""
    theta = np.asarray(theta, dtype=float)
    z = np.zeros(theta.shape + (3,))
    z[..., 0] = 0.5 - (0.5 - theta) % 1.0
    return from_chart(z, coeffs)


class _LeafWindow:
    """A window of the unstable curve iterated as a refinable polyline.

    Sample points are exact curve points at stored seed angles; refinement
    inserts midpoint angles and replays them through the map, so no
    interpolation error accumulates.
    """

    def __init__(self, lo: float, hi: float, mapper: SlowdownMap,
                 eps_curve: float, max_points: int, n_init: int = 9):
        if not hi > lo:
            raise CurveTooCoarse("degenerate window: needs two distinct "
                                 "endpoint angles")
        self.mapper = mapper
        self.eps = eps_curve
        self.max_points = max_points
        self.seeds = np.linspace(lo, hi, n_init)
        self.points = _curve_point(self.seeds, mapper.coeffs)
        self.k = 0
        self._refine()

    def _replay(self, seeds: np.ndarray) -> np.ndarray:
        pts = _curve_point(seeds, self.mapper.coeffs)
        for _ in range(self.k):
            pts = self.mapper.step_many(pts)
        return pts

    def _gaps(self) -> np.ndarray:
        return np.array([torus_dist(self.points[i], self.points[i + 1])
                         for i in range(len(self.points) - 1)])

    def _refine(self) -> None:
        while True:
            gaps = self._gaps()
            bad = np.nonzero(gaps > self.eps)[0]
            if bad.size == 0:
                return
            if len(self.seeds) + bad.size > self.max_points:
                raise CurveTooCoarse(
                    f"window needs more than {self.max_points} samples to "
                    f"keep gaps below {self.eps}")
            mids = 0.5 * (self.seeds[bad] + self.seeds[bad + 1])
            new_pts = self._replay(mids)
            order = np.argsort(np.concatenate([self.seeds, mids]))
            self.seeds = np.concatenate([self.seeds, mids])[order]
            self.points = np.vstack([self.points, new_pts])[order]

    def advance(self) -> None:
        self.points = self.mapper.step_many(self.points)
        self.k += 1
        self._refine()

    def min_chart_norm(self) -> float:
        return min(self.mapper.chart_norm(p) for p in self.points)

    def length(self) -> float:
        return float(self._gaps().sum())


def default_leaf_windows(n_curves: int, mapper: SlowdownMap, *,
                         seed: int = 12345, k_min: int = 60,
                         k_max: int = 1200,
                         exit_width: float = 0.004) -> list[tuple[float,
                                                                  float]]:
    """Angle windows inside the ball whose escapes span a range of depths.

    The window start d is chosen so the axis closed form predicts escape
    from the r1 ball in about k steps, with k log-uniform in [k_min,
    k_max]; the width is back-propagated from the wanted exit width by the
    pure-power transfer law, keeping every polyline short.  The default
    k_min sits well above the crossover scale r1^-alpha / (alpha gamma),
    below which the transfer law's additive constant flattens the local
    exponent; shallow windows can still be audited by passing explicit
    windows.
    """
    c = mapper.constants
    r1 = mapper.profile.r1
    a = c.alpha
    rng = rng_stream(seed, 41)
    windows = []
    for _ in range(n_curves):
        k = np.exp(rng.uniform(np.log(k_min), np.log(k_max)))
        d = (a * c.gamma * k + r1**-a) ** (-1.0 / a)
        width = exit_width * (d / r1) ** (1.0 + a)
        windows.append((float(d), float(d + width)))
    return windows


def audit_curve_length_through_ball(n_curves: int, mapper: SlowdownMap, *,
                                    eps_curve: float = 1e-3,
                                    seed: int = 12345,
                                    windows: list[tuple[float, float]]
                                    | None = None,
                                    max_points: int = 200_000,
                                    max_iter: int = 20_000,
                                    slack_tol: float = SLACK_TOL
                                    ) -> AuditReport:
    """Track length ratios of unstable-curve windows across ball passages.

    Each window starts inside the r1 ball at entry step n = 0 and is
    iterated under the hybrid map, with polyline refinement, until every
    sample clears the ball at step m; the ratio len(m)/len(n) against
    (m - n) is fitted for its growth exponent and sandwiched between
    power laws with the derived exponents gamma2 (below) and gamma1
    (above), whose constants are fitted as the extreme per-trial
    prefactors.
    """
    c = mapper.constants
    r1 = mapper.profile.r1
    if windows is None:
        windows = default_leaf_windows(n_curves, mapper, seed=seed)
    trials = []
    for i, (lo, hi) in enumerate(windows):
        win = _LeafWindow(lo, hi, mapper, eps_curve, max_points)
        if win.min_chart_norm() >= r1:
            raise OutOfDomain(f"window {i} does not start inside the ball")
        len_in = win.length()
        m = None
        for _ in range(max_iter):
            win.advance()
            if win.min_chart_norm() >= r1:
                m = win.k
                break
        if m is None:
            raise BudgetExceeded(f"window {i} still meets the ball after "
                                 f"{max_iter} iterations")
        trials.append((i, m, len_in, win.length()))

    ks = np.array([m for _, m, _, _ in trials], dtype=float)
    ratios = np.array([l_out / l_in for _, _, l_in, l_out in trials])
    c5 = float(np.min(ratios / ks**c.gamma2))
    c6 = float(np.max(ratios / ks**c.gamma1))
    records = []
    n_viol = 0
    worst = 0.0
    for (i, m, _, _), ratio in zip(trials, ratios):
        upper = c6 * m**c.gamma1
        lower = c5 * m**c.gamma2
        viol_hi = ratio > upper * (1.0 + slack_tol)
        viol_lo = ratio < lower / (1.0 + slack_tol)
        records.append(dict(trial=i, quantity="curve_len", T=float(m),
                            bound=upper, observed=float(ratio),
                            ratio=float(ratio / upper),
                            violated=bool(viol_hi)))
        records.append(dict(trial=i, quantity="curve_len_lower", T=float(m),
                            bound=lower, observed=float(ratio),
                            ratio=float(lower / ratio),
                            violated=bool(viol_lo)))
        n_viol += int(viol_hi) + int(viol_lo)
        worst = max(worst, ratio / upper, lower / ratio)

    report = AuditReport(n_trials=len(trials), n_violations=n_viol,
                         worst_ratio=worst, records=records)
    if len(trials) >= 3:
        slope, lo_ci, hi_ci = _fit_loglog(ks, ratios, seed)
        report.fitted_slope = slope
        report.slope_ci_lo = lo_ci
        report.slope_ci_hi = hi_ci
    return report

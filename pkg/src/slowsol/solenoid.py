"""The solenoid embedding on the solid torus and its unstable structure.

The map

    F(t, x, y) = (m t mod 1, lam x + eta cos 2 pi t, lam y + eta sin 2 pi t)

expands the circle factor by m and contracts each disk fiber by lam while
translating it along a circle of radius eta.  For lam < min(eta, 1 - eta)
the m image rings are disjoint and stay inside the unit disk, so F is a
diffeomorphism onto its image and the attractor is a solenoid.

This module provides the map, its differential and branch-resolved inverse,
push-forward estimates of the unstable direction field, and adaptive
polyline approximations of unstable curves (shared with the slowed-down map
through a small mapper protocol: objects exposing step / step_many /
tangent_step).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import SolenoidParams
from .errors import (
    AmbiguousBranch,
    CurveTooCoarse,
    FailedToSpan,
    NotInImage,
    ValidationError,
)
from .util import lift, rng_stream, torus_dist

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusPoint:
    """A validated point of the solid torus: t mod 1 in [0,1), x^2+y^2 <= 1."""

    t: float
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "t", float(np.mod(self.t, 1.0)))
        if self.x**2 + self.y**2 > 1.0 + 1e-12:
            raise ValidationError(
                f"point ({self.x}, {self.y}) outside the unit disk fiber"
            )

    @property
    def array(self) -> np.ndarray:
        return np.array([self.t, self.x, self.y])


def _as_q(q) -> np.ndarray:
    if isinstance(q, TorusPoint):
        return q.array
    return np.asarray(q, dtype=float)


def apply_F(q, sol: SolenoidParams) -> np.ndarray:
    """Apply the solenoid map; q is (..., 3) with columns (t, x, y)."""
    q = _as_q(q)
    t = q[..., 0]
    arg = TWO_PI * t
    return np.stack(
        [
            np.mod(sol.m * t, 1.0),
            sol.lam * q[..., 1] + sol.eta * np.cos(arg),
            sol.lam * q[..., 2] + sol.eta * np.sin(arg),
        ],
        axis=-1,
    )


def differential_F(q, sol: SolenoidParams) -> np.ndarray:
    """Differential of F at q, rows = d(t', x', y')."""
    t = float(_as_q(q)[0])
    s, c = np.sin(TWO_PI * t), np.cos(TWO_PI * t)
    return np.array(
        [
            [float(sol.m), 0.0, 0.0],
            [-TWO_PI * sol.eta * s, sol.lam, 0.0],
            [TWO_PI * sol.eta * c, 0.0, sol.lam],
        ]
    )


def apply_F_inverse(q, sol: SolenoidParams, tol_branch: float = 1e-9) -> np.ndarray:
    """Invert F on its image, resolving the m-fold angle ambiguity.

    Each candidate angle t_j = (t + j)/m reconstructs disk coordinates
    exactly; a candidate is admissible when the reconstruction lands inside
    the unit disk.  The residual of a candidate is its distance (scaled back
    by lam) from the admissible disk, so genuine preimages score 0.
    """
    t, x, y = map(float, _as_q(q))
    best = []
    for j in range(sol.m):
        tj = (t + j) / sol.m
        xj = (x - sol.eta * np.cos(TWO_PI * tj)) / sol.lam
        yj = (y - sol.eta * np.sin(TWO_PI * tj)) / sol.lam
        rad = np.hypot(xj, yj)
        residual = sol.lam * max(0.0, rad - 1.0)
        best.append((residual, tj, xj, yj))
    best.sort(key=lambda r: r[0])
    if best[0][0] > tol_branch:
        raise NotInImage(
            f"no inverse branch reconstructs ({t}, {x}, {y}); "
            f"best residual {best[0][0]:.3e}"
        )
    if len(best) > 1 and best[1][0] <= tol_branch:
        raise AmbiguousBranch(
            f"two inverse branches within tolerance at ({t}, {x}, {y})"
        )
    _, tj, xj, yj = best[0]
    return np.array([np.mod(tj, 1.0), xj, yj])


def fixed_point(sol: SolenoidParams) -> np.ndarray:
    """The fixed point p = (0, eta/(1-lam), 0)."""
    return np.array([0.0, sol.eta / (1.0 - sol.lam), 0.0])


def attractor_projection(q, sol: SolenoidParams, depth: int = 4):
    """Project the disk coordinates of q onto the fiber of the attractor.

    The fiber over angle t is covered by m^depth disks of radius
    lam^depth * eta/(1-lam) centered at the partial shell sums

        c(J) = sum_{i=1..depth} lam^(i-1) eta e(2 pi (t + J mod m^i) / m^i),

    one per backward symbol chain J.  Returns (projected point, distance to
    the nearest covering disk); the distance is 0 when q already lies inside
    the cover, and approximates the distance to the attractor otherwise.
    """
    t, x, y = map(float, _as_q(q))
    J = np.arange(sol.m**depth)
    cx = np.zeros(len(J))
    cy = np.zeros(len(J))
    for i in range(1, depth + 1):
        ang = TWO_PI * (t + J % sol.m**i) / sol.m**i
        cx += sol.lam ** (i - 1) * sol.eta * np.cos(ang)
        cy += sol.lam ** (i - 1) * sol.eta * np.sin(ang)
    d = np.hypot(x - cx, y - cy)
    k = int(np.argmin(d))
    r_cover = sol.lam**depth * sol.eta / (1.0 - sol.lam)
    excess = max(0.0, float(d[k]) - r_cover)
    if excess > 0.0:
        w = r_cover / d[k]
        x = cx[k] + (x - cx[k]) * w
        y = cy[k] + (y - cy[k]) * w
    return np.array([np.mod(t, 1.0), x, y]), excess


def _backward_step_relaxed(q: np.ndarray, sol: SolenoidParams) -> np.ndarray:
    """Best-branch inverse with attractor projection, for long backward orbits.

    Backward iteration amplifies disk rounding by 1/lam per step, so a strict
    inverse fails after ~|log eps|/log(1/lam) steps even from exact attractor
    points.  Projecting every reconstruction onto the depth-4 symbolic cover
    of the fiber keeps the backward pseudo-orbit within lam^4 * eta/(1-lam)
    of a genuine backward chain forever; only the angles of the chain enter
    the push-forward, and their errors contract by 1/m per level.  Points
    genuinely far from the image still raise.
    """
    t, x, y = map(float, q)
    best = None
    for j in range(sol.m):
        tj = (t + j) / sol.m
        xj = (x - sol.eta * np.cos(TWO_PI * tj)) / sol.lam
        yj = (y - sol.eta * np.sin(TWO_PI * tj)) / sol.lam
        residual = sol.lam * max(0.0, np.hypot(xj, yj) - 1.0)
        if best is None or residual < best[0]:
            best = (residual, tj, xj, yj)
    residual, tj, xj, yj = best
    if residual > 0.05:
        raise NotInImage(
            f"point ({t}, {x}, {y}) too far from the attractor to iterate "
            f"backward (best branch residual {residual:.3e})"
        )
    projected, excess = attractor_projection((tj, xj, yj), sol)
    if excess > 0.05:
        raise NotInImage(
            f"reconstruction at angle {tj} lies {excess:.3f} outside the "
            f"symbolic cover of the attractor fiber"
        )
    return np.array([np.mod(tj, 1.0), projected[1], projected[2]])


def unstable_direction(q, sol: SolenoidParams, n_iter: int = 60) -> np.ndarray:
    """Unit tangent of the unstable direction at q.

    Pushes a transverse vector forward along the backward orbit of q; the
    cone contraction of the differential makes the result independent of the
    starting vector to within contraction^n_iter.  Sign convention: positive
    angular component (the angular component never vanishes on unstable
    directions).
    """
    back = [_as_q(q)]
    for _ in range(n_iter):
        back.append(_backward_step_relaxed(back[-1], sol))
    v = np.array([1.0, 0.0, 0.0])
    for p in reversed(back[1:]):
        v = differential_F(p, sol) @ v
        v /= np.linalg.norm(v)
    if v[0] < 0:
        v = -v
    return v


class SolenoidMap:
    """Mapper protocol wrapper for the unperturbed solenoid."""

    def __init__(self, sol: SolenoidParams):
        self.sol = sol

    def step(self, q: np.ndarray) -> np.ndarray:
        return apply_F(q, self.sol)

    def step_many(self, Q: np.ndarray) -> np.ndarray:
        return apply_F(Q, self.sol)

    def tangent_step(self, q: np.ndarray, v: np.ndarray):
        """One step of point and (unnormalized) tangent; returns (q', v', stretch)."""
        J = differential_F(q, self.sol)
        v2 = J @ v
        n2 = float(np.linalg.norm(v2)) / max(float(np.linalg.norm(v)), 1e-300)
        return apply_F(q, self.sol), v2, n2

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        return differential_F(q, self.sol)

    def excluded_from_expansion(self, q: np.ndarray) -> bool:
        return False  # no slow ball in the unperturbed map


KICK_EVERY = 12
KICK_SCALE = 2.0**-50


def kick_angle(q: np.ndarray, rng) -> np.ndarray:
    """Refresh the low-order bits of the angle coordinate.

    In binary floating point every angle is a dyadic rational, so the exact
    m-fold angle map consumes its significand and collapses any long orbit
    onto the fixed point.  A sub-1e-15 perturbation restores genericity
    while staying far below every tolerance used here.

    Entropy budget: each doubling discards one mantissa bit, while a kick
    added to an angle of order one survives rounding only at the last few
    ulps (~2 bits).  Loops whose statistics probe fine angular scales (slow
    ball entry depths in particular) must therefore kick every step; the
    KICK_EVERY cadence is only adequate for coarse orbit statistics.
    """
    out = q.copy()
    out[..., 0] = np.mod(out[..., 0] + (rng.random(q.shape[:-1]) - 0.5) * KICK_SCALE,
                         1.0)
    return out


def attractor_seed(mapper, start=None, warmup: int = 300, rng=None):
    """Land on the attractor with a converged unstable tangent.

    Iterates `warmup` steps from `start` (default: a fixed interior point),
    transporting a tangent vector; the tangent aligns with the unstable
    direction at geometric rate, so the returned (point, unit tangent) pair
    is accurate to contraction^warmup.
    """
    if rng is None:
        rng = rng_stream(12345, 7)
    q = np.array([0.2345, 0.1, -0.05]) if start is None else np.asarray(start, float)
    v = np.array([1.0, 0.0, 0.0])
    for k in range(warmup):
        q, v, _ = mapper.tangent_step(q, v)
        v /= np.linalg.norm(v)
        if (k + 1) % KICK_EVERY == 0:
            q = kick_angle(q, rng)
    if v[0] < 0:
        v = -v
    return q, v


def estimate_expansion_constants(mapper, n_sample: int = 10_000, warmup: int = 200,
                                 rng=None):
    """One-step tangent expansion statistics along an attractor orbit.

    Returns (nu_hat, xi_hat): the minimum one-step stretch of the unstable
    direction over sampled points not excluded by the mapper (the slowed map
    excludes steps meeting the slow ball, where expansion degenerates), and
    the maximum operator norm of the one-step differential.
    """
    if rng is None:
        rng = rng_stream(12345, 11)
    q, v = attractor_seed(mapper, warmup=warmup, rng=rng)
    nu = np.inf
    xi = 0.0
    for k in range(n_sample):
        excluded = mapper.excluded_from_expansion(q)
        if not excluded:
            J = mapper.jacobian(q)
            stretch = float(np.linalg.norm(J @ v))
            nu = min(nu, stretch)
            xi = max(xi, float(np.linalg.norm(J, 2)))
        q, v, _ = mapper.tangent_step(q, v)
        v /= np.linalg.norm(v)
        if (k + 1) % KICK_EVERY == 0:
            q = kick_angle(q, rng)
    return nu, xi


@dataclass
class UnstableCurve:
    """Adaptive polyline approximation of a piece of unstable curve.

    points is (N, 3) in torus coordinates; t_unwrapped carries the angular
    lift along the curve (monotone since unstable tangents keep a nonzero
    angular component); cum_s is cumulative arclength in the product metric.
    """

    points: np.ndarray
    t_unwrapped: np.ndarray
    cum_s: np.ndarray = field(init=False)

    def __post_init__(self):
        gaps = torus_dist(self.points[:-1], self.points[1:])
        self.cum_s = np.concatenate([[0.0], np.cumsum(gaps)])

    @property
    def arclength(self) -> float:
        return float(self.cum_s[-1])

    @property
    def max_gap(self) -> float:
        if len(self.points) < 2:
            return 0.0
        return float(np.max(np.diff(self.cum_s)))

    def sample_by_arclength(self, s_values: np.ndarray) -> np.ndarray:
        """Linear interpolation at arclength positions in [0, arclength]."""
        s = np.asarray(s_values, dtype=float)
        if np.any(s < -1e-12) or np.any(s > self.cum_s[-1] * (1 + 1e-12)):
            raise CurveTooCoarse("arclength positions outside the curve")
        idx = np.clip(np.searchsorted(self.cum_s, s, side="right") - 1, 0,
                      len(self.points) - 2)
        seg = self.cum_s[idx + 1] - self.cum_s[idx]
        w = np.where(seg > 0, (s - self.cum_s[idx]) / np.where(seg > 0, seg, 1.0), 0.0)
        tu = self.t_unwrapped[idx] * (1 - w) + self.t_unwrapped[idx + 1] * w
        xy = self.points[idx, 1:] * (1 - w[:, None]) + self.points[idx + 1, 1:] * w[:, None]
        return np.column_stack([np.mod(tu, 1.0), xy])

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("s,t,x,y\n")
            for s, (t, x, y) in zip(self.cum_s, self.points):
                f.write(f"{float(s)!r},{float(t)!r},{float(x)!r},{float(y)!r}\n")


def _iterate_params(mapper, q0: np.ndarray, tangent: np.ndarray, half_width: float,
                    s_params: np.ndarray, n_steps: int) -> np.ndarray:
    """Map seed-segment parameters s in [-1, 1] forward n_steps."""
    pts = q0[None, :] + (s_params[:, None] * half_width) * tangent[None, :]
    for _ in range(n_steps):
        pts = mapper.step_many(pts)
    return pts


def _unwrap(points: np.ndarray) -> np.ndarray:
    t = points[:, 0]
    inc = lift(np.diff(t))
    return np.concatenate([[t[0]], t[0] + np.cumsum(inc)])


def grow_unstable_curve(
    mapper,
    seed_point: np.ndarray,
    seed_tangent: np.ndarray,
    *,
    target_arclength: float | None = None,
    t_window: tuple[float, float] | None = None,
    eps_curve: float = 1e-3,
    seed_half_width: float = 1e-7,
    max_steps: int = 400,
    max_points: int = 2_000_000,
) -> UnstableCurve:
    """Grow an unstable curve by forward iteration of a short leaf segment.

    A segment of half-width seed_half_width along seed_tangent is iterated
    forward; stray normal components contract away while the segment expands,
    so the image hugs the true leaf.  Whenever adjacent images separate
    beyond eps_curve, midpoints are inserted in the seed parameter and mapped
    forward.  Growth stops once the requested span is covered:

      target_arclength — trim to the prefix of that arclength;
      t_window=(lo,hi) — trim to a sub-polyline whose angular lift covers
                         [lo, hi] (mod 1), endpoints refined by parameter
                         bisection.

    Raises FailedToSpan when the step or point budget runs out first.
    """
    if (target_arclength is None) == (t_window is None):
        raise ValueError("specify exactly one of target_arclength, t_window")
    q0 = _as_q(seed_point)
    tangent = np.asarray(seed_tangent, dtype=float)
    tangent = tangent / np.linalg.norm(tangent)

    s = np.linspace(-1.0, 1.0, 9)
    pts = q0[None, :] + (s[:, None] * seed_half_width) * tangent[None, :]
    n_steps = 0
    coarse = max(eps_curve, 1e-2)

    def refine(s, pts, eps):
        # insert midpoints until no adjacent gap exceeds eps
        while True:
            gaps = torus_dist(pts[:-1], pts[1:])
            bad = np.where(gaps > eps)[0]
            if len(bad) == 0:
                return s, pts
            if len(s) + len(bad) > max_points:
                raise FailedToSpan(
                    f"curve refinement exceeded {max_points} points"
                )
            mids = 0.5 * (s[bad] + s[bad + 1])
            new_pts = _iterate_params(mapper, q0, tangent, seed_half_width, mids,
                                      n_steps)
            s = np.insert(s, bad + 1, mids)
            pts = np.insert(pts, bad + 1, new_pts, axis=0)

    def spanned(pts):
        if target_arclength is not None:
            gaps = torus_dist(pts[:-1], pts[1:])
            return float(np.sum(gaps)) >= target_arclength
        tu = _unwrap(pts)
        lo, hi = t_window
        width = (hi - lo) % 1.0
        c = np.ceil(tu[0] - lo)
        return tu[-1] >= lo + c + width

    while not spanned(pts):
        if n_steps >= max_steps:
            raise FailedToSpan(
                f"span not covered after {max_steps} iterations "
                f"(arclength {np.sum(torus_dist(pts[:-1], pts[1:])):.3e})"
            )
        pts = mapper.step_many(pts)
        n_steps += 1
        s, pts = refine(s, pts, coarse)

    if target_arclength is not None:
        s, pts = refine(s, pts, eps_curve)
        tu = _unwrap(pts)
        gaps = torus_dist(pts[:-1], pts[1:])
        cum = np.concatenate([[0.0], np.cumsum(gaps)])
        end = int(np.searchsorted(cum, target_arclength, side="left"))
        end = min(end, len(pts) - 1)
        return UnstableCurve(points=pts[: end + 1], t_unwrapped=tu[: end + 1])

    # t-window trimming: locate the parameter positions whose angular lift
    # hits the window edges, bisect them in, then refine the interior
    lo, hi = t_window
    width = (hi - lo) % 1.0
    tu = _unwrap(pts)
    c = np.ceil(tu[0] - lo)
    lo_u, hi_u = lo + c, lo + c + width
    if tu[-1] < hi_u:
        raise FailedToSpan("window not covered after spanning check (unexpected)")

    def bisect_to(target_u, s_lo, s_hi, tu_lo):
        # angular lift is monotone along the curve; bisection in seed parameter
        base = tu_lo
        for _ in range(80):
            sm = 0.5 * (s_lo + s_hi)
            pm = _iterate_params(mapper, q0, tangent, seed_half_width,
                                 np.array([sm]), n_steps)[0]
            # unwrapped angle of pm relative to the s_lo endpoint
            tm = base + float(lift(pm[0] - np.mod(base, 1.0)))
            if abs(tm - target_u) < 1e-12:
                return sm, pm, tm
            if tm < target_u:
                s_lo, base = sm, tm
            else:
                s_hi = sm
        return sm, pm, tm

    i0 = int(np.searchsorted(tu, lo_u, side="left"))
    i1 = int(np.searchsorted(tu, hi_u, side="left"))
    # tu[i0-1] < lo_u <= tu[i0]; refine both edges onto the window
    s_work = s.copy()
    pts_work = pts.copy()
    keep = slice(i0, i1)
    s_mid = s_work[keep]
    pts_mid = pts_work[keep]
    if i0 > 0 and tu[i0] > lo_u + 1e-12:
        s_edge, p_edge, _ = bisect_to(lo_u, s_work[i0 - 1], s_work[i0], tu[i0 - 1])
        s_mid = np.concatenate([[s_edge], s_mid])
        pts_mid = np.vstack([p_edge, pts_mid])
    if tu[i1 - 1 if i1 > 0 else 0] < hi_u - 1e-12:
        s_edge, p_edge, _ = bisect_to(hi_u, s_work[i1 - 1], s_work[i1], tu[i1 - 1])
        s_mid = np.concatenate([s_mid, [s_edge]])
        pts_mid = np.vstack([pts_mid, p_edge])

    def refine_sub(s, pts, eps):
        while True:
            gaps = torus_dist(pts[:-1], pts[1:])
            bad = np.where(gaps > eps)[0]
            if len(bad) == 0:
                return s, pts
            if len(s) + len(bad) > max_points:
                raise FailedToSpan(f"curve refinement exceeded {max_points} points")
            mids = 0.5 * (s[bad] + s[bad + 1])
            new_pts = _iterate_params(mapper, q0, tangent, seed_half_width, mids,
                                      n_steps)
            s = np.insert(s, bad + 1, mids)
            pts = np.insert(pts, bad + 1, new_pts, axis=0)

    s_mid, pts_mid = refine_sub(s_mid, pts_mid, eps_curve)
    return UnstableCurve(points=pts_mid, t_unwrapped=_unwrap(pts_mid))

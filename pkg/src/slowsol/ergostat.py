"""Orbit statistics: correlations, return-time tails, and their comparison.

The invariant measure is proxied by the empirical measure of one long orbit
after burn-in.  Correlation sequences are estimated with globally centered
observables and window-matched means (so constant observables give exactly
zero at every lag) and chunked-FFT cross sums; return-time tails are
measured by arclength-stratified sampling of an unstable curve crossing a
base angular window, with the survival function's log-log slope fitted by
weighted least squares and bootstrapped for a CI.  The tail-sum comparison
ties the two together: for ball-avoiding observables the correlation at lag
n should track the (mean-return normalized) survival tail sum times the
product of the means, up to bounded constants.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .chart import from_chart, to_chart
from .errors import (
    BadBase,
    BudgetExceeded,
    StepFailure,
    ValidationError,
    WindowTooSparse,
    ZeroMeans,
)
from .slowdown import SlowdownMap
from .solenoid import KICK_SCALE
from .util import rng_stream, torus_dist

_EVAL_CHUNK = 1 << 20
_FFT_CHUNK = 1 << 18


# -- observables ------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Named scalar function of torus points, vectorized over (..., 3).

    support_floor > 0 guarantees the function is exactly zero wherever the
    chart norm is below the floor (so the observable never sees the slow
    ball once the floor exceeds the ball radius).
    """

    name: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    support_floor: float = 0.0

    def __call__(self, q) -> np.ndarray:
        return self.evaluator(np.asarray(q, dtype=float))


def _smoothstep(x: np.ndarray) -> np.ndarray:
    """C-infinity ramp: exactly 0 for x <= 0, exactly 1 for x >= 1."""
    out = np.zeros_like(x)
    out[x >= 1.0] = 1.0
    mid = (x > 0.0) & (x < 1.0)
    xm = x[mid]
    fa = np.exp(-1.0 / xm)
    fb = np.exp(-1.0 / (1.0 - xm))
    out[mid] = fa / (fa + fb)
    return out


def _bump_evaluator(coeffs, k: int):
    def ev(q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        shp = q.shape[:-1]
        z = to_chart(q.reshape(-1, 3), coeffs)
        r = np.linalg.norm(z, axis=-1)
        return _smoothstep(r * k - 1.0).reshape(shp)
    return ev


def builtin_observables(mapper: SlowdownMap) -> list[Observable]:
    """The stock observables: smooth coordinates plus ball-avoiding bumps.

    bump_k vanishes identically inside chart radius 1/k and equals 1
    outside chart radius 2/k, ramped by a C-infinity step in between.
    """
    obs = [
        Observable("one", lambda q: np.ones(np.asarray(q).shape[:-1])),
        Observable("cos2pit",
                   lambda q: np.cos(2.0 * np.pi * np.asarray(q)[..., 0])),
        Observable("xcoord", lambda q: np.asarray(q)[..., 1] + 0.0),
    ]
    for k in (8, 16, 32):
        obs.append(Observable(f"bump_{k}", _bump_evaluator(mapper.coeffs, k),
                              support_floor=1.0 / k))
    return obs


def observable_by_name(mapper: SlowdownMap, name: str) -> Observable:
    for o in builtin_observables(mapper):
        if o.name == name:
            return o
    raise ValidationError(f"unknown observable {name!r}; available: "
                          + ", ".join(o.name for o in builtin_observables(mapper)))


def check_support_floor(obs: Observable, mapper: SlowdownMap,
                        n_points: int = 4000, seed: int = 0) -> float:
    """Largest |value| over sample points strictly inside the support floor."""
    if obs.support_floor <= 0.0:
        return 0.0
    rng = rng_stream(seed, 90)
    d = rng.standard_normal((n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radii = obs.support_floor * (1.0 - 1e-12) * rng.random(n_points) ** (1 / 3)
    pts = from_chart(d * radii[:, None], mapper.coeffs)
    return float(np.max(np.abs(obs(pts))))


def holder_quotient(obs: Observable, n_pairs: int = 10_000,
                    scale: float = 1e-3, seed: int = 0,
                    exponent: float = 0.5) -> float:
    """Largest |h(q)-h(q')| / d(q,q')^exponent over random close pairs."""
    rng = rng_stream(seed, 91)
    t = rng.random(n_pairs)
    phi = 2.0 * np.pi * rng.random(n_pairs)
    rad = np.sqrt(rng.random(n_pairs))
    q = np.column_stack([t, rad * np.cos(phi), rad * np.sin(phi)])
    dq = scale * rng.standard_normal((n_pairs, 3))
    q2 = q + dq
    q2[:, 0] %= 1.0
    d = torus_dist(q, q2)
    good = d > 0
    num = np.abs(obs(q[good]) - obs(q2[good]))
    return float(np.max(num / d[good] ** exponent))


# -- orbit generation -------------------------------------------------------

def generate_orbit(seed: int, burn_in: int, length: int,
                   mapper: SlowdownMap, *, slowdown: bool = True,
                   kick_every: int = 1) -> np.ndarray:
    """One long orbit of the hybrid map (or the plain solenoid map).

    The initial point is uniform in the solid torus (angle uniform, fiber
    uniform in the unit disk) from a counter-based stream keyed by seed;
    burn_in steps are discarded.  slowdown=False freezes the slow ball out
    of the map, giving the unperturbed uniformly hyperbolic baseline.
    Angle kicks (see solenoid.kick_angle) are injected every kick_every
    steps -- every step by default, which is required for unbiased slow
    ball entry statistics; pass kick_every=0 to disable.
    """
    if length < 1:
        raise ValidationError("orbit length must be >= 1")
    rng = rng_stream(seed, 0)
    t0 = rng.random()
    phi = 2.0 * np.pi * rng.random()
    rad = np.sqrt(rng.random())
    P = mapper.P
    if not slowdown:
        P = P.copy()
        P[K.VRAD] = -1.0      # chart branch never taken
    n_events = (burn_in + length) // kick_every + 1 if kick_every > 0 else 0
    kicks = (rng_stream(seed, 1).random(n_events) - 0.5) * KICK_SCALE
    out = np.empty((length, 3))
    status, step = K.orbit_kernel(t0, rad * np.cos(phi), rad * np.sin(phi),
                                  burn_in, length, P, mapper._a, mapper._b,
                                  kicks, kick_every, out)
    if status == K.STEP_UNDERFLOW:
        raise StepFailure(f"orbit generation failed at step {step}: step "
                          f"size underflow")
    if status == K.BUDGET:
        raise BudgetExceeded(f"orbit generation failed at step {step}: step "
                             f"budget exhausted")
    return out


# -- correlation estimation -------------------------------------------------

@dataclass
class CorrSeries:
    """Empirical correlation sequence with batch-mean standard errors."""

    n: np.ndarray
    c_hat: np.ndarray
    stderr: np.ndarray
    mean_h1: float
    mean_h2: float

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("n,c_hat,stderr\n")
            for n, c, s in zip(self.n, self.c_hat, self.stderr):
                f.write(f"{int(n)},{float(c)!r},{float(s)!r}\n")


def _eval_chunked(ev, orbit: np.ndarray) -> np.ndarray:
    out = np.empty(len(orbit))
    for off in range(0, len(orbit), _EVAL_CHUNK):
        out[off:off + _EVAL_CHUNK] = ev(orbit[off:off + _EVAL_CHUNK])
    return out


def _cross_sums(a: np.ndarray, b: np.ndarray, n_max: int) -> np.ndarray:
    """cross[n] = sum_k a[k+n] b[k] over valid k, by overlap-save FFT."""
    chunk = max(_FFT_CHUNK, 2 * (n_max + 1))
    nfft = 1 << int(np.ceil(np.log2(chunk + n_max + 1)))
    cross = np.zeros(n_max + 1)
    for off in range(0, len(b), chunk):
        bseg = b[off:off + chunk]
        aseg = a[off:off + len(bseg) + n_max]
        fa = np.fft.rfft(aseg, nfft)
        fb = np.fft.rfft(bseg[::-1], nfft)
        conv = np.fft.irfft(fa * fb, nfft)
        cross += conv[len(bseg) - 1: len(bseg) + n_max]
    return cross


def _batch_cross(at: np.ndarray, bt: np.ndarray, offs: np.ndarray, L: int,
                 n_max: int) -> np.ndarray:
    """Within-batch cross sums for each offset, grouped FFTs."""
    nfft = 1 << int(np.ceil(np.log2(L + n_max + 1)))
    out = np.empty((len(offs), n_max + 1))
    group = max(1, (1 << 21) // nfft)
    for g0 in range(0, len(offs), group):
        sel = offs[g0:g0 + group]
        A = np.zeros((len(sel), nfft))
        B = np.zeros((len(sel), nfft))
        for i, off in enumerate(sel):
            A[i, :L] = at[off:off + L]
            B[i, :L] = bt[off:off + L][::-1]
        C = np.fft.irfft(np.fft.rfft(A, axis=1) * np.fft.rfft(B, axis=1),
                         nfft, axis=1)
        out[g0:g0 + len(sel)] = C[:, L - 1: L + n_max]
    return out


def estimate_correlations(orbit: np.ndarray, h1: Observable, h2: Observable,
                          n_max: int) -> CorrSeries:
    """Lagged covariances of h1 against h2 along the orbit.

    For each lag n the estimate pairs h1 at time k+n with h2 at time k and
    subtracts window-matched means, so a constant observable yields exactly
    zero at every lag.  Standard errors come from overlapping batch means
    with batch length 10 * n_max (hop half a batch).
    """
    K_len = len(orbit)
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    if K_len < 10 * n_max:
        raise ValidationError(f"orbit length {K_len} < 10 * n_max "
                              f"= {10 * n_max}")
    va = _eval_chunked(h1.evaluator, orbit)
    vb = _eval_chunked(h2.evaluator, orbit)
    m1 = float(np.mean(va))
    m2 = float(np.mean(vb))
    at = va - m1
    bt = vb - m2

    ngrid = np.arange(n_max + 1)
    counts = (K_len - ngrid).astype(float)
    sa = np.cumsum(at)
    sb = np.cumsum(bt)
    sum_a_from = np.concatenate([[sa[-1]], sa[-1] - sa[:n_max]])
    sum_b_upto = sb[K_len - 1 - ngrid]
    cross = _cross_sums(at, bt, n_max)
    c_hat = cross / counts - (sum_a_from / counts) * (sum_b_upto / counts)

    L = 10 * n_max
    offs = np.arange(0, K_len - L + 1, max(L // 2, 1))
    if len(offs) >= 2:
        bm = _batch_cross(at, bt, offs, L, n_max) / (L - ngrid)
        stderr = np.sqrt(np.var(bm, axis=0, ddof=1) * (L - ngrid) / counts)
    else:
        stderr = np.full(n_max + 1, np.inf)
    return CorrSeries(n=ngrid, c_hat=c_hat, stderr=stderr, mean_h1=m1,
                      mean_h2=m2)


# -- base set and return times ----------------------------------------------

@dataclass(frozen=True)
class BaseSet:
    """Angular window serving as the return base, with observed separations.

    gap_to_ball / gap_from_ball are the smallest observed step counts from
    a window visit to a chart-ball visit and back (sampling evidence that
    returns cannot shortcut through the slow ball in under q_min steps).
    """

    t_lo: float
    t_hi: float
    q_min: int
    gap_to_ball: int
    gap_from_ball: int

    @property
    def width(self) -> float:
        return (self.t_hi - self.t_lo) % 1.0

    def contains_angle(self, t) -> np.ndarray:
        return ((np.asarray(t) - self.t_lo) % 1.0) < self.width


def _min_forward_gap(src: np.ndarray, dst: np.ndarray) -> int:
    """Smallest k >= 0 from a True in src to the next True in dst."""
    d_idx = np.nonzero(dst)[0]
    s_idx = np.nonzero(src)[0]
    if d_idx.size == 0 or s_idx.size == 0:
        return len(src)
    j = np.searchsorted(d_idx, s_idx, side="left")
    ok = j < d_idx.size
    if not np.any(ok):
        return len(src)
    return int(np.min(d_idx[j[ok]] - s_idx[ok]))


def build_base_set(mapper: SlowdownMap, *, t_lo: float = 13.0 / 32.0,
                   t_hi: float = 14.0 / 32.0, q_min: int = 4,
                   seed: int = 12345, n_orbit: int = 300_000,
                   burn_in: int = 2_000) -> BaseSet:
    """Validate an angular window as a return base separated from the ball.

    Samples a long orbit and measures the fewest steps observed from a
    window visit to a chart-ball visit (chart norm <= r1) and vice versa;
    either falling below q_min raises BadBase.  The default window is a
    dyadic cylinder away from the ball's angle.
    """
    width = (t_hi - t_lo) % 1.0
    if width == 0.0 or width > 0.5:
        raise ValidationError(f"base window width {width} outside (0, 0.5]")
    orbit = generate_orbit(seed, burn_in, n_orbit, mapper)
    in_I = ((orbit[:, 0] - t_lo) % 1.0) < width
    z = np.empty(len(orbit))
    for off in range(0, len(orbit), _EVAL_CHUNK):
        zc = to_chart(orbit[off:off + _EVAL_CHUNK], mapper.coeffs)
        z[off:off + _EVAL_CHUNK] = np.linalg.norm(zc, axis=-1)
    in_ball = z <= mapper.profile.r1
    gap_to = _min_forward_gap(in_I, in_ball)
    gap_from = _min_forward_gap(in_ball, in_I)
    if min(gap_to, gap_from) < q_min:
        raise BadBase(
            f"window [{t_lo}, {t_hi}) is too close to the slow ball: "
            f"observed gaps to/from ball = {gap_to}/{gap_from} < {q_min}")
    return BaseSet(t_lo=t_lo, t_hi=t_hi, q_min=q_min, gap_to_ball=gap_to,
                   gap_from_ball=gap_from)


@dataclass
class SurvivalSeries:
    """Survival function of the first-return time on an unstable curve."""

    n: np.ndarray
    survivors: np.ndarray
    total: float
    censored: int = 0

    def __post_init__(self):
        self.n = np.asarray(self.n)
        self.survivors = np.asarray(self.survivors, dtype=float)
        if self.n[0] != 0:
            raise ValidationError("survival grid must start at n = 0")
        if self.survivors[0] != self.total:
            raise ValidationError("p_hat(0) must equal 1")
        if np.any(np.diff(self.survivors) > 0):
            raise ValidationError("survivor counts must be nonincreasing")
        if np.any(self.survivors < 0) or self.total <= 0:
            raise ValidationError("survivor counts must be in [0, total]")

    @property
    def p_hat(self) -> np.ndarray:
        return self.survivors / self.total

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.total

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("n,survivors,total,p_hat\n")
            for n, s, p in zip(self.n, self.survivors, self.p_hat):
                f.write(f"{int(n)},{float(s)!r},{float(self.total)!r},"
                        f"{float(p)!r}\n")


def unstable_curve_through_base(base: BaseSet, mapper: SlowdownMap,
                                eps_curve: float = 1e-4) -> np.ndarray:
    """Dense angle grid tracing the fixed point's unstable leaf over the base.

    The leaf is the chart-axis image, a curve invariant for both the plain
    and the slowed map, so its points are exact (no polyline iteration).
    Returns angles theta (spacing <= eps_curve in arclength) whose curve
    points from_chart([theta, 0, 0]) cover the window.
    """
    lo = base.t_lo % 1.0
    n0 = max(17, int(np.ceil(base.width / (0.25 * eps_curve))) + 1)
    thetas = lo + np.linspace(0.0, base.width, n0)
    while True:
        pts = _leaf_points(thetas, mapper)
        gaps = torus_dist(pts[:-1], pts[1:])
        bad = np.nonzero(gaps > eps_curve)[0]
        if bad.size == 0:
            return thetas
        mids = 0.5 * (thetas[bad] + thetas[bad + 1])
        thetas = np.sort(np.concatenate([thetas, mids]))


def _leaf_points(thetas: np.ndarray, mapper: SlowdownMap) -> np.ndarray:
    z = np.zeros(np.shape(thetas) + (3,))
    z[..., 0] = 0.5 - (0.5 - np.asarray(thetas)) % 1.0
    return from_chart(z, mapper.coeffs)


def estimate_return_tail(base: BaseSet, n_samples: int, n_max: int,
                         mapper: SlowdownMap, *, seed: int = 12345,
                         eps_curve: float = 1e-4, cap_factor: int = 100,
                         kick_every: int = 1) -> SurvivalSeries:
    """Survival function of the first return to the base window.

    Starts are placed stratified-uniformly by arclength on the unstable
    leaf of the fixed point where it crosses the window (exact curve
    points, see unstable_curve_through_base), and each is iterated until
    its angle re-enters the window.  Starts exceeding cap_factor * n_max
    iterations are right-censored (counted as still alive at every n);
    their fraction must stay below 1e-3 or the run warns.
    """
    if n_samples < 1 or n_max < 1:
        raise ValidationError("n_samples and n_max must be >= 1")
    if (base.t_lo % 1.0) > (base.t_hi % 1.0):
        raise ValidationError("return-time base window must not straddle "
                              "t = 0")
    thetas = unstable_curve_through_base(base, mapper, eps_curve)
    pts = _leaf_points(thetas, mapper)
    seg = torus_dist(pts[:-1], pts[1:])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = (np.arange(n_samples) + 0.5) * (cum[-1] / n_samples)
    starts = np.ascontiguousarray(_leaf_points(np.interp(s, cum, thetas),
                                               mapper))
    taus = np.zeros(n_samples, dtype=np.int64)
    cap = cap_factor * n_max
    n_kicks = cap // kick_every + 1 if kick_every > 0 else 0
    kicks = (rng_stream(seed, 51).random(n_kicks) - 0.5) * KICK_SCALE
    status = K.return_times_kernel(starts, base.t_lo % 1.0, base.t_hi % 1.0,
                                   cap, mapper.P, mapper._a, mapper._b,
                                   kicks, kick_every, taus)
    if status == K.STEP_UNDERFLOW:
        raise StepFailure("return-time iteration: step size underflow")
    if status == K.BUDGET:
        raise BudgetExceeded("return-time iteration: step budget exhausted")
    censored = int(np.sum(taus == 0))
    if censored >= 1e-3 * n_samples:
        warnings.warn(f"right-censored fraction {censored / n_samples:.2e} "
                      f"exceeds 1e-3; tail beyond n_max is undersampled")
    counts = np.bincount(taus[taus > 0], minlength=n_max + 1)[:n_max + 1]
    survivors = n_samples - np.cumsum(counts)
    return SurvivalSeries(n=np.arange(n_max + 1),
                          survivors=survivors.astype(float),
                          total=float(n_samples), censored=censored)


def return_time_gcd(surv: SurvivalSeries) -> int:
    """gcd of all return times observed in the series (censoring excluded)."""
    d = -np.diff(surv.survivors)
    observed = surv.n[1:][d > 0]
    if observed.size == 0:
        raise ValidationError("no completed returns observed")
    return int(np.gcd.reduce(observed.astype(np.int64)))


# -- power-law fitting ------------------------------------------------------

@dataclass
class PowerLawFit:
    """WLS log-log fit y ~ exp(intercept) * n^(-slope) with bootstrap CI."""

    slope: float
    intercept: float
    r_squared: float
    ci_lo: float
    ci_hi: float
    n_min: int
    n_max: int
    censored_fraction: float = 0.0

    def __post_init__(self):
        if not self.n_min < self.n_max:
            raise ValidationError("fit window needs n_min < n_max")

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "window": [int(self.n_min), int(self.n_max)],
            "censored_fraction": self.censored_fraction,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def _wls_slope(lx: np.ndarray, ly: np.ndarray,
               w: np.ndarray) -> tuple[float, float, float]:
    coef = np.polyfit(lx, ly, 1, w=np.sqrt(w))
    resid = ly - (coef[0] * lx + coef[1])
    wmean = np.sum(w * ly) / np.sum(w)
    sstot = float(np.sum(w * (ly - wmean) ** 2))
    ssres = float(np.sum(w * resid ** 2))
    r2 = 1.0 if sstot == 0.0 else 1.0 - ssres / sstot
    return -float(coef[0]), float(coef[1]), r2


def fit_power_law(series, window: tuple[int, int], *, min_count: int = 100,
                  n_boot: int = 200, seed: int = 12345) -> PowerLawFit:
    """Weighted log-log fit of a decaying series over a bin window.

    For a SurvivalSeries the weights are inverse squared relative binomial
    errors and only bins with at least min_count survivors enter; the CI is
    a multinomial bootstrap over the underlying samples.  For a CorrSeries
    the magnitudes |c_hat| are fitted with weights from the batch-mean
    standard errors and a Gaussian parametric bootstrap.
    """
    n_min, n_max = int(window[0]), int(window[1])
    if not 0 < n_min < n_max:
        raise ValidationError(f"bad fit window [{n_min}, {n_max}]")
    rng = rng_stream(seed, 60)

    if isinstance(series, SurvivalSeries):
        n = series.n
        y = series.p_hat
        sel = ((n >= n_min) & (n <= n_max) & (y > 0)
               & (series.survivors >= min_count))
        if int(np.sum(sel)) < 5:
            raise WindowTooSparse(
                f"fit window [{n_min}, {n_max}] has {int(np.sum(sel))} bins "
                f"with >= {min_count} survivors (need 5)")
        total = series.total
        relse = np.sqrt((1.0 - y[sel] + 1.0 / total) / (total * y[sel]))
        w = 1.0 / relse**2
        lx = np.log(n[sel].astype(float))
        slope, intercept, r2 = _wls_slope(lx, np.log(y[sel]), w)

        masses = np.concatenate([-np.diff(series.survivors),
                                 [series.survivors[-1]]])
        probs = masses / masses.sum()
        slopes = np.empty(n_boot)
        for b in range(n_boot):
            draw = rng.multinomial(int(round(total)), probs)
            surv_b = total - np.cumsum(np.concatenate([[0], draw[:-1]]))
            y_b = (surv_b / total)[sel]
            good = y_b > 0
            if int(np.sum(good)) < 2:
                slopes[b] = np.nan
                continue
            slopes[b] = _wls_slope(lx[good], np.log(y_b[good]), w[good])[0]
        lo, hi = np.nanpercentile(slopes, [2.5, 97.5])
        return PowerLawFit(slope=slope, intercept=intercept, r_squared=r2,
                           ci_lo=float(lo), ci_hi=float(hi), n_min=n_min,
                           n_max=n_max,
                           censored_fraction=series.censored_fraction)

    # CorrSeries-like: fit |c_hat| against n with stderr weights
    n = np.asarray(series.n)
    mag = np.abs(np.asarray(series.c_hat))
    se = np.asarray(series.stderr)
    sel = (n >= n_min) & (n <= n_max) & (mag > 0) & np.isfinite(se) & (se > 0)
    if int(np.sum(sel)) < 5:
        raise WindowTooSparse(
            f"fit window [{n_min}, {n_max}] has {int(np.sum(sel))} usable "
            f"bins (need 5)")
    relse = se[sel] / mag[sel]
    w = 1.0 / relse**2
    lx = np.log(n[sel].astype(float))
    slope, intercept, r2 = _wls_slope(lx, np.log(mag[sel]), w)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        y_b = mag[sel] + se[sel] * rng.standard_normal(int(np.sum(sel)))
        good = y_b > 0
        if int(np.sum(good)) < 2:
            slopes[b] = np.nan
            continue
        slopes[b] = _wls_slope(lx[good], np.log(y_b[good]), w[good])[0]
    lo, hi = np.nanpercentile(slopes, [2.5, 97.5])
    return PowerLawFit(slope=slope, intercept=intercept, r_squared=r2,
                       ci_lo=float(lo), ci_hi=float(hi), n_min=n_min,
                       n_max=n_max)


# -- tail-sum comparison ----------------------------------------------------

@dataclass
class TailComparison:
    """Ratio of measured correlations to the survival tail-sum prediction."""

    n: np.ndarray
    rho: np.ndarray
    rho_raw: np.ndarray
    tail_sum: np.ndarray
    mean_return: float
    mean_h1: float
    mean_h2: float


def tail_sum_comparison(corr: CorrSeries, surv: SurvivalSeries,
                        window: tuple[int, int], *,
                        fit: PowerLawFit | None = None,
                        min_count: int = 100,
                        normalize_by_mean_return: bool = True,
                        seed: int = 12345) -> TailComparison:
    """Compare correlations to the predicted tail sum of return times.

    The prediction at lag n is mean(h1) * mean(h2) * sum_{N>n} eta(tau>N);
    the return-time law eta is realized as the curve survival p_hat with
    (by default) the mean-return-time normalization that turns arclength
    survival into a probability tail over the induced tower.  The sum is
    truncated at the survival grid top with the remainder bounded by the
    fitted power law.
    """
    m1, m2 = corr.mean_h1, corr.mean_h2
    if m1 * m2 <= 0.0:
        raise ZeroMeans(f"need mean(h1) * mean(h2) > 0, got {m1} * {m2}")
    n_lo, n_hi = int(window[0]), int(window[1])
    top = int(surv.n[-1])
    sel = (corr.n >= n_lo) & (corr.n <= n_hi) & (corr.n < top)
    nn = corr.n[sel]
    if nn.size == 0:
        raise WindowTooSparse(f"window [{n_lo}, {n_hi}] is empty on the "
                              f"correlation grid")
    if fit is None:
        fit = fit_power_law(surv, (max(n_lo, 2), top), min_count=min_count,
                            seed=seed)
    if fit.slope > 1.0:
        remainder = np.exp(fit.intercept) * top ** (1.0 - fit.slope) \
            / (fit.slope - 1.0)
    else:
        warnings.warn(f"fitted tail slope {fit.slope:.3f} <= 1; truncation "
                      f"remainder set to 0")
        remainder = 0.0

    p = surv.p_hat
    pre = np.cumsum(p)
    tail = (pre[-1] - pre[nn]) + remainder
    if np.any(tail <= 0):
        raise WindowTooSparse("tail sum vanished inside the window")
    mean_return = float(pre[-1] + remainder)
    rho_raw = corr.c_hat[sel] / (tail * m1 * m2)
    rho = rho_raw * mean_return if normalize_by_mean_return else rho_raw
    return TailComparison(n=nn, rho=rho, rho_raw=rho_raw, tail_sum=tail,
                          mean_return=mean_return, mean_h1=m1, mean_h2=m2)

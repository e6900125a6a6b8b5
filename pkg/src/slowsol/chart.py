"""Linearizing chart around the solenoid's fixed point.

The center curve t -> (a(t), b(t)) through the fixed point satisfies the
functional equations

    a(m t) = lam a(t) + eta cos 2 pi t
    b(m t) = lam b(t) + eta sin 2 pi t,

and the coordinate change  phi(t, x, y) = (lift t, x - a(t), y - b(t))
conjugates the solenoid map to its linear part diag(m, lam, lam) wherever
both sides stay inside the chart.  Matching power series around t = 0 gives
closed-form coefficients

    a_k = eta (-1)^(k/2)     (2 pi)^k / ((m^k - lam) k!)   for even k, else 0
    b_k = eta (-1)^((k-1)/2) (2 pi)^k / ((m^k - lam) k!)   for odd k,  else 0,

an entire series: the factorial beats the geometric numerator on every
bounded interval, so truncation error is controlled by an explicit tail sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import SolenoidParams
from .errors import OutOfDomain, TailTooLarge
from .util import lift

TAIL_LIMIT = 1e-14


@dataclass(frozen=True, eq=False)
class SeriesCoefficients:
    """Truncated chart series.

    a, b : coefficient arrays of length K+1 (index = power of t)
    K    : truncation order
    tail_bound : rigorous bound on the sup of the omitted tail over
                 |t| <= m * domain_half_width (the widest argument the
                 functional equation ever feeds to the series)
    domain_half_width : half-width of the t-interval the chart serves
    """

    a: np.ndarray
    b: np.ndarray
    K: int
    tail_bound: float
    domain_half_width: float
    m: int
    lam: float
    eta: float

    @property
    def a_prime(self) -> np.ndarray:
        return self.a[1:] * np.arange(1, self.K + 1)

    @property
    def b_prime(self) -> np.ndarray:
        return self.b[1:] * np.arange(1, self.K + 1)


def series_coefficients(
    sol: SolenoidParams,
    K: int = 40,
    domain_half_width: float = 0.5,
    enforce_tail: bool = True,
) -> SeriesCoefficients:
    """Build the chart series to order K.

    Raises TailTooLarge when the truncation tail over the working interval
    exceeds the package-wide bound and enforce_tail is set.  Diagnostic
    callers (deliberately degraded truncations) can disable enforcement;
    anything feeding the dynamics must not.
    """
    m, lam, eta = sol.m, sol.lam, sol.eta
    a = np.zeros(K + 1)
    b = np.zeros(K + 1)
    # (2 pi)^k / k! built recursively to avoid overflow at large k
    pk = 1.0  # (2 pi)^k / k!
    for k in range(K + 1):
        if k > 0:
            pk *= 2.0 * np.pi / k
        mag = eta * pk / (float(m) ** k - lam)
        if k % 2 == 0:
            a[k] = mag if (k // 2) % 2 == 0 else -mag
        else:
            b[k] = mag if ((k - 1) // 2) % 2 == 0 else -mag

    t_max = m * domain_half_width
    tail = 0.0
    qk = pk  # (2 pi)^k / k! at k = K
    mk = float(m) ** K
    k = K
    while True:
        k += 1
        qk *= 2.0 * np.pi * t_max / k
        mk *= m
        term = eta * qk / (mk - lam)
        tail += term
        if term < 1e-300 or k > K + 500:
            break
    if enforce_tail and tail > TAIL_LIMIT:
        raise TailTooLarge(
            f"series tail {tail:.3e} over |t| <= {t_max} exceeds {TAIL_LIMIT}; "
            f"raise K (= {K})"
        )
    return SeriesCoefficients(
        a=a, b=b, K=K, tail_bound=tail, domain_half_width=domain_half_width,
        m=m, lam=lam, eta=eta,
    )


def _check_arg(coeffs: SeriesCoefficients, t) -> None:
    t_max = coeffs.m * coeffs.domain_half_width
    bad = np.max(np.abs(t)) if np.ndim(t) else abs(t)
    if bad > t_max * (1 + 1e-12):
        raise OutOfDomain(f"series argument |t| = {bad} beyond validated {t_max}")


def eval_ab(coeffs: SeriesCoefficients, t):
    """Evaluate (a(t), b(t)) by Horner's rule.  t may be scalar or array."""
    _check_arg(coeffs, t)
    t = np.asarray(t, dtype=float)
    av = np.zeros_like(t)
    bv = np.zeros_like(t)
    for k in range(coeffs.K, -1, -1):
        av = av * t + coeffs.a[k]
        bv = bv * t + coeffs.b[k]
    return av, bv


def eval_ab_prime(coeffs: SeriesCoefficients, t):
    """Evaluate (a'(t), b'(t))."""
    _check_arg(coeffs, t)
    t = np.asarray(t, dtype=float)
    ap = coeffs.a_prime
    bp = coeffs.b_prime
    av = np.zeros_like(t)
    bv = np.zeros_like(t)
    for k in range(coeffs.K - 1, -1, -1):
        av = av * t + ap[k]
        bv = bv * t + bp[k]
    return av, bv


def to_chart(q, coeffs: SeriesCoefficients):
    """Chart coordinates (u, v, w) of torus point(s) q = (t, x, y).

    u is the lift of t to (-1/2, 1/2] (ties to +1/2); v, w subtract the
    center curve.  Requires the lifted angle to sit inside the chart domain.
    """
    q = np.asarray(q, dtype=float)
    u = lift(q[..., 0])
    if np.max(np.abs(u)) > coeffs.domain_half_width * (1 + 1e-12):
        raise OutOfDomain(
            f"angle lift {np.max(np.abs(u))} outside half-width "
            f"{coeffs.domain_half_width}"
        )
    av, bv = eval_ab(coeffs, u)
    return np.stack([u, q[..., 1] - av, q[..., 2] - bv], axis=-1)


def from_chart(z, coeffs: SeriesCoefficients):
    """Torus point(s) (t, x, y) of chart coordinates z = (u, v, w).

    Valid for |u| up to m * domain_half_width: the time-one image of a chart
    point can overshoot the base interval by a factor up to m and the series
    is validated there.
    """
    z = np.asarray(z, dtype=float)
    u = z[..., 0]
    av, bv = eval_ab(coeffs, u)  # includes the argument check
    return np.stack([np.mod(u, 1.0), z[..., 1] + av, z[..., 2] + bv], axis=-1)


def functional_residual(coeffs: SeriesCoefficients, t_grid):
    """Max residual of the two functional equations over a t grid."""
    t = np.asarray(t_grid, dtype=float)
    a_mt, b_mt = eval_ab(coeffs, coeffs.m * t)
    a_t, b_t = eval_ab(coeffs, t)
    ra = a_mt - coeffs.lam * a_t - coeffs.eta * np.cos(2 * np.pi * t)
    rb = b_mt - coeffs.lam * b_t - coeffs.eta * np.sin(2 * np.pi * t)
    return float(np.max(np.abs(np.concatenate([ra, rb]))))


@dataclass(frozen=True)
class ConjugacyAudit:
    max_residual: float
    argmax: tuple[float, float, float]
    K: int
    radius: float

    def as_dict(self) -> dict:
        u, v, w = self.argmax
        return {
            "max_residual": self.max_residual,
            "argmax": {"u": u, "v": v, "w": w},
            "K": self.K,
            "radius": self.radius,
        }


def conjugacy_residual(
    sol: SolenoidParams,
    coeffs: SeriesCoefficients,
    n_samples: int = 10_000,
    radius: float = 0.1,
    seed: int = 0,
) -> ConjugacyAudit:
    """Max deviation of chart->map->chart from the linear model diag(m, lam, lam).

    Samples z uniformly in the chart ball ||z|| <= radius, pushes each through
    from_chart -> F -> to_chart and compares with (m u, lam v, lam w).
    radius must not exceed chart_radius-like bounds: the image angle m*u has
    to stay inside the lift window, so radius <= domain_half_width / 1 is
    required and radius <= (m * domain_half_width) / m trivially holds.
    """
    from .util import rng_stream

    if sol.m * radius > coeffs.domain_half_width:
        raise OutOfDomain(
            f"m*radius = {sol.m * radius} exceeds chart half-width "
            f"{coeffs.domain_half_width}: image angles would leave the lift window"
        )
    g = rng_stream(seed, 101)
    # uniform in the ball: direction times radius * U^(1/3) scaling
    xyz = g.normal(size=(n_samples, 3))
    xyz /= np.linalg.norm(xyz, axis=1)[:, None]
    r = radius * g.random(n_samples) ** (1.0 / 3.0)
    z = xyz * r[:, None]

    q = from_chart(z, coeffs)
    t, x, y = q[:, 0], q[:, 1], q[:, 2]
    fq = np.stack(
        [
            np.mod(sol.m * t, 1.0),
            sol.lam * x + sol.eta * np.cos(2 * np.pi * t),
            sol.lam * y + sol.eta * np.sin(2 * np.pi * t),
        ],
        axis=-1,
    )
    zf = to_chart(fq, coeffs)
    lin = np.stack([sol.m * z[:, 0], sol.lam * z[:, 1], sol.lam * z[:, 2]], axis=-1)
    res = np.linalg.norm(zf - lin, axis=1)
    i = int(np.argmax(res))
    return ConjugacyAudit(
        max_residual=float(res[i]),
        argmax=(float(z[i, 0]), float(z[i, 1]), float(z[i, 2])),
        K=coeffs.K,
        radius=radius,
    )


def coefficients_csv(coeffs: SeriesCoefficients, path) -> None:
    with open(path, "w") as f:
        f.write("k,a_k,b_k\n")
        for k in range(coeffs.K + 1):
            f.write(f"{k},{float(coeffs.a[k])!r},{float(coeffs.b[k])!r}\n")

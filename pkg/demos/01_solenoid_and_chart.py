#!/usr/bin/env python3
"""The doubling solenoid and its straightening chart.

The base map doubles an angle and contracts the transverse plane onto a
rotating target, so every orbit is drawn onto a solenoid attractor whose
cross-section is a Cantor set.  This script iterates a cloud of random
starts to watch that contraction happen, locates the fixed point, and
then builds the analytic chart that straightens the dynamics near the
fixed point into an exact linear map.  The chart is a trigonometric
series; we verify its defining functional equation and measure how well
the conjugated map matches its linearization on a neighborhood.

Run from the repository root:

    python3 demos/01_solenoid_and_chart.py

Plots are written to demos/output/ when matplotlib is available.
"""

from pathlib import Path

import numpy as np

from slowsol.chart import (
    conjugacy_residual,
    from_chart,
    functional_residual,
    series_coefficients,
    to_chart,
)
from slowsol.constants import SlowdownParams, SolenoidParams, derive_constants
from slowsol.solenoid import apply_F, fixed_point

OUT_DIR = Path(__file__).resolve().parent / "output"


def get_pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        return plt
    except ImportError:
        return None


def main() -> None:
    sol = SolenoidParams()
    slow = SlowdownParams()
    c = derive_constants(sol, slow)
    print("== The base map ==")
    print(f"angle multiplier m = {sol.m}, contraction lam = {sol.lam}, "
          f"target radius eta = {sol.eta}")
    print(f"unstable rate gamma = log m = {c.gamma:.6f}, "
          f"stable rate beta = -log lam = {c.beta:.6f}")

    # Two starts sharing an angle keep sharing an angle forever, and their
    # (x, y) difference contracts by exactly lam per step: every fiber is
    # squeezed onto a single attractor point.
    qa = np.array([0.37, 1.2, -0.8])
    qb = np.array([0.37, -0.9, 0.4])
    print("\n== Contraction onto the attractor ==")
    print("step   distance between two same-angle starts   lam^step")
    for step in range(0, 21, 4):
        dist = float(np.linalg.norm(qa[1:] - qb[1:]))
        print(f"{step:4d}   {dist:32.6e}   {sol.lam**step:.6e}")
        for _ in range(4):
            qa = apply_F(qa, sol)
            qb = apply_F(qb, sol)

    # A cloud of random starts paints the attractor itself: after a short
    # transient every point sits within lam^k of the limit set, whose
    # cross-section is a Cantor set of macroscopic diameter.
    rng = np.random.default_rng(0)
    n_cloud = 4000
    cloud = np.column_stack([
        rng.random(n_cloud),
        rng.uniform(-1.5, 1.5, n_cloud),
        rng.uniform(-1.5, 1.5, n_cloud),
    ])
    for _ in range(24):
        cloud = np.array([apply_F(q, sol) for q in cloud])

    # The fixed point: angle 0 with (x, y) solving the affine fixed-point
    # equation of the contracting factor.
    p = fixed_point(sol)
    image = apply_F(p, sol)
    print("\n== Fixed point ==")
    print(f"p = ({p[0]:.6f}, {p[1]:.6f}, {p[2]:.6f})")
    print(f"|F(p) - p| = {np.linalg.norm(image - p):.3e}")

    # The straightening chart.  Its center curve (a(t), b(t)) traces the
    # attractor's unstable leaf through the fixed point; subtracting the
    # curve and rescaling turns one map step into multiplication by
    # diag(m, lam, lam) exactly.
    coeffs = series_coefficients(sol)
    print("\n== Straightening chart ==")
    print(f"series length K = {coeffs.K}, tail bound = {coeffs.tail_bound:.3e}")

    t_grid = np.linspace(-0.5, 0.5, 20_001)
    res = functional_residual(coeffs, t_grid)
    print(f"functional-equation residual on {len(t_grid)} angles: "
          f"max = {np.max(res):.3e}")

    z = np.array([0.01, 0.004, -0.003])
    q = from_chart(z, coeffs)
    z_back = to_chart(q, coeffs)
    print(f"round trip chart -> torus -> chart at {z}: "
          f"err = {np.max(np.abs(z_back - z)):.3e}")

    audit = conjugacy_residual(sol, coeffs)
    d = audit.as_dict()
    print(f"conjugacy audit on a random chart ball (radius = {d['radius']}):")
    print(f"  worst |chart(F(q)) - A z|  = {d['max_residual']:.3e}")
    print("  (A = diag(m, lam, lam): one map step is exactly linear in the chart)")

    plt = get_pyplot()
    if plt is None:
        print("\nmatplotlib not available; skipping plots")
        return
    OUT_DIR.mkdir(exist_ok=True)

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.6))

    ax = axes[0]
    final = cloud
    ax.scatter(final[:, 1], final[:, 2], s=1.0, c=final[:, 0], cmap="twilight")
    ax.scatter([p[1]], [p[2]], marker="*", s=120, color="red", zorder=3,
               label="fixed point")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("attractor, (x, y) projection\n(color = angle)")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)

    ax = axes[1]
    in_slice = np.abs(final[:, 0] - 0.5) < 0.05
    ax.scatter(final[in_slice, 1], final[in_slice, 2], s=2.0, color="navy")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("thin angle slice after 24 steps\n(Cantor cross-section forming)")
    ax.set_aspect("equal")

    ax = axes[2]
    # The center curve is the chart image of the pure-angle axis: the
    # unstable leaf of the fixed point, traced over a full angle turn.
    us = np.linspace(-0.499, 0.499, 2001)
    pts = np.array([from_chart(np.array([u, 0.0, 0.0]), coeffs) for u in us])
    ax.plot(pts[:, 1], pts[:, 2], lw=0.8, color="darkgreen",
            label="chart center curve")
    ax.scatter([p[1]], [p[2]], marker="*", s=120, color="red", zorder=3)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("unstable leaf through the fixed point")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)

    fig.tight_layout()
    out = OUT_DIR / "01_solenoid_and_chart.png"
    fig.savefig(out, dpi=130)
    print(f"\nwrote {out}")


if __name__ == "__main__":
    main()

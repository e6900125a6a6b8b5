import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowsol.constants import SlowdownParams, SolenoidParams, derive_constants
from slowsol.chart import from_chart, series_coefficients, to_chart
from slowsol.errors import BudgetExceeded, StepFailure, ValidationError
from slowsol.slowdown import (
    IntegratorConfig,
    PsiProfile,
    SlowdownMap,
    branch_consistency_audit,
    linear_min_norm,
    pack_params,
    slow_field,
    time_one_dense,
    time_one_map,
    trajectory_csv,
)
from slowsol.solenoid import apply_F, fixed_point
from slowsol.util import rng_stream, torus_dist

SOL = SolenoidParams()
SD = SlowdownParams()
C = derive_constants(SOL, SD)
PROF = PsiProfile(alpha_slow=SD.alpha, r0=SD.r0, r1=SD.r1)


class TestProfile:
    def test_pure_power_below_r0(self):
        assert PROF.psi(SD.r0 / 2) == pytest.approx(0.1, abs=1e-15)
        for r in np.linspace(1e-6, SD.r0, 50):
            assert PROF.psi(r) == r**SD.alpha

    def test_one_above_r1(self):
        assert PROF.psi(2 * SD.r1) == 1.0
        assert PROF.psi(SD.r1) == 1.0
        assert PROF.dpsi(2 * SD.r1) == 0.0

    def test_knot_values_and_slopes(self):
        assert PROF.psi(SD.r0) == pytest.approx(0.1414213562373095, abs=1e-15)
        inner = SD.alpha * SD.r0 ** (SD.alpha - 1)
        assert inner == pytest.approx(3.5355339059327378, abs=1e-12)
        assert PROF.dpsi(SD.r0 * (1 + 1e-14)) == pytest.approx(inner, rel=1e-9)
        assert PROF.dpsi(SD.r1 * (1 - 1e-14)) == pytest.approx(0.0, abs=1e-9)

    def test_strictly_increasing_on_blend(self):
        grid = np.linspace(SD.r0, SD.r1, 10_000)
        assert np.all(np.diff(PROF.psi(grid)) > 0)

    def test_zero_at_origin(self):
        assert PROF.psi(0.0) == 0.0

    def test_bad_radii_rejected(self):
        with pytest.raises(ValidationError):
            PsiProfile(alpha_slow=0.5, r0=0.04, r1=0.02)

    def test_nonmonotone_blend_rejected(self):
        # a very wide blend interval makes the Hermite overshoot
        with pytest.raises(ValidationError):
            PsiProfile(alpha_slow=0.5, r0=0.02, r1=0.9)

    def test_csv_dump(self, tmp_path):
        path = tmp_path / "profile.csv"
        PROF.to_csv(path, n=101)
        lines = path.read_text().splitlines()
        assert lines[0] == "r,psi,dpsi"
        assert len(lines) == 102
        r, ps, dps = map(float, lines[50].split(","))
        assert ps == pytest.approx(PROF.psi(r), abs=0)


def test_integrator_config_validation():
    with pytest.raises(ValidationError):
        IntegratorConfig(rel_tol=0.0)
    cfg = IntegratorConfig()
    assert cfg.rel_tol == 1e-10
    assert cfg.abs_tol == 1e-10
    assert cfg.max_steps == 1_000_000
    assert cfg.min_step == 1e-12


class TestSlowField:
    def test_zero_at_origin(self):
        assert np.all(slow_field(np.zeros(3), PROF, C) == 0.0)

    def test_unslowed_outside_r1(self):
        z = np.array([0.05, -0.03, 0.02])
        assert np.linalg.norm(z) >= SD.r1
        f = slow_field(z, PROF, C)
        expect = np.array([C.gamma * z[0], -C.beta * z[1], -C.beta * z[2]])
        assert np.array_equal(f, expect)

    def test_axis_pure_power(self):
        for u in [1e-4, 1e-3, 0.01, SD.r0]:
            f = slow_field(np.array([u, 0.0, 0.0]), PROF, C)
            assert f[0] == pytest.approx(C.gamma * u ** (1 + SD.alpha),
                                         rel=1e-14)
            assert f[1] == f[2] == 0.0


class TestTimeOneMap:
    def test_origin_fixed(self):
        assert np.all(time_one_map(np.zeros(3), PROF, C) == 0.0)

    def test_unslowed_axis_start(self):
        out = time_one_map(np.array([SD.r1, 0.0, 0.0]), PROF, C)
        assert abs(out[0] - SOL.m * SD.r1) < 1e-10
        assert out[1] == out[2] == 0.0

    def test_slow_axis_closed_form(self):
        out = time_one_map(np.array([0.01, 0.0, 0.0]), PROF, C)
        exact = (0.01**-SD.alpha - SD.alpha * C.gamma) ** (-1 / SD.alpha)
        assert abs(out[0] - exact) < 1e-8
        assert exact == pytest.approx(0.010730921542184885, abs=1e-12)

    def test_closed_form_on_log_grid(self):
        # closed form valid while the trajectory stays in the pure-power zone
        u_top = (SD.r0**-SD.alpha + SD.alpha * C.gamma) ** (-1 / SD.alpha)
        for u0 in np.geomspace(1e-6, u_top * 0.999, 25):
            out = time_one_map(np.array([u0, 0.0, 0.0]), PROF, C)
            exact = (u0**-SD.alpha - SD.alpha * C.gamma) ** (-1 / SD.alpha)
            assert abs(out[0] - exact) < 1e-8

    def test_linear_where_trajectory_avoids_ball(self):
        z = np.array([0.05, 0.05, 0.0])
        assert linear_min_norm(z, C) > SD.r1
        out = time_one_map(z, PROF, C)
        expect = np.array([SOL.m * z[0], SOL.lam * z[1], SOL.lam * z[2]])
        assert np.abs(out - expect).max() < 1e-10

    def test_monotone_slow_down(self):
        for u0 in [1e-4, 1e-3, 0.01, 0.03, 0.0399]:
            assert u0 < SD.r1
            out = time_one_map(np.array([u0, 0.0, 0.0]), PROF, C)
            assert out[0] < SOL.m * u0

    def test_budget_exceeded(self):
        cfg = IntegratorConfig(max_steps=3)
        with pytest.raises(BudgetExceeded):
            time_one_map(np.array([0.01, 0.005, 0.0]), PROF, C, cfg)

    def test_step_failure_on_min_step(self):
        # a stable-axis start crosses the r1 knot, forcing a step rejection;
        # with an absurd min_step the retry is refused and surfaces as an error
        cfg = IntegratorConfig(rel_tol=1e-14, abs_tol=1e-16, min_step=0.1,
                               max_steps=200_000)
        with pytest.raises(StepFailure):
            time_one_map(np.array([0.0, 0.12, 0.0]), PROF, C, cfg)

    def test_deterministic(self):
        z = np.array([0.011, -0.004, 0.0072])
        a = time_one_map(z, PROF, C)
        b = time_one_map(z.copy(), PROF, C)
        assert np.array_equal(a, b)


class TestGrowthBounds:
    def test_norm_bounds_along_dense_output(self):
        rng = rng_stream(7, 1)
        n_traj = 1000
        dirs = rng.standard_normal((n_traj, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = SD.V_radius * rng.random(n_traj) ** (1 / 3)
        for z0 in dirs * radii[:, None]:
            rows = time_one_dense(z0, PROF, C)
            norms = np.sqrt(rows[:, 1] ** 2 + rows[:, 2] ** 2
                            + rows[:, 3] ** 2)
            upper = norms[0] * np.exp(C.gamma * rows[:, 0])
            assert np.all(norms <= upper * (1 + 1e-9))

    def test_stable_subspace_lower_bound(self):
        rng = rng_stream(7, 2)
        for _ in range(100):
            th = 2 * np.pi * rng.random()
            r = SD.V_radius * rng.random()
            z0 = np.array([0.0, r * np.cos(th), r * np.sin(th)])
            rows = time_one_dense(z0, PROF, C)
            norms = np.sqrt(rows[:, 1] ** 2 + rows[:, 2] ** 2
                            + rows[:, 3] ** 2)
            lower = norms[0] * np.exp(-C.beta * rows[:, 0])
            assert np.all(norms >= lower * (1 - 1e-9))


@pytest.fixture(scope="module")
def mapper():
    return SlowdownMap()


class TestHybridMap:
    def test_fixed_point_exactly_preserved(self, mapper):
        p = fixed_point(SOL)
        assert np.array_equal(mapper.step(p), p)

    def test_far_point_uses_plain_map(self, mapper):
        q = np.array([0.5, 0.0, 0.0])
        assert not mapper.in_V(q)
        assert np.array_equal(mapper.step(q), apply_F(q, SOL))

    def test_overlap_point_branches_agree(self, mapper):
        z = np.array([0.1, 0.05, 0.03])
        assert SD.r1 < np.linalg.norm(z) <= SD.V_radius
        assert linear_min_norm(z, C) > SD.r1
        q = from_chart(z, mapper.coeffs)
        assert mapper.in_V(q)
        assert torus_dist(mapper.step(q), apply_F(q, SOL)) < 1e-8

    def test_step_many_matches_scalar(self, mapper):
        rng = rng_stream(7, 3)
        Q = np.column_stack([rng.random(200), 0.4 * rng.random(200) - 0.2,
                             0.4 * rng.random(200) - 0.2])
        batch = mapper.step_many(Q)
        for i in range(0, 200, 13):
            assert np.array_equal(batch[i], mapper.step(Q[i]))

    def test_deterministic_across_instances(self):
        q = np.array([0.02, 0.8571, 0.001])
        a = SlowdownMap().step(q)
        b = SlowdownMap().step(q)
        assert np.array_equal(a, b)

    def test_meets_ball_predicate_matches_dense_minimum(self, mapper):
        rng = rng_stream(7, 4)
        checked = 0
        while checked < 40:
            z = rng.standard_normal(3)
            z *= SD.V_radius * rng.random() ** (1 / 3) / np.linalg.norm(z)
            if np.linalg.norm(z) <= SD.r1:
                continue
            predicted = linear_min_norm(z, C) <= SD.r1
            rows = time_one_dense(z, PROF, C)
            dense_min = np.min(np.sqrt(rows[:, 1] ** 2 + rows[:, 2] ** 2
                                       + rows[:, 3] ** 2))
            # skip near-tangent cases where discretization could flip the call
            if abs(dense_min - SD.r1) < 1e-4 * SD.r1:
                continue
            assert predicted == (dense_min <= SD.r1)
            q = from_chart(z, mapper.coeffs)
            assert mapper.meets_ball_in_one_step(q) == predicted
            checked += 1

    def test_tangent_step_matches_finite_differences(self, mapper):
        for q in [np.array([0.03, 0.84, 0.02]), np.array([0.31, 0.1, -0.4])]:
            J = mapper.jacobian(q)
            h = 1e-7
            for k in range(3):
                e = np.zeros(3)
                e[k] = h
                hi, lo = mapper.step(q + e), mapper.step(q - e)
                col = (hi - lo) / (2 * h)
                col[0] = ((hi[0] - lo[0] + 0.5) % 1.0 - 0.5) / (2 * h)
                assert np.abs(col - J[:, k]).max() < 1e-5

    def test_tangent_stretch_positive(self, mapper):
        q = np.array([0.03, 0.84, 0.02])
        _, _, stretch = mapper.tangent_step(q, np.array([1.0, 0.0, 2.2]))
        assert stretch > 0


class TestBranchAudit:
    def test_baseline_discrepancy_small(self):
        mapper = SlowdownMap()
        report = branch_consistency_audit(mapper, n_samples=10_000, seed=0)
        assert report["n_samples"] == 10_000
        assert report["max_discrepancy"] < 1e-8

    def test_fixed_point_discrepancy_zero(self):
        mapper = SlowdownMap()
        p = fixed_point(SOL)
        assert torus_dist(mapper.step(p), apply_F(p, SOL)) == 0.0

    def test_discrepancy_grows_with_degraded_chart(self):
        good = branch_consistency_audit(SlowdownMap(), n_samples=2000, seed=1)
        coarse = series_coefficients(SOL, K=6, enforce_tail=False)
        degraded = branch_consistency_audit(
            SlowdownMap(coeffs=coarse), n_samples=2000, seed=1)
        assert degraded["max_discrepancy"] > 100 * good["max_discrepancy"]


def test_trajectory_csv_format(tmp_path):
    path = tmp_path / "traj.csv"
    trajectory_csv(path, np.array([0.01, 0.004, -0.002]), PROF, C)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,u,v,w,psi"
    first = [float(s) for s in lines[1].split(",")]
    assert first[0] == 0.0
    assert first[1] == 0.01
    last = [float(s) for s in lines[-1].split(",")]
    assert last[0] == 1.0


def test_linear_min_norm_against_sampling():
    rng = rng_stream(7, 5)
    tgrid = np.linspace(0.0, 1.0, 20_001)
    for _ in range(50):
        z = 0.1 * rng.standard_normal(3)
        sampled = np.min(np.sqrt(
            z[0] ** 2 * np.exp(2 * C.gamma * tgrid)
            + (z[1] ** 2 + z[2] ** 2) * np.exp(-2 * C.beta * tgrid)))
        assert linear_min_norm(z, C) == pytest.approx(sampled, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(1e-8, 0.12))
def test_profile_range_property(r):
    val = PROF.psi(r)
    assert 0.0 < val <= 1.0
    assert PROF.psi(r * 0.9) <= val

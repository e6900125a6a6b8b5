import json

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

import slowsol._kernels as K
from slowsol.chart import eval_ab_prime, to_chart
from slowsol.constants import SolenoidParams, SlowdownParams
from slowsol.errors import CurveTooCoarse, NoExit, OutOfDomain, ValidationError
from slowsol.flowlab import (
    AuditReport,
    BallPassage,
    _fit_loglog,
    _LeafWindow,
    audit_curve_length_through_ball,
    audit_pair_separation,
    audit_Q_bounds,
    axis_escape_time,
    compute_passage,
    measured_axis_escape_time,
)
from slowsol.slowdown import IntegratorConfig, SlowdownMap

# frozen independently-computed anchors
AXIS_T = 268.1362192458569            # (1e4^.5 - .02^-.5) / (.5 ln 2)
PASSAGE_T = 12.58374324868386         # rel/abs 1e-12 integration, frozen
PASSAGE_T1 = 4.332935642598252
NU_HAT = 1.701810304724488
XI_HAT = 4.275808627467124


@pytest.fixture(scope="module")
def mapper():
    return SlowdownMap()


class TestAxisOracle:
    def test_closed_form_anchor(self, mapper):
        T = axis_escape_time(1e-4, 0.02, mapper.constants, 0.02)
        assert T == pytest.approx(AXIS_T, abs=1e-9)

    def test_equal_radii_give_zero(self, mapper):
        assert axis_escape_time(0.015, 0.015, mapper.constants, 0.02) == 0.0

    def test_domain_errors(self, mapper):
        c = mapper.constants
        with pytest.raises(OutOfDomain):
            axis_escape_time(1e-4, 0.03, c, 0.02)     # past the power zone
        with pytest.raises(OutOfDomain):
            axis_escape_time(0.0, 0.01, c, 0.02)
        with pytest.raises(OutOfDomain):
            axis_escape_time(0.015, 0.01, c, 0.02)

    def test_integrator_agrees_on_log_grid(self, mapper):
        r0 = mapper.profile.r0
        for u0 in np.geomspace(1e-5, 0.9 * r0, 7):
            exact = axis_escape_time(u0, r0, mapper.constants, r0)
            measured = measured_axis_escape_time(u0, r0, mapper)
            assert abs(measured - exact) <= 1e-6 * exact

    def test_measured_anchor(self, mapper):
        measured = measured_axis_escape_time(1e-4, 0.02, mapper)
        assert abs(measured - AXIS_T) <= 1e-6 * AXIS_T


class TestComputePassage:
    def test_tiny_radius_config_survives_noise_floor(self):
        # stable components decay beneath the integrator's absolute
        # tolerance in this regime; the cone check must not flag the
        # resulting sub-tolerance wobble
        from slowsol.constants import SolenoidParams

        mp = SlowdownMap(SolenoidParams(m=2, lam=1e-6, eta=0.6),
                         SlowdownParams(alpha=0.25, r0=4e-8, r1=8e-8),
                         IntegratorConfig(rel_tol=1e-10, abs_tol=1e-16))
        entry = np.array([8.94830818e-11, -1.73851777e-08, -3.60242639e-08])
        p = compute_passage(entry, 4e-8, mp)
        assert p.T > 1e3
        assert p.noise_floor == 1e-16

    def test_recorded_anchors(self, mapper):
        R = mapper.profile.r0
        entry = R * np.array([1.0, -2.0, 2.0]) / 3.0
        p = compute_passage(entry, R, mapper)
        assert p.T == pytest.approx(PASSAGE_T, abs=1e-6)
        assert p.T1 == pytest.approx(PASSAGE_T1, abs=1e-6)

    def test_high_accuracy_matches_default(self, mapper):
        R = mapper.profile.r0
        entry = R * np.array([1.0, -2.0, 2.0]) / 3.0
        hi = compute_passage(entry, R, mapper,
                             icfg=IntegratorConfig(rel_tol=1e-12,
                                                   abs_tol=1e-12))
        lo = compute_passage(entry, R, mapper)
        assert abs(hi.T - lo.T) < 1e-6

    def test_exit_on_sphere_and_tan_monotone(self, mapper):
        R = mapper.profile.r0
        p = compute_passage(R * np.array([0.2, 0.6, -0.4]) / np.hypot(
            np.hypot(0.2, 0.6), 0.4), R, mapper)
        assert abs(np.linalg.norm(p.samples[-1, 1:4]) - R) <= 1e-9
        tan = p.tan_theta()
        assert np.all(np.diff(tan) <= 1e-9 * (1.0 + tan[:-1]))
        assert tan[0] > 1.0 and tan[-1] < 1.0
        assert 0.0 < p.T1 < p.T

    def test_tan_equal_one_entry_has_T1_zero(self, mapper):
        R = mapper.profile.r0
        entry = R * np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
        p = compute_passage(entry, R, mapper)
        assert p.T1 == 0.0
        assert p.T > 0.0

    def test_axis_entry_degenerate(self, mapper):
        R = mapper.profile.r0
        p = compute_passage(np.array([R, 0.0, 0.0]), R, mapper)
        assert p.T == 0.0 and p.T1 == 0.0
        assert p.samples.shape[0] == 1

    def test_stable_plane_entry_never_exits(self, mapper):
        R = mapper.profile.r0
        with pytest.raises(NoExit):
            compute_passage(np.array([0.0, R, 0.0]), R, mapper)

    def test_bad_entries_rejected(self, mapper):
        R = mapper.profile.r0
        with pytest.raises(OutOfDomain):
            compute_passage(np.array([R, R, 0.0]), R, mapper)  # off sphere
        with pytest.raises(OutOfDomain):
            compute_passage(np.array([0.03, 0.0, 0.0]), 0.03, mapper)

    def test_tampered_samples_rejected(self, mapper):
        R = mapper.profile.r0
        entry = R * np.array([1.0, -2.0, 2.0]) / 3.0
        p = compute_passage(entry, R, mapper)
        bad = p.samples.copy()
        bad[-1, 1:4] *= 1.5
        with pytest.raises(ValidationError):
            BallPassage(entry=p.entry, radius=p.radius, T=p.T, T1=p.T1,
                        samples=bad)


class TestQBounds:
    def test_baseline_clean(self, mapper):
        rep = audit_Q_bounds(300, mapper.profile.r0, mapper, seed=12345)
        assert rep.n_trials == 300
        assert rep.n_violations == 0
        # the sharp phase-1 bound is tight at t = 0 by construction
        assert rep.worst_ratio == pytest.approx(1.0, abs=1e-9)

    def test_blend_annulus_radius_rejected(self, mapper):
        with pytest.raises(OutOfDomain):
            audit_Q_bounds(10, mapper.profile.r1, mapper)

    def test_annulus_rows_reported_without_bounds(self, mapper):
        rep = audit_Q_bounds(60, mapper.profile.r0, mapper, seed=5)
        ann = [r for r in rep.records if r["quantity"] == "annulus_transit"]
        assert ann, "no annulus transits sampled"
        assert all(np.isinf(r["bound"]) and not r["violated"] for r in ann)
        times = [r["observed"] for r in ann]
        assert 0.0 < min(times) and max(times) < 10.0

    def test_thread_count_does_not_change_records(self, mapper):
        a = audit_Q_bounds(50, mapper.profile.r0, mapper, seed=3, threads=1)
        b = audit_Q_bounds(50, mapper.profile.r0, mapper, seed=3, threads=4)
        assert a.records == b.records
        assert a.summary() == b.summary()

    def test_small_lambda_regime_clean(self):
        sol = SolenoidParams(lam=1e-6)
        sd = SlowdownParams(alpha=0.25, r0=4e-8, r1=8e-8)
        mp = SlowdownMap(sol=sol, sd=sd,
                         icfg=IntegratorConfig(abs_tol=1e-16))
        rep = audit_Q_bounds(150, sd.r0, mp, seed=12345)
        assert rep.n_violations == 0


class TestPairSeparation:
    def test_constructed_passages_respect_bound(self, mapper):
        rep = audit_pair_separation(150, mapper, seed=12345)
        assert rep.n_trials == 150
        assert rep.n_violations == 0
        assert rep.worst_ratio < 1.0
        Ts = [r["T"] for r in rep.records]
        assert max(Ts) / max(min(Ts), 1.0) > 100.0    # spread of depths
        # growth exponent of the sharp passage amplification; the
        # log-depth ensemble reproduces it within a tight band
        assert 2.8 < rep.fitted_slope < 3.5
        assert rep.slope_ci_lo < rep.fitted_slope < rep.slope_ci_hi

    def test_slope_stable_under_doubling(self, mapper):
        r_half = audit_pair_separation(75, mapper, seed=7)
        r_full = audit_pair_separation(150, mapper, seed=7)
        assert abs(r_half.fitted_slope - r_full.fitted_slope) < 0.1

    def test_depth_floor_validated(self, mapper):
        with pytest.raises(ValidationError):
            audit_pair_separation(3, mapper, depth_floor=0.5)

    def test_shallow_graze_ratio_near_free_growth(self, mapper):
        c = mapper.constants
        R = mapper.profile.r0
        tan0 = np.sqrt(c.gamma / c.beta) * 1.05
        mu = 1.0 / np.sqrt(1.0 + tan0**2)
        entry = R * np.array([mu, tan0 * mu, 0.0])
        d0 = 1e-9
        y0 = np.concatenate([entry, [d0, 0.0, 0.0]])
        T, y, status = K.integrate_exit6(y0, R, mapper.P)
        assert status == K.OK
        assert T < 1.0
        rho = np.linalg.norm(y[3:]) / d0
        assert 1.0 - 1e-3 <= rho <= mapper.sol.m * (1.0 + 1e-3)
        assert rho <= np.exp(c.gamma * T) * (1.0 + 1e-3)


class TestCurveLength:
    def test_ratios_fit_between_derived_exponents(self, mapper):
        c = mapper.constants
        rep = audit_curve_length_through_ball(20, mapper, seed=12345)
        assert rep.n_trials == 20
        assert rep.n_violations == 0
        assert 0.8 * c.gamma2 <= rep.fitted_slope <= 1.2 * c.gamma1

    def test_degenerate_window_rejected(self, mapper):
        with pytest.raises(CurveTooCoarse):
            audit_curve_length_through_ball(1, mapper, windows=[(0.2, 0.2)])

    def test_window_outside_ball_rejected(self, mapper):
        with pytest.raises(OutOfDomain):
            audit_curve_length_through_ball(1, mapper,
                                            windows=[(0.3, 0.301)])

    def test_polyline_matches_quadrature_on_axis_window(self, mapper):
        win = _LeafWindow(0.01, 0.0105, mapper, 1e-4, 10_000)
        for _ in range(3):
            win.advance()
        a = mapper.constants.alpha
        g = mapper.constants.gamma
        ends = [(u**-a - 3 * a * g) ** (-1 / a) for u in (0.01, 0.0105)]
        xs, ws = leggauss(40)
        tq = 0.5 * (ends[1] - ends[0]) * xs + 0.5 * (ends[1] + ends[0])
        ap, bp = eval_ab_prime(mapper.coeffs, tq)
        quad = 0.5 * (ends[1] - ends[0]) * np.sum(ws * (1.0 + np.hypot(ap,
                                                                       bp)))
        assert win.length() == pytest.approx(quad, rel=1e-8)

    def test_iterates_stay_on_the_curve(self, mapper):
        win = _LeafWindow(0.01, 0.0105, mapper, 1e-4, 10_000)
        for _ in range(6):
            win.advance()
        z = to_chart(win.points, mapper.coeffs)
        assert np.max(np.abs(z[:, 1:])) < 1e-12

    def test_ball_free_window_grows_exponentially(self, mapper):
        win = _LeafWindow(0.3, 0.3 + 2.0**-10, mapper, 1e-3, 10_000)
        len0 = win.length()
        for _ in range(7):
            win.advance()
            assert win.min_chart_norm() >= mapper.profile.r1
        ratio = win.length() / len0
        assert ratio >= 0.85 * NU_HAT**7
        assert ratio <= 1.15 * XI_HAT**7


class TestReportPlumbing:
    def test_csv_and_summary_round_trip(self, mapper, tmp_path):
        rep = audit_Q_bounds(20, mapper.profile.r0, mapper, seed=9)
        csv = tmp_path / "audit.csv"
        js = tmp_path / "audit.json"
        rep.to_csv(csv)
        rep.write_summary(js)
        lines = csv.read_text().splitlines()
        assert lines[0] == "trial,quantity,T,bound,observed,ratio,violated"
        assert len(lines) == len(rep.records) + 1
        cols = lines[1].split(",")
        assert len(cols) == 7
        float(cols[2]), float(cols[3]), float(cols[4])
        loaded = json.loads(js.read_text())
        assert set(loaded) == {"n_trials", "n_violations", "worst_ratio",
                               "fitted_slope", "slope_ci_lo", "slope_ci_hi"}
        assert loaded["fitted_slope"] is None     # no fit for this audit
        assert loaded["n_violations"] == 0

    def test_fit_recovers_exact_power_law(self):
        x = np.geomspace(1.0, 100.0, 30)
        slope, lo, hi = _fit_loglog(x, 3.0 * x**2.5, seed=1)
        assert slope == pytest.approx(2.5, abs=1e-12)
        assert lo == pytest.approx(2.5, abs=1e-9)
        assert hi == pytest.approx(2.5, abs=1e-9)

    def test_report_counts_violations(self):
        recs = [dict(trial=0, quantity="x", T=1.0, bound=1.0, observed=2.0,
                     ratio=2.0, violated=True)]
        rep = AuditReport(n_trials=1, n_violations=1, worst_ratio=2.0,
                          records=recs)
        assert rep.summary()["n_violations"] == 1

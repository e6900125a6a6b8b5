import hashlib
import json

import numpy as np
import pytest

from slowsol.cli import (
    CONFIG_SCHEMA,
    main,
    parse_config_text,
    resolve_config,
)
from slowsol.errors import ValidationError


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


SMALL_STATS = ("stats.orbit_len = 20000\nstats.n_max = 60\n"
               "stats.burn_in = 500\n")


class TestConfigParsing:
    def test_comments_and_blank_lines(self):
        raw = parse_config_text(
            "# header\n\nsolenoid.m = 2   # trailing\n  chart.K=12\n")
        assert raw == {"solenoid.m": "2", "chart.K": "12"}

    def test_malformed_line_rejected(self):
        with pytest.raises(ValidationError, match="line 2"):
            parse_config_text("solenoid.m = 2\nnonsense\n")

    def test_defaults_cover_schema(self):
        cfg = resolve_config(None)
        assert set(cfg) == set(CONFIG_SCHEMA)
        assert cfg["solenoid.m"] == 2
        assert cfg["slowdown.alpha"] == 0.5
        assert cfg["base.t_lo"] == pytest.approx(13.0 / 32.0)

    def test_overlay_and_seed_override(self, tmp_path):
        path = write_cfg(tmp_path, "slowdown.alpha = 0.25\nstats.seed = 7\n")
        cfg = resolve_config(path, seed_override=99)
        assert cfg["slowdown.alpha"] == 0.25
        assert cfg["stats.seed"] == 99

    def test_unknown_key_rejected(self, tmp_path):
        path = write_cfg(tmp_path, "nope.key = 1\n")
        with pytest.raises(ValidationError, match="unknown config key"):
            resolve_config(path)

    def test_bad_literal_rejected(self, tmp_path):
        path = write_cfg(tmp_path, "chart.K = 12.5\n")
        with pytest.raises(ValidationError, match="chart.K"):
            resolve_config(path)

    def test_bounds_checked(self, tmp_path):
        path = write_cfg(tmp_path, "run.threads = 0\n")
        with pytest.raises(ValidationError, match="run.threads"):
            resolve_config(path)

    def test_missing_file_is_config_error(self):
        with pytest.raises(ValidationError, match="cannot read"):
            resolve_config("/nonexistent/path.cfg")


class TestConstantsCommand:
    def test_baseline_json(self, tmp_path, capsys):
        code = main(["constants", "--out", str(tmp_path)])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["gamma2"] == pytest.approx(3.0)
        on_disk = json.loads((tmp_path / "constants.json").read_text())
        assert on_disk == out

    def test_invalid_lambda_names_inequality(self, tmp_path, capsys):
        path = write_cfg(tmp_path, "solenoid.lambda = 0.6\n")
        code = main(["constants", "--config", path, "--out", str(tmp_path)])
        assert code == 1
        assert "lam_below_1_over_m" in capsys.readouterr().err

    def test_check_regime_flag(self, tmp_path, capsys):
        code = main(["constants", "--check-regime", "--out", str(tmp_path)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "regime_theorem2 false"

    def test_check_regime_sharp_config(self, tmp_path, capsys):
        path = write_cfg(tmp_path,
                         "slowdown.alpha = 0.25\nsolenoid.lambda = 1e-6\n"
                         "slowdown.r0 = 4e-8\nslowdown.r1 = 8e-8\n")
        code = main(["constants", "--config", path, "--check-regime",
                     "--out", str(tmp_path)])
        assert code == 0
        assert capsys.readouterr().out.strip() == "regime_theorem2 true"


class TestConjugacyCommand:
    def test_baseline_strict_passes(self, tmp_path):
        code = main(["conjugacy-check", "--out", str(tmp_path), "--strict"])
        assert code == 0
        report = json.loads((tmp_path / "conjugacy.json").read_text())
        assert report["functional_residual"] < 1e-10
        assert report["map_residual"]["max_residual"] < 1e-9

    def test_short_series_fails_strict(self, tmp_path):
        path = write_cfg(tmp_path, "chart.K = 6\n")
        code = main(["conjugacy-check", "--config", path,
                     "--out", str(tmp_path), "--strict"])
        assert code == 3
        # without strict the same run reports and exits cleanly
        code = main(["conjugacy-check", "--config", path,
                     "--out", str(tmp_path)])
        assert code == 0

    def test_malformed_config(self, tmp_path):
        path = write_cfg(tmp_path, "chart.K\n")
        code = main(["conjugacy-check", "--config", path,
                     "--out", str(tmp_path)])
        assert code == 1


class TestAuditCommand:
    def test_psi_audit_clean(self, tmp_path):
        code = main(["audit", "psi", "--out", str(tmp_path), "--strict"])
        assert code == 0
        summary = json.loads(
            (tmp_path / "audit_psi_summary.json").read_text())
        assert summary["n_violations"] == 0
        lines = (tmp_path / "audit_psi.csv").read_text().strip().split("\n")
        assert lines[0] == "trial,quantity,T,bound,observed,ratio,violated"
        assert len(lines) == summary["n_trials"] + 1

    def test_separation_emits_fitted_slope(self, tmp_path):
        code = main(["audit", "separation", "--out", str(tmp_path)])
        assert code == 0
        summary = json.loads(
            (tmp_path / "audit_separation_summary.json").read_text())
        assert summary["n_violations"] == 0
        assert summary["fitted_slope"] is not None
        assert 2.4 <= summary["fitted_slope"] <= 14.0

    def test_branch_audit_clean(self, tmp_path):
        code = main(["audit", "branch", "--out", str(tmp_path), "--strict"])
        assert code == 0
        summary = json.loads(
            (tmp_path / "audit_branch_summary.json").read_text())
        assert summary["worst_ratio"] < 1.0

    def test_unknown_audit_is_usage_error(self, tmp_path, capsys):
        code = main(["audit", "wat", "--out", str(tmp_path)])
        assert code == 1
        assert "invalid choice" in capsys.readouterr().err


class TestCorrelationsCommand:
    def test_pair_produces_csv_and_fit(self, tmp_path):
        path = write_cfg(tmp_path, SMALL_STATS)
        code = main(["correlations", "bump_8", "bump_16",
                     "--config", path, "--out", str(tmp_path)])
        assert code == 0
        lines = (tmp_path / "correlations.csv").read_text().strip()
        rows = lines.split("\n")
        assert rows[0] == "n,c_hat,stderr"
        assert len(rows) == 62                      # n_max + 1 lags + header
        fit = json.loads((tmp_path / "fit.json").read_text())
        assert fit["window"] == [10, 60]

    def test_constant_second_observable(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SMALL_STATS)
        code = main(["correlations", "bump_8", "one",
                     "--config", path, "--out", str(tmp_path)])
        assert code == 2                            # all-zero series: no fit
        err = capsys.readouterr().err
        assert "usable bins" in err
        rows = (tmp_path / "correlations.csv").read_text().strip().split("\n")
        assert all(float(r.split(",")[1]) == 0.0 for r in rows[1:])
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert list(manifest["outputs"]) == ["correlations.csv"]

    def test_unknown_observable(self, tmp_path, capsys):
        path = write_cfg(tmp_path, SMALL_STATS)
        code = main(["correlations", "bump_8", "nosuch",
                     "--config", path, "--out", str(tmp_path)])
        assert code == 1
        assert "unknown observable" in capsys.readouterr().err


class TestReturnTailCommand:
    def test_baseline_small_run(self, tmp_path):
        path = write_cfg(tmp_path, "stats.orbit_len = 20000\n"
                                   "stats.n_max = 300\nfit.min_count = 50\n")
        code = main(["return-tail", "--config", path,
                     "--out", str(tmp_path)])
        assert code == 0
        rows = (tmp_path / "survival.csv").read_text().strip().split("\n")
        assert rows[0] == "n,survivors,total,p_hat"
        p_hat = np.array([float(r.split(",")[3]) for r in rows[1:]])
        assert p_hat[0] == 1.0
        assert np.all(np.diff(p_hat) <= 0)
        fit = json.loads((tmp_path / "fit.json").read_text())
        assert fit["slope"] > 0

    def test_bad_base_is_config_error(self, tmp_path, capsys):
        path = write_cfg(tmp_path, "stats.orbit_len = 20000\n"
                                   "base.t_lo = 0.0\nbase.t_hi = 0.03125\n")
        code = main(["return-tail", "--config", path,
                     "--out", str(tmp_path)])
        assert code == 1
        assert "too close to the slow ball" in capsys.readouterr().err


class TestOrbitCommand:
    ORB = "stats.orbit_len = 3000\nstats.burn_in = 100\n"

    def test_dump_and_manifest_hash(self, tmp_path):
        path = write_cfg(tmp_path, self.ORB)
        out = tmp_path / "run"
        code = main(["orbit", "--dump", "--config", path, "--out", str(out)])
        assert code == 0
        data = (out / "orbit.csv").read_bytes()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"]["orbit.csv"] == hashlib.sha256(
            data).hexdigest()
        assert manifest["config"]["stats.orbit_len"] == 3000
        assert manifest["command"] == "orbit"

    def test_byte_identical_across_threads(self, tmp_path):
        base = write_cfg(tmp_path, self.ORB, name="a.cfg")
        four = write_cfg(tmp_path, self.ORB + "run.threads = 4\n",
                         name="b.cfg")
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["orbit", "--dump", "--config", base,
                     "--out", str(out1)]) == 0
        assert main(["orbit", "--dump", "--config", four,
                     "--out", str(out2)]) == 0
        assert (out1 / "orbit.csv").read_bytes() == \
            (out2 / "orbit.csv").read_bytes()

    def test_seed_changes_output(self, tmp_path):
        path = write_cfg(tmp_path, self.ORB)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["orbit", "--dump", "--config", path, "--out", str(out1),
                     "--seed", "1"]) == 0
        assert main(["orbit", "--dump", "--config", path, "--out", str(out2),
                     "--seed", "2"]) == 0
        assert (out1 / "orbit.csv").read_bytes() != \
            (out2 / "orbit.csv").read_bytes()
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m2["config"]["stats.seed"] == 2

    def test_no_dump_writes_manifest_only(self, tmp_path):
        path = write_cfg(tmp_path, self.ORB)
        out = tmp_path / "nodump"
        assert main(["orbit", "--config", path, "--out", str(out)]) == 0
        assert not (out / "orbit.csv").exists()
        assert json.loads((out / "manifest.json").read_text())["outputs"] \
            == {}


class TestUsage:
    def test_missing_command_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_negative_strict_tolerance(self, tmp_path, capsys):
        code = main(["conjugacy-check", "--out", str(tmp_path),
                     "--strict", "-0.5"])
        assert code == 1
        assert "must be positive" in capsys.readouterr().err

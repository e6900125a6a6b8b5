"""Batch front-end: config files, experiment commands, machine-readable output.

Commands
--------
constants            derived constants (JSON to stdout), optional regime check
conjugacy-check      chart functional-equation and linearization residuals
audit WHICH          one of psi, branch, qbounds, separation, curvelen
correlations H1 H2   lagged correlations of two named observables + tail fit
return-tail          first-return survival function on the base window + fit
orbit                long hybrid orbit, optionally dumped as CSV

Common flags: --config PATH, --out DIR, --strict [TOL], --seed U64.

Exit codes: 0 success; 1 configuration or usage error; 2 numerical failure;
3 strict-audit failure.  Every command writes a manifest.json into the
output directory echoing the fully resolved configuration and the SHA-256
digest of each file it produced; outputs are byte-identical for identical
(config, seed) regardless of run.threads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .chart import conjugacy_residual, functional_residual, series_coefficients
from .constants import (
    SlowdownParams,
    SolenoidParams,
    constants_dict,
    require_valid,
)
from .errors import (
    AmbiguousBranch,
    BadBase,
    BudgetExceeded,
    CurveTooCoarse,
    FailedToSpan,
    NoExit,
    NotInImage,
    OutOfDomain,
    StepFailure,
    TailTooLarge,
    ValidationError,
    WindowTooSparse,
    ZeroMeans,
)
from .ergostat import (
    build_base_set,
    estimate_correlations,
    estimate_return_tail,
    fit_power_law,
    generate_orbit,
    observable_by_name,
)
from .flowlab import (
    SLACK_TOL,
    AuditReport,
    audit_curve_length_through_ball,
    audit_pair_separation,
    audit_Q_bounds,
)
from .slowdown import IntegratorConfig, SlowdownMap, branch_consistency_audit

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_STRICT = 3

_CONFIG_ERRORS = (ValidationError, BadBase, OutOfDomain, TailTooLarge,
                  NotInImage, AmbiguousBranch)
_NUMERIC_ERRORS = (StepFailure, BudgetExceeded, NoExit, FailedToSpan,
                   CurveTooCoarse, WindowTooSparse, ZeroMeans)

# key -> (type, default); the single source of configuration truth
CONFIG_SCHEMA: dict[str, tuple[type, object]] = {
    "solenoid.m": (int, 2),
    "solenoid.lambda": (float, 0.3),
    "solenoid.eta": (float, 0.6),
    "slowdown.alpha": (float, 0.5),
    "slowdown.r0": (float, 0.02),
    "slowdown.r1": (float, 0.04),
    "slowdown.V_radius": (float, 0.14),
    "chart.K": (int, 40),
    "chart.radius": (float, 0.3),
    "integrator.rel_tol": (float, 1e-10),
    "integrator.abs_tol": (float, 1e-10),
    "integrator.max_steps": (int, 1_000_000),
    "stats.seed": (int, 12345),
    "stats.burn_in": (int, 2_000),
    "stats.orbit_len": (int, 200_000),
    "stats.n_max": (int, 100),
    "base.t_lo": (float, 13.0 / 32.0),
    "base.t_hi": (float, 14.0 / 32.0),
    "fit.n_min": (int, 10),
    "fit.n_max": (int, 1_000),
    "fit.min_count": (int, 100),
    "run.threads": (int, 1),
}

# fixed work sizes for the audit command (library calls expose larger runs)
AUDIT_TRIALS = {"branch": 2_000, "qbounds": 128, "separation": 150,
                "curvelen": 24}
STRICT_DEFAULTS = {"conjugacy-check": 1e-9, "psi": 1e-9, "branch": 1e-8,
                   "qbounds": SLACK_TOL, "separation": SLACK_TOL,
                   "curvelen": SLACK_TOL}


# -- configuration ----------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    """Raw `key = value` pairs from dotted-key config text ('#' comments)."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip() or not value.strip():
            raise ValidationError(f"config line {ln}: expected 'key = value',"
                                  f" got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_config(path: str | None, seed_override: int | None = None) -> dict:
    """Defaults overlaid with the config file, fully typed and validated."""
    cfg = {k: d for k, (_, d) in CONFIG_SCHEMA.items()}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}")
        for key, raw in parse_config_text(text).items():
            if key not in CONFIG_SCHEMA:
                raise ValidationError(f"unknown config key {key!r}")
            typ = CONFIG_SCHEMA[key][0]
            try:
                cfg[key] = typ(raw)
            except ValueError:
                raise ValidationError(
                    f"config key {key} expects {typ.__name__}, got {raw!r}")
    if seed_override is not None:
        cfg["stats.seed"] = seed_override
    for key, lo in (("stats.seed", 0), ("stats.burn_in", 0),
                    ("stats.orbit_len", 1), ("stats.n_max", 1),
                    ("fit.min_count", 1), ("run.threads", 1),
                    ("chart.K", 2), ("integrator.max_steps", 1)):
        if cfg[key] < lo:
            raise ValidationError(f"config key {key} must be >= {lo}, "
                                  f"got {cfg[key]}")
    return cfg


def config_objects(cfg: dict) -> tuple[SolenoidParams, SlowdownParams,
                                       IntegratorConfig]:
    sol = SolenoidParams(m=cfg["solenoid.m"], lam=cfg["solenoid.lambda"],
                         eta=cfg["solenoid.eta"])
    sd = SlowdownParams(alpha=cfg["slowdown.alpha"], r0=cfg["slowdown.r0"],
                        r1=cfg["slowdown.r1"],
                        V_radius=cfg["slowdown.V_radius"],
                        chart_radius=cfg["chart.radius"],
                        series_K=cfg["chart.K"])
    icfg = IntegratorConfig(rel_tol=cfg["integrator.rel_tol"],
                            abs_tol=cfg["integrator.abs_tol"],
                            max_steps=cfg["integrator.max_steps"])
    require_valid(sol, sd, integrator=icfg)
    return sol, sd, icfg


# -- output helpers ---------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_manifest(outdir: Path, command: str, cfg: dict,
                   produced: list[Path]) -> Path:
    manifest = {
        "command": command,
        "config": cfg,
        "outputs": {p.name: _sha256(p) for p in produced},
    }
    path = outdir / "manifest.json"
    _write_json(manifest, path)
    return path


def _fit_window(cfg: dict) -> tuple[int, int]:
    return cfg["fit.n_min"], min(cfg["fit.n_max"], cfg["stats.n_max"])


# -- commands ---------------------------------------------------------------

def cmd_constants(cfg: dict, args, outdir: Path) -> int:
    sol, sd, _ = config_objects(cfg)
    d = constants_dict(sol, sd)
    if args.check_regime:
        print("regime_theorem2 " + ("true" if d["regime_theorem2"] else
                                    "false"))
    else:
        print(json.dumps(d, indent=2, sort_keys=True))
    path = outdir / "constants.json"
    _write_json(d, path)
    write_manifest(outdir, "constants", cfg, [path])
    return EXIT_OK


def cmd_conjugacy(cfg: dict, args, outdir: Path, tol: float) -> int:
    sol, sd, _ = config_objects(cfg)
    coeffs = series_coefficients(sol, K=sd.series_K, enforce_tail=False)
    grid = np.linspace(-0.5, 0.5, 10_001)
    res_eq = functional_residual(coeffs, grid)
    audit = conjugacy_residual(sol, coeffs, n_samples=10_000,
                               radius=min(0.1, coeffs.domain_half_width
                                          / sol.m), seed=cfg["stats.seed"])
    report = {
        "functional_residual": res_eq,
        "map_residual": audit.as_dict(),
        "K": coeffs.K,
        "tail_bound": coeffs.tail_bound,
    }
    path = outdir / "conjugacy.json"
    _write_json(report, path)
    write_manifest(outdir, "conjugacy-check", cfg, [path])
    worst = max(res_eq, audit.max_residual)
    print(f"conjugacy-check: functional residual {res_eq:.3e}, map residual "
          f"{audit.max_residual:.3e}")
    if args.strict is not None and worst > tol:
        print(f"strict: residual {worst:.3e} exceeds {tol:.3e}",
              file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def _psi_report(mapper: SlowdownMap, tol: float) -> AuditReport:
    """Slow-down profile audit: knot continuity, range pins, monotonicity."""
    prof = mapper.profile
    eps = 1e-12                       # probe offset; keeps curvature terms
    slope_scale = max(1.0, abs(prof.dpsi(prof.r0)))    # below the bound
    gaps = {
        "knot_r0_value": abs(prof.psi(prof.r0 * (1 - eps))
                             - prof.psi(prof.r0 * (1 + eps))),
        "knot_r0_slope": abs(prof.dpsi(prof.r0 * (1 - eps))
                             - prof.dpsi(prof.r0 * (1 + eps))) / slope_scale,
        "knot_r1_value": abs(prof.psi(prof.r1 * (1 - eps))
                             - prof.psi(prof.r1 * (1 + eps))),
        "knot_r1_slope": abs(prof.dpsi(prof.r1 * (1 + eps))),
        "psi_at_zero": abs(prof.psi(0.0)),
        "psi_beyond_r1": abs(prof.psi(1.5 * prof.r1) - 1.0),
    }
    grid = np.linspace(prof.r0, prof.r1, 2_001)
    vals = prof.psi(grid)
    gaps["blend_monotone"] = max(0.0, float(-np.min(np.diff(vals))))
    records = []
    n_viol = 0
    worst = 0.0
    for i, (name, gap) in enumerate(sorted(gaps.items())):
        ratio = gap / tol
        violated = ratio > 1.0
        n_viol += violated
        worst = max(worst, ratio)
        records.append(dict(trial=i, quantity=name, T=0.0, bound=tol,
                            observed=float(gap), ratio=float(ratio),
                            violated=bool(violated)))
    return AuditReport(n_trials=len(records), n_violations=n_viol,
                       worst_ratio=worst, records=records)


def _branch_report(mapper: SlowdownMap, n_samples: int, seed: int,
                   tol: float) -> AuditReport:
    res = branch_consistency_audit(mapper, n_samples=n_samples, seed=seed)
    d = res["max_discrepancy"]
    ratio = d / tol
    rec = dict(trial=0, quantity="branch_discrepancy", T=0.0, bound=tol,
               observed=float(d), ratio=float(ratio),
               violated=bool(ratio > 1.0))
    return AuditReport(n_trials=n_samples, n_violations=int(rec["violated"]),
                       worst_ratio=float(ratio), records=[rec])


def cmd_audit(cfg: dict, args, outdir: Path, tol: float) -> int:
    mapper = SlowdownMap(*config_objects(cfg))
    which = args.which
    seed = cfg["stats.seed"]
    if which == "psi":
        rep = _psi_report(mapper, tol)
    elif which == "branch":
        rep = _branch_report(mapper, AUDIT_TRIALS["branch"], seed, tol)
    elif which == "qbounds":
        rep = audit_Q_bounds(AUDIT_TRIALS["qbounds"], mapper.sd.r0, mapper,
                             slack_tol=tol, seed=seed,
                             threads=cfg["run.threads"])
    elif which == "separation":
        rep = audit_pair_separation(AUDIT_TRIALS["separation"], mapper,
                                    slack_tol=tol, seed=seed)
    else:
        rep = audit_curve_length_through_ball(AUDIT_TRIALS["curvelen"],
                                              mapper, slack_tol=tol,
                                              seed=seed)
    csv_path = outdir / f"audit_{which}.csv"
    json_path = outdir / f"audit_{which}_summary.json"
    rep.to_csv(csv_path)
    rep.write_summary(json_path)
    write_manifest(outdir, f"audit {which}", cfg, [csv_path, json_path])
    slope = ("" if rep.fitted_slope is None
             else f", fitted slope {rep.fitted_slope:.4f}")
    print(f"audit {which}: {rep.n_violations} violation(s) in "
          f"{rep.n_trials} trials{slope}")
    if args.strict is not None and rep.n_violations > 0:
        print(f"strict: {rep.n_violations} violation(s)", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_correlations(cfg: dict, args, outdir: Path) -> int:
    mapper = SlowdownMap(*config_objects(cfg))
    h1 = observable_by_name(mapper, args.h1)
    h2 = observable_by_name(mapper, args.h2)
    orbit = generate_orbit(cfg["stats.seed"], cfg["stats.burn_in"],
                           cfg["stats.orbit_len"], mapper)
    corr = estimate_correlations(orbit, h1, h2, cfg["stats.n_max"])
    csv_path = outdir / "correlations.csv"
    corr.to_csv(csv_path)
    print(f"correlations {args.h1} {args.h2}: {len(corr.n)} lags, "
          f"c_hat(0) = {corr.c_hat[0]:.6g}")
    try:
        fit = fit_power_law(corr, _fit_window(cfg), seed=cfg["stats.seed"])
    except WindowTooSparse as exc:
        write_manifest(outdir, "correlations", cfg, [csv_path])
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    fit_path = outdir / "fit.json"
    fit.write_json(fit_path)
    write_manifest(outdir, "correlations", cfg, [csv_path, fit_path])
    print(f"fit: slope {fit.slope:.4f} on window {list(_fit_window(cfg))}")
    return EXIT_OK


def cmd_return_tail(cfg: dict, args, outdir: Path) -> int:
    mapper = SlowdownMap(*config_objects(cfg))
    base = build_base_set(mapper, t_lo=cfg["base.t_lo"],
                          t_hi=cfg["base.t_hi"], seed=cfg["stats.seed"])
    surv = estimate_return_tail(base, cfg["stats.orbit_len"],
                                cfg["stats.n_max"], mapper,
                                seed=cfg["stats.seed"])
    csv_path = outdir / "survival.csv"
    surv.to_csv(csv_path)
    print(f"return-tail: {int(surv.total)} starts, censored fraction "
          f"{surv.censored_fraction:.2e}")
    try:
        fit = fit_power_law(surv, _fit_window(cfg),
                            min_count=cfg["fit.min_count"],
                            seed=cfg["stats.seed"])
    except WindowTooSparse as exc:
        write_manifest(outdir, "return-tail", cfg, [csv_path])
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    fit_path = outdir / "fit.json"
    fit.write_json(fit_path)
    write_manifest(outdir, "return-tail", cfg, [csv_path, fit_path])
    print(f"fit: slope {fit.slope:.4f} on window {list(_fit_window(cfg))}")
    return EXIT_OK


def cmd_orbit(cfg: dict, args, outdir: Path) -> int:
    mapper = SlowdownMap(*config_objects(cfg))
    orbit = generate_orbit(cfg["stats.seed"], cfg["stats.burn_in"],
                           cfg["stats.orbit_len"], mapper)
    produced = []
    if args.dump:
        path = outdir / "orbit.csv"
        with open(path, "w", encoding="utf-8") as f:
            f.write("t,x,y\n")
            np.savetxt(f, orbit, fmt="%.17g", delimiter=",")
        produced.append(path)
    write_manifest(outdir, "orbit", cfg, produced)
    print(f"orbit: {len(orbit)} steps, mean angle "
          f"{float(np.mean(orbit[:, 0])):.4f}"
          + (", dumped orbit.csv" if args.dump else ""))
    return EXIT_OK


# -- argument parsing and dispatch ------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to the config/usage exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> _Parser:
    parser = _Parser(prog="slowsol",
                     description="Numerical laboratory for a solenoid map "
                                 "with a polynomial slow-down ball.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="dotted-key config file (key = value lines)")
    common.add_argument("--out", metavar="DIR", default=".",
                        help="output directory (default: current)")
    common.add_argument("--strict", metavar="TOL", nargs="?", type=float,
                        const=-1.0, default=None,
                        help="strict mode: violations exit 3; optional "
                             "tolerance overrides the per-command default")
    common.add_argument("--seed", metavar="U64", type=int, default=None,
                        help="override stats.seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", parents=[common],
                       help="derived constants as JSON")
    p.add_argument("--check-regime", action="store_true",
                   help="print only the sharp-regime boolean")
    sub.add_parser("conjugacy-check", parents=[common],
                   help="chart residual audit")
    p = sub.add_parser("audit", parents=[common], help="run a named audit")
    p.add_argument("which", choices=["psi", "branch", "qbounds",
                                     "separation", "curvelen"])
    p = sub.add_parser("correlations", parents=[common],
                       help="lagged correlations of two observables")
    p.add_argument("h1")
    p.add_argument("h2")
    sub.add_parser("return-tail", parents=[common],
                   help="first-return survival function and tail fit")
    p = sub.add_parser("orbit", parents=[common], help="generate an orbit")
    p.add_argument("--dump", action="store_true",
                   help="write the orbit as orbit.csv")
    return parser


def _strict_tol(args) -> float:
    key = args.which if getattr(args, "which", None) else args.command
    default = STRICT_DEFAULTS.get(key, 1e-9)
    if args.strict is None or args.strict == -1.0:
        return default
    if args.strict <= 0.0:
        raise ValidationError(f"--strict tolerance must be positive, "
                              f"got {args.strict}")
    return args.strict


def run_command(args) -> int:
    cfg = resolve_config(args.config, seed_override=args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.command == "constants":
        return cmd_constants(cfg, args, outdir)
    if args.command == "conjugacy-check":
        return cmd_conjugacy(cfg, args, outdir, _strict_tol(args))
    if args.command == "audit":
        return cmd_audit(cfg, args, outdir, _strict_tol(args))
    if args.command == "correlations":
        return cmd_correlations(cfg, args, outdir)
    if args.command == "return-tail":
        return cmd_return_tail(cfg, args, outdir)
    return cmd_orbit(cfg, args, outdir)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg_threads = resolve_config(args.config,
                                     seed_override=args.seed)["run.threads"]
        with ThreadPoolExecutor(max_workers=cfg_threads) as pool:
            return pool.submit(run_command, args).result()
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

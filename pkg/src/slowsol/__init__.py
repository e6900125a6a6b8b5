"""Numerical laboratory for a slowed-down Smale-Williams solenoid.

Subpackages build on each other roughly bottom-up:

constants  parameter containers and derived rate constants
solenoid   the solid-torus embedding, its differential, inverse branches,
           unstable directions and unstable curves
chart      linearizing chart around the fixed point (power series)
slowdown   slow-down profile, vector field, time-one map, the hybrid map g
flowlab    continuous-time passages through the slow ball and their audits
ergostat   orbit statistics: correlations, return-time tails, power-law fits
cli        command-line front end
"""

from .constants import (
    DerivedConstants,
    RegimeReport,
    SlowdownParams,
    SolenoidParams,
    ValidationReport,
    check_theorem2_regime,
    constants_dict,
    derive_constants,
    require_valid,
    validate_params,
)

__all__ = [
    "DerivedConstants",
    "RegimeReport",
    "SlowdownParams",
    "SolenoidParams",
    "ValidationReport",
    "check_theorem2_regime",
    "constants_dict",
    "derive_constants",
    "require_valid",
    "validate_params",
]

__version__ = "0.1.0"

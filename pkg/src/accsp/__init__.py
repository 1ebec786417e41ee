"""Sampling-based solvers for chance constraints over difference-of-max functionals."""

from .algorithms import (
    EmpiricalRows,
    SaaResult,
    SpsaResult,
    StationarityVerdict,
    check_stationarity,
    composite_structure_certified,
    convexlike_localmin_test,
    format_verdict,
    residual_dd,
    saa_penalty_solve,
    spsa_run,
    write_trace,
)
from .approx import ThetaPair, c_row_rlx, c_row_rst, phi_lb, phi_ub
from .model import (
    AccProblem,
    DcMaxFunction,
    Polytope,
    RandomSource,
    SmoothConvexPiece,
    affine_piece,
    zero_piece,
)
from .problems import (
    bundled,
    dumps_problem,
    load_problem,
    loads_problem,
    registry_names,
    save_problem,
)
from .sampling import (
    Rule,
    SampleStore,
    Schedule,
    reference_schedule,
    validate_schedule,
)
from .subsolver import build_program, solve_surrogate_global
from .surrogate import build_surrogate_objective, check_surrogate_conditions

__version__ = "0.1.0"

__all__ = [
    "AccProblem",
    "DcMaxFunction",
    "EmpiricalRows",
    "Polytope",
    "RandomSource",
    "Rule",
    "SaaResult",
    "SampleStore",
    "Schedule",
    "SmoothConvexPiece",
    "SpsaResult",
    "StationarityVerdict",
    "ThetaPair",
    "affine_piece",
    "build_program",
    "build_surrogate_objective",
    "bundled",
    "c_row_rlx",
    "c_row_rst",
    "check_stationarity",
    "check_surrogate_conditions",
    "composite_structure_certified",
    "convexlike_localmin_test",
    "dumps_problem",
    "format_verdict",
    "load_problem",
    "loads_problem",
    "phi_lb",
    "phi_ub",
    "reference_schedule",
    "registry_names",
    "residual_dd",
    "saa_penalty_solve",
    "save_problem",
    "solve_surrogate_global",
    "spsa_run",
    "validate_schedule",
    "write_trace",
    "zero_piece",
]

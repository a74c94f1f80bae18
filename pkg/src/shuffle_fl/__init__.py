"""Deterministic simulator and verification harness for local and minibatch
Random Reshuffling, with and without synchronized shuffling."""

from .algorithms import RunConfig, RunResult, run, simulate
from .errors import ConfigError, DivergedError, InvalidArgument
from .harness import ProblemSpec, SweepResult, SweepSpec, fit_loglog_slope, persist, run_sweep
from .problem import (Constants, Problem, make_composite_3d, make_hetero_linear_quadratic,
                      make_problem, make_skewed_quadratic_1d)
from .rates import RateParams

__version__ = "0.1.0"

__all__ = [
    "Constants",
    "ConfigError",
    "DivergedError",
    "InvalidArgument",
    "Problem",
    "ProblemSpec",
    "RateParams",
    "RunConfig",
    "RunResult",
    "SweepResult",
    "SweepSpec",
    "fit_loglog_slope",
    "make_composite_3d",
    "make_hetero_linear_quadratic",
    "make_problem",
    "make_skewed_quadratic_1d",
    "persist",
    "run",
    "run_sweep",
    "simulate",
]

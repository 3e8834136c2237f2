"""Numerical laboratory for a weighted degenerate parabolic system with time-weighted sources."""
from .exponents import (ExponentReport, ParameterError, ProblemParams, Verdict, WeightCase,
                        derive_exponents, picard_constants)
from .grid import Field, NormKind, WeightSpec, build_grid, norm
from .mild import SolverControls, TerminationKind, picard_local, solve
from .regimes import RegimeKind, classify, sweep
from .semigroup import apply_semigroup, assemble_operator, kernel_probe

__version__ = "0.1.0"

__all__ = [
    "ExponentReport", "ParameterError", "ProblemParams", "Verdict", "WeightCase",
    "derive_exponents", "picard_constants", "Field", "NormKind", "WeightSpec", "build_grid",
    "norm", "SolverControls", "TerminationKind", "picard_local", "solve", "RegimeKind",
    "classify", "sweep", "apply_semigroup", "assemble_operator", "kernel_probe",
]

"""Solver-agnostic conic programs with PSD constraints."""

from .backends import (
    FAILED,
    INACCURATE,
    INFEASIBLE,
    OPTIMAL,
    STATUSES,
    UNBOUNDED,
    ClarabelBackend,
    ConicSolution,
    CvxpyBackend,
    SolverSettings,
    residuals,
    solve,
)
from .program import AffineExpr, ConicProgram, Term, Variable, bmat

__all__ = [
    "AffineExpr", "ConicProgram", "Term", "Variable", "bmat",
    "ClarabelBackend", "CvxpyBackend", "ConicSolution", "SolverSettings", "solve", "residuals",
    "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "INACCURATE", "FAILED", "STATUSES",
]

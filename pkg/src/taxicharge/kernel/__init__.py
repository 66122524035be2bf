from .lp import (
    EQ,
    GE,
    INFEASIBLE,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    LpSolution,
    NumericalStall,
    WarmBasis,
    lp_to_text,
    solve_lp,
)
from .binary import TIME_LIMIT, BinaryResult, solve_binary
from .backend import EmbeddedKernel, HighsKernel, Kernel, default_kernel

__all__ = [
    "EQ",
    "GE",
    "LE",
    "INFEASIBLE",
    "ITERATION_LIMIT",
    "OPTIMAL",
    "UNBOUNDED",
    "TIME_LIMIT",
    "LinearProgram",
    "LpSolution",
    "NumericalStall",
    "WarmBasis",
    "BinaryResult",
    "lp_to_text",
    "solve_lp",
    "solve_binary",
    "Kernel",
    "EmbeddedKernel",
    "HighsKernel",
    "default_kernel",
]

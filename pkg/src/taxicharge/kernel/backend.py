"""Pluggable solver backends.

Callers only see ``Kernel.solve_lp`` and ``Kernel.solve_binary``; the
embedded simplex/branch-and-bound is the default and HiGHS (through scipy)
is available as a drop-in replacement.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .binary import TIME_LIMIT, BinaryResult, solve_binary
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
    WarmBasis,
    solve_lp,
)


class Kernel(Protocol):
    name: str

    def solve_lp(self, lp: LinearProgram, warm_start: WarmBasis | None = None) -> LpSolution: ...

    def solve_binary(
        self, lp: LinearProgram, time_limit: float | None = None, incumbent=None, node_limit: int | None = None
    ) -> BinaryResult: ...


class EmbeddedKernel:
    name = "embedded"

    def solve_lp(self, lp: LinearProgram, warm_start: WarmBasis | None = None) -> LpSolution:
        return solve_lp(lp, warm_start=warm_start)

    def solve_binary(
        self, lp: LinearProgram, time_limit: float | None = None, incumbent=None, node_limit: int | None = None
    ) -> BinaryResult:
        return solve_binary(lp, time_limit=time_limit, incumbent=incumbent, node_limit=node_limit)


def _matrices(lp: LinearProgram):
    n = lp.n_vars
    ub_rows, ub_rhs, ub_sign, eq_rows, eq_rhs = [], [], [], [], []
    for i, (row, sense, rhs) in enumerate(zip(lp.rows, lp.senses, lp.rhs)):
        dense = np.zeros(n)
        for j, a in row.items():
            dense[j] = a
        if sense == EQ:
            eq_rows.append((i, dense))
            eq_rhs.append(rhs)
        else:
            sign = 1.0 if sense == LE else -1.0
            ub_rows.append((i, sign * dense))
            ub_rhs.append(sign * rhs)
            ub_sign.append(sign)
    return ub_rows, ub_rhs, ub_sign, eq_rows, eq_rhs


class HighsKernel:
    """HiGHS via scipy; used for cross-checks and as an external replacement."""

    name = "highs"

    def solve_lp(self, lp: LinearProgram, warm_start: WarmBasis | None = None) -> LpSolution:
        from scipy.optimize import linprog

        ub_rows, ub_rhs, ub_sign, eq_rows, eq_rhs = _matrices(lp)
        n = lp.n_vars
        res = linprog(
            np.array(lp.costs),
            A_ub=np.array([r for _, r in ub_rows]) if ub_rows else None,
            b_ub=np.array(ub_rhs) if ub_rows else None,
            A_eq=np.array([r for _, r in eq_rows]) if eq_rows else None,
            b_eq=np.array(eq_rhs) if eq_rows else None,
            bounds=[(None if math.isinf(lo) else lo, None if math.isinf(up) else up) for lo, up in zip(lp.lower, lp.upper)],
            method="highs",
        )
        nan = np.full(n, np.nan)
        if res.status == 2:
            return LpSolution(INFEASIBLE, nan, np.full(lp.n_rows, np.nan), nan, math.nan)
        if res.status == 3:
            return LpSolution(UNBOUNDED, nan, np.full(lp.n_rows, np.nan), nan, math.nan)
        if res.status != 0:
            return LpSolution(ITERATION_LIMIT, nan, np.full(lp.n_rows, np.nan), nan, math.nan)
        duals = np.zeros(lp.n_rows)
        for k, (i, _) in enumerate(ub_rows):
            duals[i] = ub_sign[k] * res.ineqlin.marginals[k]
        for k, (i, _) in enumerate(eq_rows):
            duals[i] = res.eqlin.marginals[k]
        rc = np.array(lp.costs, dtype=float)
        for i, row in enumerate(lp.rows):
            for j, a in row.items():
                rc[j] -= a * duals[i]
        return LpSolution(OPTIMAL, np.asarray(res.x), duals, rc, float(res.fun), float(res.fun))

    def solve_binary(
        self, lp: LinearProgram, time_limit: float | None = None, incumbent=None, node_limit: int | None = None
    ) -> BinaryResult:
        from scipy.optimize import Bounds, LinearConstraint, milp

        n = lp.n_vars
        A = np.zeros((lp.n_rows, n))
        lo = np.empty(lp.n_rows)
        up = np.empty(lp.n_rows)
        for i, (row, sense, rhs) in enumerate(zip(lp.rows, lp.senses, lp.rhs)):
            for j, a in row.items():
                A[i, j] = a
            lo[i] = rhs if sense in (GE, EQ) else -np.inf
            up[i] = rhs if sense in (LE, EQ) else np.inf
        cons = [LinearConstraint(A, lo, up)] if lp.n_rows else []
        options = {"time_limit": time_limit} if time_limit else {}
        if node_limit:
            options["node_limit"] = node_limit
        res = milp(
            np.array(lp.costs),
            constraints=cons,
            integrality=np.ones(n),
            bounds=Bounds(np.array(lp.lower), np.array(lp.upper)),
            options=options,
        )
        if res.status == 0:
            x = np.round(res.x)
            return BinaryResult(OPTIMAL, x, float(res.fun), float(res.fun))
        if res.status == 2:
            return BinaryResult(INFEASIBLE, None, math.inf, math.inf)
        x = None if res.x is None else np.round(res.x)
        obj = math.inf if x is None else float(np.dot(lp.costs, x))
        bound = getattr(res, "mip_dual_bound", -math.inf)
        return BinaryResult(TIME_LIMIT, x, obj, bound if bound is not None else -math.inf)


def default_kernel() -> Kernel:
    return EmbeddedKernel()

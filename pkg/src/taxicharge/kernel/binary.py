"""Depth-first branch-and-bound for pure binary programs."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .lp import EQ, GE, INFEASIBLE, LE, OPTIMAL, LinearProgram, solve_lp

TIME_LIMIT = "time-limit"
INT_TOL = 1e-6


@dataclass
class BinaryResult:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    nodes: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _row_feasible(lp: LinearProgram, x: np.ndarray) -> bool:
    for row, sense, rhs in zip(lp.rows, lp.senses, lp.rhs):
        act = sum(a * x[j] for j, a in row.items())
        if sense == LE and act > rhs + 1e-9:
            return False
        if sense == GE and act < rhs - 1e-9:
            return False
        if sense == EQ and abs(act - rhs) > 1e-9:
            return False
    return True


def solve_binary(
    lp: LinearProgram,
    time_limit: float | None = None,
    incumbent: np.ndarray | None = None,
    node_limit: int | None = None,
    lp_solver=solve_lp,
) -> BinaryResult:
    """Minimise ``lp`` with every variable restricted to {0, 1}.

    Returns the proven optimum, or the best incumbent and a valid lower bound
    when the time or node limit stops the search.
    """
    n = lp.n_vars
    for j in range(n):
        if lp.lower[j] < 0 or lp.upper[j] > 1 or lp.lower[j] > lp.upper[j]:
            raise ValueError(f"variable {lp.names[j]} is not binary")
    start = time.perf_counter()
    costs = np.array(lp.costs, dtype=float)
    integral_costs = bool(np.all(np.abs(costs - np.round(costs)) < 1e-12))

    best_x: np.ndarray | None = None
    best = math.inf
    if incumbent is not None:
        inc = np.asarray(incumbent, dtype=float)
        if _row_feasible(lp, inc):
            best_x, best = inc.copy(), float(costs @ inc)

    def prunable(bound: float) -> bool:
        if not math.isfinite(bound) or not math.isfinite(best):
            return bound >= best
        if integral_costs:
            return math.ceil(bound - 1e-6) >= best - 1e-9
        return bound >= best - 1e-9

    work = lp.copy()
    stack: list[tuple[dict[int, int], float, object]] = [({}, -math.inf, None)]
    nodes = 0
    while stack:
        if time_limit is not None and time.perf_counter() - start > time_limit:
            break
        if node_limit is not None and nodes >= node_limit:
            break
        fixed, parent_bound, warm = stack.pop()
        if prunable(parent_bound):
            continue
        nodes += 1
        for j in range(n):
            lo, up = lp.lower[j], lp.upper[j]
            if j in fixed:
                lo = up = float(fixed[j])
            work.lower[j], work.upper[j] = lo, up
        sol = lp_solver(work, warm_start=warm)
        if sol.status == INFEASIBLE:
            continue
        if sol.status != OPTIMAL:
            raise RuntimeError(f"LP relaxation failed: {sol.status}")
        bound = sol.objective
        if prunable(bound):
            continue
        x = sol.x
        frac = np.abs(x - np.round(x))
        if frac.max() <= INT_TOL:
            xr = np.round(x)
            val = float(costs @ xr)
            if val < best - 1e-9:
                best, best_x = val, xr
            continue
        for cand in (np.round(x), (x > INT_TOL).astype(float)):
            val = float(costs @ cand)
            if val < best - 1e-9 and _row_feasible(lp, cand):
                best, best_x = val, cand
        if prunable(bound):
            continue
        j = int(np.argmax(frac))
        first = 1 if x[j] >= 0.5 else 0
        stack.append(({**fixed, j: 1 - first}, bound, sol.basis))
        stack.append(({**fixed, j: first}, bound, sol.basis))

    if not stack:
        if best_x is None:
            return BinaryResult(INFEASIBLE, None, math.inf, math.inf, nodes)
        return BinaryResult(OPTIMAL, best_x, best, best, nodes)
    open_bound = min(b for _, b, _ in stack)
    bound = min(best, open_bound)
    if integral_costs and math.isfinite(bound):
        bound = min(best, math.ceil(bound - 1e-6))
    return BinaryResult(TIME_LIMIT, best_x, best, bound, nodes)

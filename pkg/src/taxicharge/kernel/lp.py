"""Dense revised simplex with dual extraction and basis warm starts.

Problems are converted to the standard form ``min c'x, Ax = b, x >= 0``:
finite lower bounds are shifted out, finite upper bounds become rows, free
variables are split. Phase I minimises the artificials; artificials never
re-enter in phase II.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

FEAS_TOL = 1e-7
COST_TOL = 1e-6
PIVOT_TOL = 1e-9

LE, GE, EQ = "<=", ">=", "="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


class NumericalStall(RuntimeError):
    """Raised when the simplex cannot make progress even under Bland's rule."""


@dataclass
class LinearProgram:
    costs: list[float] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    rows: list[dict[int, float]] = field(default_factory=list)
    senses: list[str] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.costs)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_variable(
        self,
        cost: float = 0.0,
        lower: float = 0.0,
        upper: float = math.inf,
        name: str | None = None,
        column: Mapping[int, float] | None = None,
    ) -> int:
        j = len(self.costs)
        self.costs.append(float(cost))
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.names.append(name or f"x{j}")
        for i, a in (column or {}).items():
            if a:
                self.rows[i][j] = float(a)
        return j

    def add_constraint(self, coefs: Mapping[int, float], sense: str, rhs: float, name: str | None = None) -> int:
        if sense not in (LE, GE, EQ):
            raise ValueError(f"bad sense {sense!r}")
        i = len(self.rows)
        self.rows.append({j: float(a) for j, a in coefs.items() if a})
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"c{i}")
        return i

    def copy(self) -> "LinearProgram":
        return LinearProgram(
            list(self.costs),
            list(self.lower),
            list(self.upper),
            list(self.names),
            [dict(r) for r in self.rows],
            list(self.senses),
            list(self.rhs),
            list(self.row_names),
        )

    def row_activity(self, x: Sequence[float]) -> list[float]:
        return [sum(a * x[j] for j, a in row.items()) for row in self.rows]

    def objective(self, x: Sequence[float]) -> float:
        return float(sum(c * v for c, v in zip(self.costs, x)))


@dataclass(frozen=True)
class WarmBasis:
    columns: tuple[Hashable, ...]
    rows: tuple[Hashable, ...]


@dataclass
class LpSolution:
    status: str
    x: np.ndarray
    duals: np.ndarray
    reduced_costs: np.ndarray
    objective: float
    dual_objective: float = math.nan
    iterations: int = 0
    basis: "WarmBasis | None" = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class _StandardForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    keys: list[Hashable]
    row_keys: list[Hashable]
    flip: np.ndarray
    n_orig_rows: int
    offset: float
    var_map: list[tuple[str, int, int, float]]  # (kind, col, col_minus, anchor)
    artificial: np.ndarray


def _standard_form(lp: LinearProgram) -> _StandardForm:
    n, m = lp.n_vars, lp.n_rows
    var_names = lp.names if len(set(lp.names)) == n else list(range(n))
    row_names = lp.row_names if len(set(lp.row_names)) == m else list(range(m))
    cols: list[tuple[Hashable, dict[int, float], float]] = []
    var_map: list[tuple[str, int, int, float]] = []
    b = np.array(lp.rhs, dtype=float)
    row_senses = list(lp.senses)
    row_keys: list[Hashable] = [("r", row_names[i]) for i in range(m)]
    ub_rows: list[tuple[int, float]] = []

    by_col: list[dict[int, float]] = [dict() for _ in range(n)]
    for i, row in enumerate(lp.rows):
        for j, a in row.items():
            by_col[j][i] = a

    offset = 0.0
    for j in range(n):
        lo, up, cj = lp.lower[j], lp.upper[j], lp.costs[j]
        col = by_col[j]
        if math.isfinite(lo):
            for i, a in col.items():
                b[i] -= a * lo
            offset += cj * lo
            k = len(cols)
            cols.append((("x", var_names[j]), col, cj))
            var_map.append(("shift", k, -1, lo))
            if math.isfinite(up):
                ub_rows.append((k, up - lo))
        elif math.isfinite(up):
            for i, a in col.items():
                b[i] -= a * up
            offset += cj * up
            k = len(cols)
            cols.append((("x", var_names[j]), {i: -a for i, a in col.items()}, -cj))
            var_map.append(("neg", k, -1, up))
        else:
            k = len(cols)
            cols.append((("x", var_names[j]), col, cj))
            cols.append((("xm", var_names[j]), {i: -a for i, a in col.items()}, -cj))
            var_map.append(("free", k, k + 1, 0.0))

    n_rows = m + len(ub_rows)
    b_all = np.concatenate([b, np.array([u for _, u in ub_rows], dtype=float)])
    for k, _ in ub_rows:
        row_keys.append(("u", cols[k][0][1]))
        row_senses.append(LE)
    ub_index = {m + r: k for r, (k, _) in enumerate(ub_rows)}

    n_struct = len(cols)
    n_slack = sum(1 for s in row_senses if s != EQ)
    total = n_struct + n_slack + n_rows
    A = np.zeros((n_rows, total))
    c = np.zeros(total)
    keys: list[Hashable] = []
    for k, (key, col, cost) in enumerate(cols):
        for i, a in col.items():
            A[i, k] = a
        c[k] = cost
        keys.append(key)
    for r, k in ub_index.items():
        A[r, k] = 1.0
    pos = n_struct
    for i, s in enumerate(row_senses):
        if s == EQ:
            continue
        A[i, pos] = 1.0 if s == LE else -1.0
        keys.append(("s", row_keys[i]))
        pos += 1
    flip = np.where(b_all < 0, -1.0, 1.0)
    A[:, :pos] *= flip[:, None]
    b_all = b_all * flip
    for i in range(n_rows):
        A[i, pos + i] = 1.0
        keys.append(("a", row_keys[i]))
    artificial = np.zeros(total, dtype=bool)
    artificial[pos:] = True
    return _StandardForm(A, b_all, c, keys, row_keys, flip, m, offset, var_map, artificial)


class _Simplex:
    def __init__(self, sf: _StandardForm, basis: list[int], max_iter: int):
        self.sf = sf
        self.A = sf.A
        self.b = sf.b
        self.basis = list(basis)
        self.max_iter = max_iter
        self.iterations = 0
        self.refactor()

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self.since_refactor = 0

    def run(self, cost: np.ndarray, allowed: np.ndarray) -> str:
        bland = False
        degenerate = 0
        bland_restarts = 0
        A = self.A
        m = len(self.basis)
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            y = cost[self.basis] @ self.Binv
            d = cost - y @ A
            in_basis = np.zeros(A.shape[1], dtype=bool)
            in_basis[self.basis] = True
            cand = allowed & ~in_basis & (d < -COST_TOL)
            if not cand.any():
                return OPTIMAL
            idx = np.flatnonzero(cand)
            q = int(idx[0]) if bland else int(idx[np.argmin(d[idx])])
            col = self.Binv @ A[:, q]
            pos = col > PIVOT_TOL
            if not pos.any():
                return UNBOUNDED
            ratios = np.full(m, np.inf)
            ratios[pos] = np.maximum(self.xB[pos], 0.0) / col[pos]
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if bland:
                r = int(min(ties, key=lambda t: self.basis[t]))
            else:
                r = int(ties[np.argmax(col[ties])])
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > 50 and not bland:
                    bland = True
                elif degenerate > 50 * (m + 10):
                    bland_restarts += 1
                    if bland_restarts > 3:
                        raise NumericalStall("simplex stalled under Bland's rule")
                    degenerate = 0
                    self.refactor()
            else:
                degenerate = 0
                bland = False
            self.pivot(r, q, col)
            self.iterations += 1

    def pivot(self, r: int, q: int, col: np.ndarray) -> None:
        piv = col[r]
        self.basis[r] = q
        self.since_refactor += 1
        if self.since_refactor >= 60:
            self.refactor()
            return
        Binv = self.Binv
        row_r = Binv[r] / piv
        Binv -= np.outer(col, row_r)
        Binv[r] = row_r
        theta = self.xB[r] / piv
        self.xB -= theta * col
        self.xB[r] = theta


def solve_lp(
    lp: LinearProgram,
    warm_start: WarmBasis | None = None,
    max_iter: int = 100_000,
) -> LpSolution:
    """Solve ``lp`` (minimisation). Duals follow the sign convention d(obj)/d(rhs)."""
    sf = _standard_form(lp)
    m, total = sf.A.shape
    key_index = {k: i for i, k in enumerate(sf.keys)}
    if len(key_index) != total:
        warm_start = None  # names not unique
    n_real = int((~sf.artificial).sum())

    if m == 0:
        return _no_rows(lp, sf)

    simplex = None
    if warm_start is not None:
        simplex = _try_warm(sf, warm_start, key_index, max_iter)
    if simplex is None:
        basis = []
        for i in range(m):
            sk = key_index.get(("s", sf.row_keys[i]))
            if sk is not None and sf.A[i, sk] > 0:
                basis.append(sk)
            else:
                basis.append(key_index[("a", sf.row_keys[i])])
        simplex = _Simplex(sf, basis, max_iter)
        if any(sf.artificial[j] for j in basis):
            phase1 = np.where(sf.artificial, 1.0, 0.0)
            status = simplex.run(phase1, np.ones(total, dtype=bool))
            if status == ITERATION_LIMIT:
                return _fail(lp, sf, ITERATION_LIMIT, simplex.iterations)
            infeas = float(phase1[simplex.basis] @ simplex.xB)
            if infeas > FEAS_TOL * max(1.0, np.abs(sf.b).max()):
                return _fail(lp, sf, INFEASIBLE, simplex.iterations)
            _drive_out_artificials(simplex, n_real)
    status = simplex.run(sf.c, ~sf.artificial)
    if status != OPTIMAL:
        return _fail(lp, sf, status, simplex.iterations)
    simplex.refactor()
    return _extract(lp, sf, simplex)


def _try_warm(sf, warm: "WarmBasis", key_index, max_iter):
    m = sf.A.shape[0]
    old_rows = set(warm.rows)
    basis = []
    for k in warm.columns:
        j = key_index.get(k)
        if j is None:
            return None
        basis.append(j)
    # rows added since the basis was recorded enter with their own slack
    for i, rk in enumerate(sf.row_keys):
        if rk in old_rows:
            continue
        sk = key_index.get(("s", rk))
        if sk is None or sf.A[i, sk] <= 0:
            return None
        basis.append(sk)
    if len(basis) != m or len(set(basis)) != m:
        return None
    try:
        simplex = _Simplex(sf, basis, max_iter)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(simplex.xB)) or simplex.xB.min() < -FEAS_TOL:
        return None
    if any(sf.artificial[j] and simplex.xB[r] > FEAS_TOL for r, j in enumerate(simplex.basis)):
        return None
    if np.abs(sf.A[:, simplex.basis] @ simplex.xB - sf.b).max() > 1e-6:
        return None
    return simplex


def _drive_out_artificials(simplex: _Simplex, n_real: int) -> None:
    sf = simplex.sf
    for r in range(len(simplex.basis)):
        if not sf.artificial[simplex.basis[r]]:
            continue
        row = simplex.Binv[r] @ sf.A[:, :n_real]
        in_basis = set(simplex.basis)
        for j in np.argsort(-np.abs(row)):
            if abs(row[j]) <= 1e-9:
                break
            if j in in_basis:
                continue
            col = simplex.Binv @ sf.A[:, j]
            simplex.pivot(r, int(j), col)
            break
    simplex.refactor()


def _no_rows(lp: LinearProgram, sf: _StandardForm) -> LpSolution:
    n = lp.n_vars
    x = np.zeros(n)
    for j in range(n):
        c, lo, up = lp.costs[j], lp.lower[j], lp.upper[j]
        if c > 0:
            x[j] = lo
        elif c < 0:
            x[j] = up
        else:
            x[j] = lo if math.isfinite(lo) else (up if math.isfinite(up) else 0.0)
        if not math.isfinite(x[j]):
            return _fail(lp, sf, UNBOUNDED, 0)
    obj = lp.objective(x)
    rc = np.array(lp.costs, dtype=float)
    return LpSolution(OPTIMAL, x, np.zeros(0), rc, obj, obj, 0, WarmBasis((), ()))


def _fail(lp: LinearProgram, sf: _StandardForm, status: str, iterations: int) -> LpSolution:
    nan = np.full(lp.n_vars, np.nan)
    return LpSolution(status, nan, np.full(lp.n_rows, np.nan), nan, math.nan, math.nan, iterations, None)


def _extract(lp: LinearProgram, sf: _StandardForm, simplex: _Simplex) -> LpSolution:
    total = sf.A.shape[1]
    xs = np.zeros(total)
    xs[simplex.basis] = np.maximum(simplex.xB, 0.0)
    x = np.zeros(lp.n_vars)
    for j, (kind, k, k2, anchor) in enumerate(sf.var_map):
        if kind == "shift":
            x[j] = anchor + xs[k]
        elif kind == "neg":
            x[j] = anchor - xs[k]
        else:
            x[j] = xs[k] - xs[k2]
    y_std = sf.c[simplex.basis] @ simplex.Binv
    y_all = y_std * sf.flip
    duals = y_all[: sf.n_orig_rows].copy()
    rc = np.array(lp.costs, dtype=float)
    for i, row in enumerate(lp.rows):
        for j, a in row.items():
            rc[j] -= a * duals[i]
    objective = lp.objective(x)
    dual_obj = float(np.dot(lp.rhs, duals)) if lp.n_rows else 0.0
    for j in range(lp.n_vars):
        d = rc[j]
        if abs(d) <= 1e-12:
            continue
        bound = lp.lower[j] if d > 0 else lp.upper[j]
        if math.isfinite(bound):
            dual_obj += d * bound
        else:
            dual_obj += d * x[j]
    basis = WarmBasis(tuple(sf.keys[j] for j in simplex.basis), tuple(sf.row_keys))
    return LpSolution(OPTIMAL, x, duals, rc, objective, dual_obj, simplex.iterations, basis)


def lp_to_text(lp: LinearProgram) -> str:
    """Render ``lp`` in CPLEX LP text format for cross-checking with external tools."""

    def name(j: int) -> str:
        return _sanitize(lp.names[j])

    def expr(coefs: Iterable[tuple[int, float]]) -> str:
        parts = []
        for j, a in coefs:
            sign = "-" if a < 0 else "+"
            parts.append(f"{sign} {abs(a):.12g} {name(j)}")
        if not parts:
            return "0 " + (name(0) if lp.n_vars else "")
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else text

    lines = ["\\ generated by taxicharge", "Minimize", " obj: " + expr((j, c) for j, c in enumerate(lp.costs) if c)]
    lines.append("Subject To")
    for i, row in enumerate(lp.rows):
        sense = {"<=": "<=", ">=": ">=", "=": "="}[lp.senses[i]]
        lines.append(f" {_sanitize(lp.row_names[i])}: {expr(sorted(row.items()))} {sense} {lp.rhs[i]:.12g}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, up = lp.lower[j], lp.upper[j]
        lo_s = "-inf" if lo == -math.inf else f"{lo:.12g}"
        up_s = "+inf" if up == math.inf else f"{up:.12g}"
        lines.append(f" {lo_s} <= {name(j)} <= {up_s}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def _sanitize(s: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in s)

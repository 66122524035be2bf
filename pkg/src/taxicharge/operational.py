"""Operational feasibility of a station configuration in one scenario.

The master problem picks one route (or a unit-cost dummy) per vehicle under
station-period capacities. Columns come from the labeling pricer; integrality
is reached by depth-first branch-and-price on route deviations.
"""

from __future__ import annotations

import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .kernel import EQ, LE, Kernel, LinearProgram, WarmBasis, default_kernel
from .model import Instance, Scenario
from .network import BranchConstraint, ExpandedNetwork, build_network
from .pricing import Route, cheapest_route, price_vehicle, vehicle_feasible

PROVE = "prove"
MAX_COUNT = "max"
_BIG = 1e6
_VAL = 1e-6


class TimeLimitReached(RuntimeError):
    pass


@dataclass
class OperationalOptions:
    column_cap: int | None = 10
    node_limit: int = 10_000
    restore_every: int = 5  # 0 disables integer restoration
    greedy: bool = True
    restore_time_limit: float = 60.0
    restore_node_limit: int = 200
    tol: float = 1e-6
    kernel: Kernel = field(default_factory=default_kernel)
    deadline: float | None = None  # absolute time.perf_counter() value


@dataclass(frozen=True)
class NodeRecord:
    node: int
    parent: int
    depth: int
    lp_value: float | None
    constraint: str
    outcome: str


@dataclass
class FeasibilityResult:
    feasible: bool
    n_vehicles: int
    n_feasible: int
    infeasible_vehicles: tuple[str, ...]
    exact: bool
    exceeded_threshold: bool = False
    lower_bound: int = 0  # proven minimum number of unservable vehicles
    nodes: int = 0
    trace: list[NodeRecord] = field(default_factory=list)

    @property
    def n_infeasible(self) -> int:
        return self.n_vehicles - self.n_feasible

    @property
    def ratio(self) -> float:
        return self.n_feasible / self.n_vehicles if self.n_vehicles else 1.0


class ColumnPool:
    """Every route priced so far, keyed by vehicle and vertex sequence."""

    def __init__(self) -> None:
        self._by_vehicle: dict[str, dict[tuple, int]] = defaultdict(dict)
        self._routes: list[Route] = []

    def add(self, route: Route) -> int:
        known = self._by_vehicle[route.vehicle]
        idx = known.get(route.path)
        if idx is None:
            idx = len(self._routes)
            known[route.path] = idx
            self._routes.append(route)
        return idx

    def ident(self, route: Route) -> int | None:
        return self._by_vehicle[route.vehicle].get(route.path)

    def routes(self, vehicle: str) -> list[tuple[int, Route]]:
        return [(i, self._routes[i]) for i in self._by_vehicle.get(vehicle, {}).values()]

    def __len__(self) -> int:
        return len(self._routes)


def route_allowed(route: Route, constraints: Iterable[BranchConstraint]) -> bool:
    for c in constraints:
        if c.vehicle != route.vehicle or c.kind == "dummy":
            continue
        choice = route.choices[c.gap]
        at_station = choice is not None and choice[0] == c.station
        hit = at_station if c.kind == "station" else at_station and choice[1] <= c.period <= choice[2]
        if hit != c.enforce:
            return False
    return True


def deviation(p: Route, q: Route) -> tuple[str, int, str, int | None]:
    """First difference between two routes of one vehicle.

    Returns ("station", gap, station, None) when the gaps use different
    stations (or only one charges), else ("vertex", gap, station, period) with
    the earliest period charged by exactly one of them.
    """
    for gap, (a, b) in enumerate(zip(p.choices, q.choices)):
        if a == b:
            continue
        if a is None or b is None or a[0] != b[0]:
            station = a[0] if a is not None else b[0]
            return ("station", gap, station, None)
        ta = set(range(a[1], a[2] + 1))
        tb = set(range(b[1], b[2] + 1))
        return ("vertex", gap, a[0], min(ta ^ tb))
    raise ValueError("routes do not deviate")


def branch_children(vehicle: str, p: Route | None, q: Route | None) -> list[BranchConstraint]:
    """Child constraints for a fractional vehicle, preferred child first.

    ``None`` stands for the dummy column; then the vehicle is either served
    (explored first) or given up.
    """
    if p is None or q is None:
        return [BranchConstraint(vehicle, "dummy", False), BranchConstraint(vehicle, "dummy", True)]
    kind, gap, station, period = deviation(p, q)
    return [
        BranchConstraint(vehicle, kind, True, gap, station, period),
        BranchConstraint(vehicle, kind, False, gap, station, period),
    ]


@dataclass
class _NodeLP:
    value: float
    columns: list[tuple[str, Route | None]]
    x: np.ndarray
    basis: WarmBasis | None
    duals: dict
    infeasible: bool = False


@dataclass
class _Node:
    constraints: tuple[BranchConstraint, ...]
    depth: int
    label: str
    basis: WarmBasis | None = None
    parent: int = 0


@dataclass
class RelaxationResult:
    objective: float
    rho: dict[str, float]
    prices: dict[tuple[str, int], float]
    selection: dict[str, list[tuple[Route | None, float]]]


@dataclass
class RestoredSolution:
    objective: float
    routes: dict[str, Route | None]
    optimal: bool


def restore_integrality(
    columns: dict[str, list[Route]],
    capacities: dict[str, int],
    time_limit: float | None = 60.0,
    node_limit: int | None = None,
    kernel: Kernel | None = None,
    forbid_dummy: Iterable[str] = (),
) -> RestoredSolution | None:
    """Best integer selection using only the given routes (plus dummies)."""
    kernel = kernel or default_kernel()
    forbid = set(forbid_dummy)
    lp = LinearProgram()
    conv = {v: lp.add_constraint({}, EQ, 1.0, f"conv:{v}") for v in columns}
    use: dict[tuple[str, int], list[int]] = defaultdict(list)
    cols: list[tuple[str, Route | None]] = []
    for v, routes in columns.items():
        lp.add_variable(1.0, 0.0, 0.0 if v in forbid else 1.0, f"{v}|dummy", {conv[v]: 1.0})
        cols.append((v, None))
        for k, r in enumerate(routes):
            j = lp.add_variable(0.0, 0.0, 1.0, f"{v}|{k}", {conv[v]: 1.0})
            cols.append((v, r))
            for key in r.footprint:
                use[key].append(j)
    for key in sorted(use):
        if len(use[key]) > capacities[key[0]]:
            lp.add_constraint({j: 1.0 for j in use[key]}, LE, capacities[key[0]], f"cap:{key[0]}:{key[1]}")
    res = kernel.solve_binary(lp, time_limit=time_limit, node_limit=node_limit)
    if res.x is None:
        return None
    chosen: dict[str, Route | None] = {}
    for j, (v, r) in enumerate(cols):
        if res.x[j] > 0.5:
            chosen[v] = r
    return RestoredSolution(res.objective, chosen, res.optimal)


class OperationalSearch:
    """Branch-and-price for one (configuration, scenario) pair."""

    def __init__(self, instance: Instance, scenario: Scenario, opened: Iterable[str], options: OperationalOptions | None = None):
        self.instance = instance
        self.scenario = scenario
        self.opened = frozenset(opened)
        self.opt = options or OperationalOptions()
        self.kernel = self.opt.kernel
        self.cap = {s.id: s.charge_points for s in instance.stations}
        self.vehicles = {v.id: v for v in scenario.vehicles}
        self.pool = ColumnPool()
        self._nets: dict[tuple, ExpandedNetwork] = {}
        self.known_rows: set[tuple[str, int]] = set()
        self.trace: list[NodeRecord] = []
        self.unservable = [v.id for v in scenario.vehicles if not vehicle_feasible(v, instance, self.opened)]
        self.active = [v.id for v in scenario.vehicles if v.id not in set(self.unservable)]
        demand: Counter = Counter()
        for vid in self.active:
            net = self.network(vid, ())
            demand.update({(net.vertices[i].station, net.vertices[i].period) for i in net.charging_vertices})
        self.contended = {k for k, n in demand.items() if n > self.cap[k[0]]}

    # -- networks -----------------------------------------------------------
    def network(self, vid: str, constraints: Iterable[BranchConstraint]) -> ExpandedNetwork:
        mine = tuple(c for c in constraints if c.vehicle == vid and c.kind != "dummy")
        key = (vid, frozenset(mine))
        net = self._nets.get(key)
        if net is None:
            net = build_network(self.vehicles[vid], self.instance, self.opened, None, mine)
            self._nets[key] = net
        return net

    def _check_time(self) -> None:
        if self.opt.deadline is not None and time.perf_counter() > self.opt.deadline:
            raise TimeLimitReached("operational search exceeded the time limit")

    # -- heuristic ----------------------------------------------------------
    def greedy(self) -> dict[str, Route | None]:
        """Serve vehicles one by one on the smallest footprint that still fits."""
        load: Counter = Counter()
        chosen: dict[str, Route | None] = {}
        for vid in self.active:
            self._check_time()
            net = self.network(vid, ())
            prices = {}
            for i in net.charging_vertices:
                key = (net.vertices[i].station, net.vertices[i].period)
                prices[key] = _BIG if load[key] >= self.cap[key[0]] else 1.0
            route = cheapest_route(net.reprice(prices))
            if route is None or route.cost >= _BIG:
                chosen[vid] = None
                continue
            chosen[vid] = route
            load.update(route.footprint)
            self.pool.add(route)
        return chosen

    # -- column generation --------------------------------------------------
    def column_generation(
        self,
        constraints: tuple[BranchConstraint, ...],
        dummy_cost: dict[str, float] | None = None,
        dummy_upper: dict[str, float] | None = None,
        rows: Iterable[tuple[str, int]] = (),
        warm: WarmBasis | None = None,
    ) -> _NodeLP:
        dropped = {c.vehicle for c in constraints if c.kind == "dummy" and c.enforce}
        active = [v for v in self.active if v not in dropped]
        dummy_cost = dummy_cost or {}
        dummy_upper = dummy_upper or {}
        lp = LinearProgram()
        conv = {v: lp.add_constraint({}, EQ, 1.0, f"conv:{v}") for v in active}
        caprows: dict[tuple[str, int], int] = {}
        for key in sorted(set(rows) | self.known_rows):
            caprows[key] = lp.add_constraint({}, LE, self.cap[key[0]], f"cap:{key[0]}:{key[1]}")
        cols: list[tuple[str, Route | None]] = []
        in_lp: set[int] = set()

        def add_column(vid: str, route: Route | None) -> None:
            coefs = {conv[vid]: 1.0}
            if route is None:
                lp.add_variable(dummy_cost.get(vid, 1.0), 0.0, dummy_upper.get(vid, math.inf), f"{vid}|dummy", coefs)
            else:
                idx = self.pool.add(route)
                in_lp.add(idx)
                for key in route.footprint:
                    if key in caprows:
                        coefs[caprows[key]] = 1.0
                lp.add_variable(0.0, 0.0, math.inf, f"{vid}|{idx}", coefs)
            cols.append((vid, route))

        for vid in active:
            add_column(vid, None)
            for _, route in self.pool.routes(vid):
                if route_allowed(route, constraints) and route.stations <= self.opened:
                    add_column(vid, route)

        while True:
            self._check_time()
            sol = self.kernel.solve_lp(lp, warm)
            if not sol.optimal:
                if sol.status == "infeasible":
                    return _NodeLP(math.inf, cols, sol.x, None, {}, infeasible=True)
                raise RuntimeError(f"master LP ended with status {sol.status}")
            warm = sol.basis
            usage: dict[tuple[str, int], float] = defaultdict(float)
            for j, (vid, route) in enumerate(cols):
                if route is not None and sol.x[j] > 1e-9:
                    for key in route.footprint:
                        if key not in caprows:
                            usage[key] += sol.x[j]
            violated = sorted(k for k, u in usage.items() if u > self.cap[k[0]] + 1e-7)
            if violated:
                for key in violated:
                    coefs = {j: 1.0 for j, (_, r) in enumerate(cols) if r is not None and key in r.footprint}
                    caprows[key] = lp.add_constraint(coefs, LE, self.cap[key[0]], f"cap:{key[0]}:{key[1]}")
                    self.known_rows.add(key)
                continue
            rho = {v: float(sol.duals[conv[v]]) for v in active}
            prices = {k: max(0.0, -float(sol.duals[i])) for k, i in caprows.items()}
            added = 0
            for vid in active:
                net = self.network(vid, constraints).reprice(prices)
                res = price_vehicle(net, rho[vid], self.opt.column_cap, self.opt.tol)
                for route in res.routes:
                    idx = self.pool.ident(route)
                    if idx is not None and idx in in_lp:
                        continue
                    add_column(vid, route)
                    added += 1
            if not added:
                return _NodeLP(float(sol.objective), cols, sol.x, sol.basis, {"rho": rho, "prices": prices})

    def node_lp(self, node: _Node) -> _NodeLP:
        served = [c.vehicle for c in node.constraints if c.kind == "dummy" and not c.enforce]
        if not served:
            return self.column_generation(node.constraints, warm=node.basis)
        # phase one: can the vehicles that must be served all be served?
        cost = {v: 0.0 for v in self.active}
        cost.update({v: 1.0 for v in served})
        first = self.column_generation(node.constraints, dummy_cost=cost, rows=self.contended, warm=node.basis)
        if first.infeasible or first.value > self.opt.tol:
            return _NodeLP(math.inf, first.columns, first.x, None, {}, infeasible=True)
        return self.column_generation(
            node.constraints, dummy_upper={v: 0.0 for v in served}, rows=self.contended, warm=first.basis
        )

    # -- search -------------------------------------------------------------
    def _selection(self, lp: _NodeLP) -> dict[str, list[tuple[float, Route | None]]]:
        sel: dict[str, list[tuple[float, Route | None]]] = defaultdict(list)
        for j, (vid, route) in enumerate(lp.columns):
            if lp.x[j] > _VAL:
                sel[vid].append((float(lp.x[j]), route))
        return sel

    def _fractional(self, sel) -> tuple[str, Route | None, Route | None] | None:
        for vid in self.active:
            picks = sel.get(vid, [])
            if len(picks) > 1 or (picks and picks[0][0] < 1 - _VAL):
                # order by value, routes before the dummy on ties, then pool order
                ranked = sorted(picks, key=lambda p: (-p[0], p[1] is None, self.pool.ident(p[1]) if p[1] else -1))
                return vid, ranked[0][1], ranked[1][1]
        return None

    def _columns_by_vehicle(self, lp: _NodeLP, constraints) -> dict[str, list[Route]]:
        dropped = {c.vehicle for c in constraints if c.kind == "dummy" and c.enforce}
        out: dict[str, list[Route]] = {v: [] for v in self.active if v not in dropped}
        for vid, route in lp.columns:
            if route is not None and vid in out:
                out[vid].append(route)
        return out

    def solve(self, mode: str = PROVE, threshold: int | None = None) -> FeasibilityResult:
        self._check_time()
        n = len(self.vehicles)
        base = len(self.unservable)
        tol = self.opt.tol

        def result(feasible, n_inf, dropped, exact, lower, exceeded=False, nodes=0):
            return FeasibilityResult(
                feasible, n, n - n_inf, tuple(dropped), exact, exceeded, lower, nodes, self.trace
            )

        if mode == PROVE and base:
            return result(False, base, self.unservable, False, base, True)
        greedy = self.greedy() if self.opt.greedy else {v: None for v in self.active}
        failed = [v for v in self.active if greedy[v] is None]
        best = base + len(failed)
        best_dropped = list(self.unservable) + failed
        if not failed:
            return result(base == 0, base, self.unservable, True, base)

        stack = [_Node((), 0, "root")]
        nodes = 0
        lower = base
        capped = False
        while stack:
            if nodes >= self.opt.node_limit:
                capped = True
                break
            node = stack.pop()
            nodes += 1
            lp = self.node_lp(node)
            if lp.infeasible:
                self.trace.append(NodeRecord(nodes, node.parent, node.depth, None, node.label, "infeasible"))
                continue
            fixed = sum(1 for c in node.constraints if c.kind == "dummy" and c.enforce)
            bound = base + fixed + lp.value
            if nodes == 1:
                lower = base + math.ceil(lp.value - tol)
                if mode == PROVE and lower > base:
                    self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "pruned"))
                    return result(False, lower, self.unservable, True, lower, True, nodes)
                if threshold is not None and lower > threshold:
                    self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "pruned"))
                    return result(False, best, best_dropped, best == lower, lower, True, nodes)
            if mode == PROVE:
                if bound > base + tol:
                    self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "pruned"))
                    continue
            elif math.ceil(bound - tol) >= best:
                self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "pruned"))
                continue
            sel = self._selection(lp)
            frac = self._fractional(sel)
            if frac is None:
                dropped = [v for v in self.active if any(r is None for _, r in sel.get(v, []))]
                dropped += [c.vehicle for c in node.constraints if c.kind == "dummy" and c.enforce]
                count = base + len(dropped)
                self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "integral"))
                if count < best:
                    best, best_dropped = count, list(self.unservable) + sorted(dropped, key=self.active.index)
                if mode == PROVE and count == base:
                    return result(True, base, self.unservable, True, base, False, nodes)
                if best == lower:
                    break
                continue
            if self.opt.restore_every and (nodes == 1 or nodes % self.opt.restore_every == 0):
                restored = self._restore(lp, node.constraints)
                if restored is not None:
                    count, dropped = restored
                    if count < best:
                        best, best_dropped = count, dropped
                    if mode == PROVE and count == base:
                        self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "restored"))
                        return result(True, base, self.unservable, True, base, False, nodes)
                    if best == lower:
                        self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "restored"))
                        break
            vid, p, q = frac
            children = branch_children(vid, p, q)
            self.trace.append(NodeRecord(nodes, node.parent, node.depth, fixed + lp.value, node.label, "branched"))
            for c in reversed(children):
                stack.append(_Node(node.constraints + (c,), node.depth + 1, c.describe(), lp.basis, nodes))

        if mode == PROVE:
            # an exhausted tree proves infeasibility; a capped one is reported conservatively
            return result(False, max(lower, base + 1), self.unservable, not capped, lower, True, nodes)
        exact = not capped or best == lower
        exceeded = threshold is not None and best > threshold
        return result(best == 0, best, best_dropped, exact, lower if not exact else best, exceeded, nodes)

    def _restore(self, lp: _NodeLP, constraints) -> tuple[int, list[str]] | None:
        columns = self._columns_by_vehicle(lp, constraints)
        served = [c.vehicle for c in constraints if c.kind == "dummy" and not c.enforce]
        limit = self.opt.restore_time_limit
        if self.opt.deadline is not None:
            limit = min(limit, max(0.0, self.opt.deadline - time.perf_counter()))
        sol = restore_integrality(columns, self.cap, limit, self.opt.restore_node_limit, self.kernel, served)
        if sol is None:
            return None
        dropped = [v for v in self.active if v in sol.routes and sol.routes[v] is None]
        dropped += [c.vehicle for c in constraints if c.kind == "dummy" and c.enforce]
        return len(self.unservable) + len(dropped), list(self.unservable) + dropped

    def relaxation(self) -> RelaxationResult:
        self.greedy()
        lp = self.column_generation(())
        sel = self._selection(lp)
        return RelaxationResult(
            lp.value + len(self.unservable),
            lp.duals.get("rho", {}),
            lp.duals.get("prices", {}),
            {v: [(r, x) for x, r in picks] for v, picks in sel.items()},
        )


def check_feasibility(
    instance: Instance,
    scenario: Scenario,
    opened: Iterable[str],
    mode: str = PROVE,
    threshold: int | None = None,
    options: OperationalOptions | None = None,
) -> FeasibilityResult:
    """Can every vehicle of ``scenario`` be served with ``opened`` stations?

    ``mode="prove"`` answers yes or no. ``mode="max"`` also returns the
    largest number of servable vehicles; with ``threshold`` the search stops
    as soon as more than ``threshold`` vehicles are proven unservable.
    """
    if mode not in (PROVE, MAX_COUNT):
        raise ValueError(f"unknown mode {mode!r}")
    return OperationalSearch(instance, scenario, opened, options).solve(mode, threshold)


def solve_relaxation(
    instance: Instance, scenario: Scenario, opened: Iterable[str], options: OperationalOptions | None = None
) -> RelaxationResult:
    """Root LP value of the master problem, counting unservable vehicles as dummies."""
    return OperationalSearch(instance, scenario, opened, options).relaxation()

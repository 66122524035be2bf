"""Label-setting solver for the per-vehicle pricing problem.

A label carries the accumulated charge price C and the state of charge R.
Networks are DAGs whose vertex order is topological, so one forward sweep
settles every label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .model import Instance, Vehicle, charge_amount
from .network import CHARGE, ExpandedNetwork, NetArc, BranchConstraint, build_network, charging_window

SOC_TOL = 1e-9
REDUCED_COST_TOL = 1e-6


class Label:
    __slots__ = ("vertex", "cost", "soc", "pred")

    def __init__(self, vertex: int, cost: float, soc: float, pred: "Label | None" = None):
        self.vertex = vertex
        self.cost = cost
        self.soc = soc
        self.pred = pred

    def __repr__(self) -> str:
        return f"Label(v={self.vertex}, C={self.cost:.6g}, R={self.soc:.6g})"


@dataclass(frozen=True)
class Route:
    vehicle: str
    path: tuple[tuple, ...]
    footprint: frozenset[tuple[str, int]]
    # per gap: None for a direct transfer, else (station, first period, last period)
    choices: tuple[tuple[str, int, int] | None, ...]
    cost: float
    soc_end: float
    reduced_cost: float

    @property
    def stations(self) -> frozenset[str]:
        return frozenset(c[0] for c in self.choices if c is not None)


@dataclass
class PricingResult:
    routes: list[Route]
    feasible: bool
    end_labels: list[Label]
    n_labels: int = 0


def charge_step(soc: float, net: ExpandedNetwork) -> float:
    """SOC after one period at a charging vertex."""
    q_max = net.tech.q_max
    return min(q_max, soc + charge_amount(soc, net.tech, 1, net.period_minutes))


def extend(label: Label, arc: NetArc, net: ExpandedNetwork) -> Label | None:
    i = label.vertex
    soc = label.soc
    if net.charges[i]:
        soc = charge_step(soc, net)
    soc -= arc.range_cost
    if soc < net.tech.q_min - SOC_TOL:
        return None
    return Label(arc.head, label.cost + net.prices[i], soc, label)


def dominates(a: Label, b: Label) -> bool:
    return a.cost <= b.cost and a.soc >= b.soc


def _insert(bucket: list[Label], new: Label) -> bool:
    c, q = new.cost, new.soc
    prune = False
    for old in bucket:
        if old.cost <= c and old.soc >= q:
            return False
        if c <= old.cost and q >= old.soc:
            prune = True
    if prune:
        bucket[:] = [old for old in bucket if not (c <= old.cost and q >= old.soc)]
    bucket.append(new)
    return True


def label_setting(net: ExpandedNetwork) -> list[list[Label]]:
    """Non-dominated labels at every vertex."""
    buckets: list[list[Label]] = [[] for _ in net.vertices]
    if net.q_begin < net.tech.q_min - SOC_TOL:
        return buckets
    buckets[net.source].append(Label(net.source, 0.0, net.q_begin))
    arcs = net.arcs
    floor = net.tech.q_min - SOC_TOL
    for i in range(len(net.vertices)):
        here = buckets[i]
        if not here:
            continue
        # same arithmetic as ``extend``, with the charging step done once per label
        socs = [charge_step(lab.soc, net) for lab in here] if net.charges[i] else [lab.soc for lab in here]
        price = net.prices[i]
        for k in net.out_arcs[i]:
            arc = arcs[k]
            target = buckets[arc.head]
            for lab, q in zip(here, socs):
                soc = q - arc.range_cost
                if soc >= floor:
                    _insert(target, Label(arc.head, lab.cost + price, soc, lab))
    return buckets


def backtrack(label: Label, net: ExpandedNetwork, reduced_cost: float = 0.0) -> Route:
    seq: list[int] = []
    cur: Label | None = label
    while cur is not None:
        seq.append(cur.vertex)
        cur = cur.pred
    seq.reverse()
    verts = [net.vertices[i] for i in seq]
    n_gaps = max(0, sum(1 for v in verts if v.kind == "o") - 1)
    choices: list[tuple[str, int, int] | None] = [None] * n_gaps
    for v in verts:
        if v.kind != CHARGE:
            continue
        c = choices[v.index]
        choices[v.index] = (v.station, v.period, v.period) if c is None else (c[0], c[1], v.period)
    footprint = frozenset((v.station, v.period) for v in verts if v.kind == CHARGE)
    return Route(
        vehicle=net.vehicle_id,
        path=tuple(v.key for v in verts),
        footprint=footprint,
        choices=tuple(choices),
        cost=label.cost,
        soc_end=label.soc,
        reduced_cost=reduced_cost,
    )


def end_labels(net: ExpandedNetwork, buckets: list[list[Label]] | None = None) -> list[Label]:
    buckets = buckets if buckets is not None else label_setting(net)
    return [lab for lab in buckets[net.sink] if lab.soc >= net.q_end - SOC_TOL]


def price_vehicle(
    net: ExpandedNetwork, rho: float, column_cap: int | None = 10, tol: float = REDUCED_COST_TOL
) -> PricingResult:
    """Routes with reduced cost -rho + C below -tol, best first."""
    buckets = label_setting(net)
    ends = end_labels(net, buckets)
    improving = [lab for lab in ends if -rho + lab.cost < -tol]
    improving.sort(key=lambda lab: (lab.cost, -lab.soc))
    if column_cap is not None:
        improving = improving[:column_cap]
    routes = [backtrack(lab, net, -rho + lab.cost) for lab in improving]
    return PricingResult(routes, bool(ends), ends, sum(len(b) for b in buckets))


def cheapest_route(net: ExpandedNetwork) -> Route | None:
    """Feasible route of least accumulated price, ties broken by higher end SOC."""
    ends = end_labels(net)
    if not ends:
        return None
    best = min(ends, key=lambda lab: (lab.cost, -lab.soc))
    return backtrack(best, net, best.cost)


def vehicle_feasible(
    vehicle: Vehicle,
    instance: Instance,
    opened: Iterable[str] | None = None,
    branching: Iterable[BranchConstraint] = (),
) -> bool:
    """Whether the vehicle can complete its shift with ``opened`` stations, ignoring capacity."""
    opened = set(instance.station_ids if opened is None else opened)
    branching = list(branching)
    if branching:
        net = build_network(vehicle, instance, opened, None, branching)
        return bool(end_labels(net))
    return max_soc_profile(vehicle, instance, opened) is not None


def max_soc_profile(vehicle: Vehicle, instance: Instance, opened: Iterable[str]) -> list[float] | None:
    """Highest reachable SOC after each trip, or None if the shift cannot be completed.

    Without prices only the SOC matters, and charging for the whole window of
    a station is never worse than charging for part of it, so a per-gap
    maximum suffices.
    """
    tech = instance.tech
    q_min, q_max = tech.q_min, tech.q_max
    pm = instance.period_minutes
    opened = set(opened)
    soc = vehicle.q_begin
    if soc < q_min - SOC_TOL:
        return None
    profile = []
    n = len(vehicle.trips)
    for c, trip in enumerate(vehicle.trips):
        soc -= trip.energy
        if soc < q_min - SOC_TOL:
            return None
        profile.append(soc)
        if c == n - 1:
            break
        gap = vehicle.gaps[c]
        best = soc - gap.direct_energy
        if best < q_min - SOC_TOL:
            best = float("-inf")
        for opt in gap.options:
            if opt.station not in opened:
                continue
            window = charging_window(vehicle, c, opt, pm)
            if len(window) == 0:
                continue
            q = soc - opt.energy_in
            if q < q_min - SOC_TOL:
                continue
            for _ in window:
                q = min(q_max, q + charge_amount(q, tech, 1, pm))
            q -= opt.energy_out
            if q >= q_min - SOC_TOL and q > best:
                best = q
        if best == float("-inf"):
            return None
        soc = best
    if soc < vehicle.end_requirement(tech) - SOC_TOL:
        return None
    return profile

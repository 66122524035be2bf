"""Per-vehicle time-expanded networks.

Vertices are trip starts, trip ends and (station, period) charging vertices
inside each idle gap. A charging vertex charges for exactly one period, and
the energy becomes available on its outgoing arc.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .model import Instance, StationOption, TechParams, Vehicle

TRIP_START, TRIP_END, CHARGE = "o", "d", "q"
ARC_TRIP, ARC_DIRECT, ARC_TO_CHARGER, ARC_FROM_CHARGER, ARC_HOLD = "R", "P", "B1", "B2", "W"


@dataclass(frozen=True)
class NetVertex:
    kind: str
    index: int  # trip index for o/d, gap index for q
    station: str | None
    period: int

    @property
    def key(self) -> tuple:
        return (self.kind, self.index, self.station, self.period)


@dataclass(frozen=True)
class NetArc:
    tail: int
    head: int
    kind: str
    range_cost: float


@dataclass(frozen=True)
class BranchConstraint:
    """Branching decision for one vehicle.

    kind "station": visit (enforce) or avoid (forbid) ``station`` in gap ``gap``.
    kind "vertex": same for the single charging vertex (station, period).
    kind "dummy": enforce drops the vehicle, forbid requires it to be served.
    """

    vehicle: str
    kind: str
    enforce: bool
    gap: int = -1
    station: str | None = None
    period: int | None = None

    def describe(self) -> str:
        verb = "enforce" if self.enforce else "forbid"
        if self.kind == "dummy":
            return f"{verb} dummy {self.vehicle}"
        where = self.station if self.kind == "station" else f"{self.station}@{self.period}"
        return f"{verb} {self.vehicle} gap{self.gap} {where}"


@dataclass(frozen=True)
class ExpandedNetwork:
    vehicle_id: str
    vertices: tuple[NetVertex, ...]
    arcs: tuple[NetArc, ...]
    out_arcs: tuple[tuple[int, ...], ...]
    charges: tuple[bool, ...]
    prices: tuple[float, ...]
    source: int
    sink: int
    q_begin: float
    q_end: float
    tech: TechParams
    period_minutes: int

    def arcs_of(self, kind: str) -> list[NetArc]:
        return [a for a in self.arcs if a.kind == kind]

    @property
    def charging_vertices(self) -> list[int]:
        return [i for i, z in enumerate(self.charges) if z]

    def reprice(self, prices: Mapping[tuple[str, int], float] | None) -> "ExpandedNetwork":
        prices = prices or {}
        new = tuple(
            prices.get((v.station, v.period), 0.0) if v.kind == CHARGE else 0.0 for v in self.vertices
        )
        return replace(self, prices=new)

    def to_dot(self) -> str:
        lines = [f'digraph "{self.vehicle_id}" {{', "  rankdir=LR;"]
        for i, v in enumerate(self.vertices):
            label = f"({v.kind}, {v.station or '-'}, {v.period})"
            shape = "box" if v.kind == CHARGE else "ellipse"
            lines.append(f'  n{i} [label="{label}", shape={shape}];')
        for a in self.arcs:
            lines.append(f'  n{a.tail} -> n{a.head} [label="{a.kind} {a.range_cost:.3g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def charging_window(vehicle: Vehicle, gap: int, option: StationOption, period_minutes: int) -> range:
    """Periods t at which charging at ``option`` may happen in ``gap``.

    Travel minutes are rounded up to whole periods.
    """
    t_in = _periods(option.minutes_in, period_minutes)
    t_out = _periods(option.minutes_out, period_minutes)
    lo = vehicle.trips[gap].end + t_in
    hi = vehicle.trips[gap + 1].start - t_out - 1
    return range(lo, hi + 1)


def _periods(minutes: float, period_minutes: int) -> int:
    q, r = divmod(minutes, period_minutes)
    return int(q) + (1 if r > 1e-9 else 0)


def _applies(constraints: list[BranchConstraint], gap: int) -> list[BranchConstraint]:
    return [c for c in constraints if c.gap == gap and c.kind in ("station", "vertex")]


def build_network(
    vehicle: Vehicle,
    instance: Instance,
    opened: Iterable[str],
    prices: Mapping[tuple[str, int], float] | None = None,
    branching: Iterable[BranchConstraint] = (),
) -> ExpandedNetwork:
    """Build G_v for ``vehicle`` restricted to ``opened`` stations.

    ``prices`` maps (station, period) to the non-negative charge price of a
    charging vertex (the negated capacity dual). Branching constraints are
    realised by deleting vertices and arcs.
    """
    opened = set(opened)
    constraints = [c for c in branching if c.vehicle == vehicle.id]
    pm = instance.period_minutes
    vertices: list[NetVertex] = []
    arcs: list[tuple[int, int, str, float]] = []
    trips = vehicle.trips

    prev_end = -1
    for c, trip in enumerate(trips):
        o = len(vertices)
        vertices.append(NetVertex(TRIP_START, c, None, trip.start))
        if prev_end >= 0:
            _connect_gap(vehicle, c - 1, prev_end, o, opened, constraints, pm, vertices, arcs)
        d = len(vertices)
        vertices.append(NetVertex(TRIP_END, c, None, trip.end))
        arcs.append((o, d, ARC_TRIP, trip.energy))
        prev_end = d

    # gap vertices were appended after the start vertex of the next trip; restore topological order
    order = sorted(range(len(vertices)), key=lambda i: _topo_key(vertices[i]))
    remap = {old: new for new, old in enumerate(order)}
    vertices = [vertices[i] for i in order]
    net_arcs = tuple(sorted((NetArc(remap[t], remap[h], k, r) for t, h, k, r in arcs), key=lambda a: (a.tail, a.head)))
    out: list[list[int]] = [[] for _ in vertices]
    for k, a in enumerate(net_arcs):
        out[a.tail].append(k)
    charges = tuple(v.kind == CHARGE for v in vertices)
    prices = prices or {}
    pis = tuple(prices.get((v.station, v.period), 0.0) if v.kind == CHARGE else 0.0 for v in vertices)
    return ExpandedNetwork(
        vehicle_id=vehicle.id,
        vertices=tuple(vertices),
        arcs=net_arcs,
        out_arcs=tuple(tuple(o) for o in out),
        charges=charges,
        prices=pis,
        source=0,
        sink=len(vertices) - 1,
        q_begin=vehicle.q_begin,
        q_end=vehicle.end_requirement(instance.tech),
        tech=instance.tech,
        period_minutes=pm,
    )


def _topo_key(v: NetVertex) -> tuple:
    # trip c start < trip c end < gap c charging vertices (by period) < trip c+1 start
    if v.kind == TRIP_START:
        return (v.index, 0, 0, "")
    if v.kind == TRIP_END:
        return (v.index, 1, 0, "")
    return (v.index, 2, v.period, v.station)


def _connect_gap(vehicle, gap, end_v, start_v, opened, constraints, pm, vertices, arcs) -> None:
    g = vehicle.gaps[gap]
    rules = _applies(constraints, gap)
    enforce_stations = {c.station for c in rules if c.enforce and c.kind == "station"}
    enforce_vertices = {(c.station, c.period) for c in rules if c.enforce and c.kind == "vertex"}
    forbidden_stations = {c.station for c in rules if not c.enforce and c.kind == "station"}
    forbidden_vertices = {(c.station, c.period) for c in rules if not c.enforce and c.kind == "vertex"}
    required = enforce_stations | {s for s, _ in enforce_vertices}
    must_charge = bool(required)
    # several enforced vertices pin the visit to cover all of them
    lo = min((t for _, t in enforce_vertices), default=None)
    hi = max((t for _, t in enforce_vertices), default=None)

    if not must_charge:
        arcs.append((end_v, start_v, ARC_DIRECT, g.direct_energy))
    for opt in g.options:
        s = opt.station
        if s not in opened or s in forbidden_stations:
            continue
        if required and required != {s}:
            continue
        window = charging_window(vehicle, gap, opt, pm)
        if any(t not in window for _, t in enforce_vertices):
            continue
        prev = None
        for t in window:
            if (s, t) in forbidden_vertices:
                prev = None
                continue
            q = len(vertices)
            vertices.append(NetVertex(CHARGE, gap, s, t))
            if lo is None or t <= lo:
                arcs.append((end_v, q, ARC_TO_CHARGER, opt.energy_in))
            if hi is None or t >= hi:
                arcs.append((q, start_v, ARC_FROM_CHARGER, opt.energy_out))
            if prev is not None:
                arcs.append((prev, q, ARC_HOLD, 0.0))
            prev = q

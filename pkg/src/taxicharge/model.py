"""Domain types, the instance document format and the charging curve.

Everything here is immutable once constructed; solver layers share instances
freely across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

INSTANCE_SCHEMA = "taxicharge.instance/1"


@dataclass(frozen=True)
class TechParams:
    q_max: float = 40.0
    q_min: float = 0.0
    charge_power: float = 50.0
    consumption_rate: float = 0.16
    cc_cv_knee: float = 0.8
    depot_charge: float = 0.0

    def scaled(self, battery: float = 1.0, power: float = 1.0) -> "TechParams":
        return TechParams(
            q_max=self.q_max * battery,
            q_min=self.q_min * battery,
            charge_power=self.charge_power * power,
            consumption_rate=self.consumption_rate,
            cc_cv_knee=self.cc_cv_knee,
            depot_charge=self.depot_charge,
        )


@dataclass(frozen=True)
class Station:
    id: str
    x: float
    y: float
    cost: float
    charge_points: int = 4


@dataclass(frozen=True)
class Trip:
    pickup: tuple[float, float]
    dropoff: tuple[float, float]
    start: int
    end: int
    energy: float


@dataclass(frozen=True)
class StationOption:
    """A station reachable inside one idle gap, with detour times (minutes) and energies (kWh)."""

    station: str
    minutes_in: float
    minutes_out: float
    energy_in: float
    energy_out: float


@dataclass(frozen=True)
class Gap:
    direct_energy: float
    options: tuple[StationOption, ...] = ()


@dataclass(frozen=True)
class Vehicle:
    id: str
    trips: tuple[Trip, ...]
    gaps: tuple[Gap, ...]
    q_begin: float
    q_end: float

    def end_requirement(self, tech: TechParams) -> float:
        # depot charging lowers what must be left in the battery at shift end
        return max(0.0, self.q_end - tech.depot_charge * tech.q_max)

    @property
    def trip_energy(self) -> float:
        return sum(t.energy for t in self.trips)


@dataclass(frozen=True)
class Scenario:
    id: str
    vehicles: tuple[Vehicle, ...]
    weight: float = 1.0

    def subset(self, vehicle_ids: Iterable[str], new_id: str) -> "Scenario":
        keep = set(vehicle_ids)
        return Scenario(new_id, tuple(v for v in self.vehicles if v.id in keep), self.weight)


@dataclass(frozen=True)
class Instance:
    stations: tuple[Station, ...]
    scenarios: tuple[Scenario, ...]
    horizon_periods: int = 144
    period_minutes: int = 10
    tech: TechParams = field(default_factory=TechParams)

    def station(self, sid: str) -> Station:
        return self.station_map[sid]

    @property
    def station_map(self) -> dict[str, Station]:
        return {s.id: s for s in self.stations}

    @property
    def station_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.stations)

    def scenario(self, sid: str) -> Scenario:
        for z in self.scenarios:
            if z.id == sid:
                return z
        raise KeyError(f"unknown scenario {sid!r}")

    def periods(self, minutes: float) -> int:
        """Travel minutes to whole periods, rounded up."""
        return int(math.ceil(minutes / self.period_minutes - 1e-9))

    def with_scenarios(self, scenarios: Iterable[Scenario]) -> "Instance":
        return Instance(self.stations, tuple(scenarios), self.horizon_periods, self.period_minutes, self.tech)

    def with_tech(self, tech: TechParams) -> "Instance":
        return Instance(self.stations, self.scenarios, self.horizon_periods, self.period_minutes, tech)


@dataclass(frozen=True)
class StationConfiguration:
    opened: frozenset[str]
    total_cost: float

    @classmethod
    def of(cls, opened: Iterable[str], instance: Instance) -> "StationConfiguration":
        opened = frozenset(opened)
        return cls(opened, configuration_cost(opened, instance))

    def closed(self, instance: Instance) -> frozenset[str]:
        return frozenset(instance.station_ids) - self.opened


def configuration_cost(opened: "StationConfiguration | Iterable[str]", instance: Instance) -> float:
    if isinstance(opened, StationConfiguration):
        opened = opened.opened
    stations = instance.station_map
    for sid in opened:
        if sid not in stations:
            raise KeyError(f"unknown station {sid!r}")
    return math.fsum(stations[sid].cost for sid in sorted(opened))


def charge_amount(soc: float, tech: TechParams, duration: float = 1, period_minutes: float = 10) -> float:
    """Energy (kWh) charged in ``duration`` periods starting from ``soc``.

    Constant power up to the knee, then power falls linearly to zero at
    ``q_max``. The taper region integrates to an exponential approach, so the
    result is the exact flow of the power curve and chains consistently over
    consecutive periods.
    """
    q_max = tech.q_max
    q0 = min(max(soc, 0.0), q_max)
    q = q0
    hours = duration * period_minutes / 60.0
    power = tech.charge_power
    knee = tech.cc_cv_knee * q_max
    if q < knee:
        t_cc = (knee - q) / power
        if hours <= t_cc:
            return power * hours
        hours -= t_cc
        q = knee
    if knee >= q_max:
        return q_max - q0
    tau = (q_max - knee) / power
    q = q_max - (q_max - q) * math.exp(-hours / tau)
    return max(0.0, q - q0)


def charging_power(soc: float, tech: TechParams) -> float:
    """Instantaneous power (kW) of the CC-CV curve at ``soc``."""
    knee = tech.cc_cv_knee * tech.q_max
    if soc < knee:
        return tech.charge_power
    if soc >= tech.q_max or knee >= tech.q_max:
        return 0.0
    return tech.charge_power * (tech.q_max - soc) / (tech.q_max - knee)


# --------------------------------------------------------------------------
# document format


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class InstanceError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def _num(raw: Mapping[str, Any], key: str, path: str, out: list[Violation], default: Any = None) -> Any:
    if key not in raw:
        if default is not None:
            return default
        out.append(Violation(f"{path}.{key}", "missing field"))
        return None
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        out.append(Violation(f"{path}.{key}", "not a number"))
        return None
    if not math.isfinite(value):
        out.append(Violation(f"{path}.{key}", "not finite"))
        return None
    return value


def _point(raw: Any, path: str, out: list[Violation]) -> tuple[float, float] | None:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 2
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in raw)
    ):
        out.append(Violation(path, "expected [x, y]"))
        return None
    return (raw[0], raw[1])


def _tech(raw: Mapping[str, Any], out: list[Violation]) -> TechParams | None:
    d = TechParams()
    vals = {
        k: _num(raw, k, "tech", out, getattr(d, k))
        for k in ("q_max", "q_min", "charge_power", "consumption_rate", "cc_cv_knee", "depot_charge")
    }
    if any(v is None for v in vals.values()):
        return None
    tech = TechParams(**vals)
    if not 0 <= tech.q_min < tech.q_max:
        out.append(Violation("tech.q_min", "requires 0 <= q_min < q_max"))
    if tech.charge_power <= 0:
        out.append(Violation("tech.charge_power", "must be positive"))
    if not 0 < tech.cc_cv_knee <= 1:
        out.append(Violation("tech.cc_cv_knee", "must lie in (0, 1]"))
    if not 0 <= tech.depot_charge <= 1:
        out.append(Violation("tech.depot_charge", "must lie in [0, 1]"))
    if tech.consumption_rate < 0:
        out.append(Violation("tech.consumption_rate", "must be non-negative"))
    return tech


def validate_instance(raw: Mapping[str, Any]) -> Instance:
    """Type-check a parsed instance document.

    Raises InstanceError listing every violated invariant; nothing partial
    is returned.
    """
    out: list[Violation] = []
    if not isinstance(raw, Mapping):
        raise InstanceError([Violation("$", "document must be an object")])
    horizon = raw.get("horizon", {})
    if not isinstance(horizon, Mapping):
        out.append(Violation("horizon", "must be an object"))
        horizon = {}
    T = _num(horizon, "periods", "horizon", out)
    pm = _num(horizon, "period_minutes", "horizon", out)
    if T is not None and (int(T) != T or T <= 0):
        out.append(Violation("horizon.periods", "must be a positive integer"))
    if pm is not None and (int(pm) != pm or pm <= 0):
        out.append(Violation("horizon.period_minutes", "must be a positive integer"))
    tech_raw = raw.get("tech", {})
    tech = _tech(tech_raw if isinstance(tech_raw, Mapping) else {}, out)

    stations: list[Station] = []
    seen: set[str] = set()
    for i, s in enumerate(raw.get("stations", []) or []):
        p = f"stations[{i}]"
        if not isinstance(s, Mapping):
            out.append(Violation(p, "must be an object"))
            continue
        sid = s.get("id")
        if not isinstance(sid, str) or not sid:
            out.append(Violation(f"{p}.id", "missing station id"))
            continue
        if sid in seen:
            out.append(Violation(f"{p}.id", f"duplicate station id {sid!r}"))
        seen.add(sid)
        x = _num(s, "x", p, out)
        y = _num(s, "y", p, out)
        cost = _num(s, "cost", p, out)
        n = _num(s, "charge_points", p, out)
        if cost is not None and cost <= 0:
            out.append(Violation(f"{p}.cost", "station cost must be positive"))
        if n is not None and (int(n) != n or n < 1):
            out.append(Violation(f"{p}.charge_points", "needs at least one charge point"))
        if None not in (x, y, cost, n):
            stations.append(Station(sid, x, y, cost, int(n)))

    horizon_ok = T is not None and pm is not None
    scenarios: list[Scenario] = []
    raw_scen = raw.get("scenarios", []) or []
    if not raw_scen:
        out.append(Violation("scenarios", "at least one scenario required"))
    scen_ids: set[str] = set()
    for zi, z in enumerate(raw_scen):
        zp = f"scenarios[{zi}]"
        if not isinstance(z, Mapping):
            out.append(Violation(zp, "must be an object"))
            continue
        zid = z.get("id")
        if not isinstance(zid, str) or not zid:
            out.append(Violation(f"{zp}.id", "missing scenario id"))
            zid = f"#{zi}"
        if zid in scen_ids:
            out.append(Violation(f"{zp}.id", f"duplicate scenario id {zid!r}"))
        scen_ids.add(zid)
        weight = _num(z, "weight", zp, out, 1.0)
        vehicles: list[Vehicle] = []
        vids: set[str] = set()
        raw_veh = z.get("vehicles", []) or []
        if not raw_veh:
            out.append(Violation(f"{zp}.vehicles", "scenario has no vehicles"))
        for vi, v in enumerate(raw_veh):
            vp = f"{zp}.vehicles[{vi}]"
            veh = _vehicle(v, vp, out, seen, tech, T if horizon_ok else None, pm if horizon_ok else None)
            if veh is None:
                continue
            if veh.id in vids:
                out.append(Violation(f"{vp}.id", f"duplicate vehicle id {veh.id!r}"))
            vids.add(veh.id)
            vehicles.append(veh)
        scenarios.append(Scenario(zid, tuple(vehicles), weight if weight is not None else 1.0))

    if out or tech is None or T is None or pm is None:
        raise InstanceError(out or [Violation("$", "invalid document")])
    return Instance(tuple(stations), tuple(scenarios), int(T), int(pm), tech)


def _vehicle(v, vp, out, station_ids, tech, T, pm) -> Vehicle | None:
    if not isinstance(v, Mapping):
        out.append(Violation(vp, "must be an object"))
        return None
    vid = v.get("id")
    if not isinstance(vid, str) or not vid:
        out.append(Violation(f"{vp}.id", "missing vehicle id"))
        return None
    n_before = len(out)
    qb = _num(v, "q_begin", vp, out)
    qe = _num(v, "q_end", vp, out)
    if tech is not None:
        if qb is not None and qb > tech.q_max:
            out.append(Violation(f"{vp}.q_begin", "initial SOC exceeds capacity"))
        if qb is not None and qb < 0:
            out.append(Violation(f"{vp}.q_begin", "initial SOC negative"))
        if qe is not None and not 0 <= qe <= tech.q_max:
            out.append(Violation(f"{vp}.q_end", "end SOC requirement outside [0, q_max]"))
    trips: list[Trip] = []
    raw_trips = v.get("trips", []) or []
    if not raw_trips:
        out.append(Violation(f"{vp}.trips", "vehicle has no trips"))
    for ti, t in enumerate(raw_trips):
        tp = f"{vp}.trips[{ti}]"
        if not isinstance(t, Mapping):
            out.append(Violation(tp, "must be an object"))
            continue
        a = _point(t.get("pickup"), f"{tp}.pickup", out)
        b = _point(t.get("dropoff"), f"{tp}.dropoff", out)
        start = _num(t, "start", tp, out)
        end = _num(t, "end", tp, out)
        energy = _num(t, "energy", tp, out)
        if start is not None and end is not None:
            if int(start) != start or int(end) != end:
                out.append(Violation(tp, "trip periods must be integers"))
            elif start >= end:
                out.append(Violation(tp, "trip times reversed"))
            elif T is not None and (start < 0 or end > T):
                out.append(Violation(tp, "trip outside horizon"))
        if energy is not None and energy < 0:
            out.append(Violation(f"{tp}.energy", "negative energy"))
        if None not in (a, b, start, end, energy):
            trips.append(Trip(a, b, int(start), int(end), energy))
    for a, b in zip(trips, trips[1:]):
        if a.end > b.start:
            out.append(Violation(f"{vp}.trips", "trips overlap or are out of order"))
            break
    gaps: list[Gap] = []
    raw_gaps = v.get("gaps", []) or []
    if raw_trips and len(raw_gaps) != len(raw_trips) - 1:
        out.append(Violation(f"{vp}.gaps", "need exactly one gap between consecutive trips"))
    for gi, g in enumerate(raw_gaps):
        gp = f"{vp}.gaps[{gi}]"
        if not isinstance(g, Mapping):
            out.append(Violation(gp, "must be an object"))
            continue
        de = _num(g, "direct_energy", gp, out)
        if de is not None and de < 0:
            out.append(Violation(f"{gp}.direct_energy", "negative energy"))
        opts: list[StationOption] = []
        for oi, o in enumerate(g.get("stations", []) or []):
            op = f"{gp}.stations[{oi}]"
            if not isinstance(o, Mapping):
                out.append(Violation(op, "must be an object"))
                continue
            sid = o.get("station")
            if sid not in station_ids:
                out.append(Violation(f"{op}.station", f"unknown station {sid!r}"))
            vals = [_num(o, k, op, out) for k in ("minutes_in", "minutes_out", "energy_in", "energy_out")]
            if any(x is not None and x < 0 for x in vals):
                out.append(Violation(op, "negative travel time or energy"))
            if T is not None and pm is not None and None not in vals:
                if vals[0] > T * pm or vals[1] > T * pm:
                    out.append(Violation(op, "travel time exceeds horizon"))
            if None not in vals and sid in station_ids:
                opts.append(StationOption(sid, *vals))
        if de is not None:
            gaps.append(Gap(de, tuple(opts)))
    if len(out) > n_before:
        return None
    return Vehicle(vid, tuple(trips), tuple(gaps), qb, qe)


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    t = inst.tech
    return {
        "schema": INSTANCE_SCHEMA,
        "horizon": {"periods": inst.horizon_periods, "period_minutes": inst.period_minutes},
        "tech": {
            "q_max": t.q_max,
            "q_min": t.q_min,
            "charge_power": t.charge_power,
            "consumption_rate": t.consumption_rate,
            "cc_cv_knee": t.cc_cv_knee,
            "depot_charge": t.depot_charge,
        },
        "stations": [
            {"id": s.id, "x": s.x, "y": s.y, "cost": s.cost, "charge_points": s.charge_points}
            for s in inst.stations
        ],
        "scenarios": [
            {
                "id": z.id,
                "weight": z.weight,
                "vehicles": [_vehicle_to_dict(v) for v in z.vehicles],
            }
            for z in inst.scenarios
        ],
    }


def _vehicle_to_dict(v: Vehicle) -> dict[str, Any]:
    return {
        "id": v.id,
        "q_begin": v.q_begin,
        "q_end": v.q_end,
        "trips": [
            {
                "pickup": list(t.pickup),
                "dropoff": list(t.dropoff),
                "start": t.start,
                "end": t.end,
                "energy": t.energy,
            }
            for t in v.trips
        ],
        "gaps": [
            {
                "direct_energy": g.direct_energy,
                "stations": [
                    {
                        "station": o.station,
                        "minutes_in": o.minutes_in,
                        "minutes_out": o.minutes_out,
                        "energy_in": o.energy_in,
                        "energy_out": o.energy_out,
                    }
                    for o in g.options
                ],
            }
            for g in v.gaps
        ],
    }


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1) + "\n"


def loads_instance(text: str) -> Instance:
    return validate_instance(json.loads(text))


def load_instance(path: str | Path) -> Instance:
    return loads_instance(Path(path).read_text(encoding="utf-8"))


def save_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(inst), encoding="utf-8")

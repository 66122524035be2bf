"""Synthetic city, taxi shifts and scenario sets.

The city is a disc. Candidate charging sites are scattered over it and thinned
to ``n_stations`` by k-means. Taxi shifts are drawn per day group into a pool,
and each scenario samples its fleet from the pool of its day group in
proportion to the shift-start strata.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping, Sequence

import numpy as np
from sklearn.cluster import KMeans

from .model import Gap, Instance, Scenario, Station, StationOption, TechParams, Trip, Vehicle
from .pricing import vehicle_feasible

GENERATOR_SCHEMA = "taxicharge.generator/1"
PROVENANCE_SCHEMA = "taxicharge.provenance/1"
DAY_MINUTES = 24 * 60
DAY_GROUPS = 7

# share of shift starts per 4-hour bin; weekdays then the weekend
_WEEKDAY = (0.06, 0.24, 0.2, 0.18, 0.2, 0.12)
_WEEKEND = (0.14, 0.12, 0.18, 0.2, 0.2, 0.16)


class GeneratorError(ValueError):
    pass


def station_cost(d: float) -> float:
    """Installation cost at normalised distance ``d`` from the city centre."""
    if not 0.0 <= d <= 1.0:
        raise GeneratorError(f"normalised distance must lie in [0, 1], got {d}")
    return 30.0 * math.exp(-10.0 * d) - 10.0 * d + 20.0


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_vehicles: int = 100
    n_stations: int = 15
    n_raw_sites: int = 215
    n_scenarios: int = 28
    city_radius: float = 10.0  # km
    charge_points: int = 4
    shift_median_hours: float = 8.0
    shift_sigma: float = 0.15  # log-normal shape of the shift duration
    min_shift_hours: float = 5.0
    max_shift_hours: float = 12.0
    trips_mean: float = 10.9
    trip_km_median: float = 6.5
    trip_km_sigma: float = 0.5
    repositioning_km: float = 1.5  # spread of the next pickup around the last drop-off
    speed_kmh: float = 30.0
    detour: float = 1.3  # road distance over straight-line distance
    reach_km: float = 6.0
    max_options: int = 4
    pool_factor: int = 3
    start_bin_hours: int = 4
    horizon_periods: int = 144
    period_minutes: int = 10
    q_share: float = 0.5  # start and end SOC as a share of q_max
    tech: TechParams = field(default_factory=TechParams)
    screening_tech: TechParams | None = None  # tech used to reject shifts; defaults to ``tech``

    def validate(self) -> None:
        problems = []
        if self.n_vehicles < 1:
            problems.append("n_vehicles must be positive")
        if self.n_scenarios < 1:
            problems.append("n_scenarios must be positive")
        if not 1 <= self.n_stations <= self.n_raw_sites:
            problems.append(f"n_stations must lie in [1, n_raw_sites={self.n_raw_sites}], got {self.n_stations}")
        if self.charge_points < 1:
            problems.append("charge_points must be positive")
        if self.city_radius <= 0 or self.speed_kmh <= 0:
            problems.append("city_radius and speed_kmh must be positive")
        if not 0 < self.min_shift_hours <= self.shift_median_hours <= self.max_shift_hours < 24:
            problems.append("shift hours must satisfy 0 < min <= median <= max < 24")
        if DAY_MINUTES % (self.start_bin_hours * 60) or self.start_bin_hours < 1:
            problems.append("start_bin_hours must divide 24")
        if self.horizon_periods * self.period_minutes != DAY_MINUTES:
            problems.append("the horizon must cover exactly one day")
        if self.pool_factor < 1:
            problems.append("pool_factor must be at least 1")
        if not 0 <= self.q_share <= 1:
            problems.append("q_share must lie in [0, 1]")
        if problems:
            raise GeneratorError("; ".join(problems))

    @property
    def n_strata(self) -> int:
        return DAY_MINUTES // (self.start_bin_hours * 60)

    def to_dict(self) -> dict[str, Any]:
        body = asdict(self)
        body["schema"] = GENERATOR_SCHEMA
        return body

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "GeneratorConfig":
        raw = dict(raw)
        schema = raw.pop("schema", GENERATOR_SCHEMA)
        if schema != GENERATOR_SCHEMA:
            raise GeneratorError(f"unsupported generator schema {schema!r}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise GeneratorError(f"unknown generator fields: {', '.join(unknown)}")
        for key in ("tech", "screening_tech"):
            if isinstance(raw.get(key), Mapping):
                try:
                    raw[key] = TechParams(**raw[key])
                except TypeError as err:
                    raise GeneratorError(f"bad {key}: {err}") from None
        try:
            cfg = cls(**raw)
        except TypeError as err:
            raise GeneratorError(str(err)) from None
        cfg.validate()
        return cfg


# -- geometry -----------------------------------------------------------------


def _disc_points(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    phi = rng.random(n) * 2 * math.pi
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


def _clip(p: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.hypot(p[0], p[1]))
    return p if norm <= radius else p * (radius / norm)


def raw_sites(config: GeneratorConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 0])
    return np.round(_disc_points(rng, config.n_raw_sites, config.city_radius), 4)


def select_station_sites(
    sites: np.ndarray,
    k: int,
    seed: int = 0,
    radius: float | None = None,
    charge_points: int = 4,
) -> list[Station]:
    """Cluster ``sites`` into ``k`` groups and keep the site nearest each centroid.

    Centroids are matched in cluster order to the nearest site not taken yet.
    Costs follow the distance from the origin, normalised by ``radius``.
    """
    sites = np.asarray(sites, dtype=float)
    if not 1 <= k <= len(sites):
        raise GeneratorError(f"cannot pick {k} stations from {len(sites)} candidate sites")
    km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(sites)
    taken: list[int] = []
    for c in km.cluster_centers_:
        d = np.hypot(*(sites - c).T)
        d[taken] = np.inf
        taken.append(int(np.argmin(d)))
    radius = radius or float(np.max(np.hypot(*sites.T))) or 1.0
    out = []
    for i in sorted(taken):
        x, y = float(sites[i, 0]), float(sites[i, 1])
        d = min(1.0, math.hypot(x, y) / radius)
        out.append(Station(f"s{i:03d}", x, y, round(station_cost(d), 4), charge_points))
    return out


# -- shifts --------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftTrip:
    pickup: tuple[float, float]
    dropoff: tuple[float, float]
    start: float  # minutes from shift day start, may run past midnight
    end: float
    km: float


@dataclass(frozen=True)
class Shift:
    id: str
    day_group: int
    stratum: int
    start: float  # minutes
    hours: float
    trips: tuple[ShiftTrip, ...]


def _start_weights(group: int, n_strata: int) -> np.ndarray:
    base = np.array(_WEEKEND if group >= 5 else _WEEKDAY)
    if n_strata != len(base):
        base = np.interp(np.linspace(0, len(base) - 1, n_strata), np.arange(len(base)), base)
    # each weekday leans a little differently
    base = base * (1 + 0.05 * np.cos(np.arange(n_strata) + group))
    return base / base.sum()


def _road_km(a, b, config: GeneratorConfig) -> float:
    return config.detour * math.hypot(a[0] - b[0], a[1] - b[1])


def _draw_shift(rng: np.random.Generator, sid: str, group: int, config: GeneratorConfig) -> Shift | None:
    bin_minutes = config.start_bin_hours * 60
    stratum = int(rng.choice(config.n_strata, p=_start_weights(group, config.n_strata)))
    start = stratum * bin_minutes + float(rng.random()) * bin_minutes
    hours = float(config.shift_median_hours * math.exp(config.shift_sigma * rng.standard_normal()))
    if hours < config.min_shift_hours:
        return None  # short shifts are not part of the multi-shift fleet
    hours = min(hours, config.max_shift_hours)
    n_trips = 1 + int(rng.poisson(max(0.0, config.trips_mean - 1) * hours / config.shift_median_hours))

    legs = []
    pickup = _disc_points(rng, 1, config.city_radius)[0]
    for _ in range(n_trips):
        km = float(config.trip_km_median * math.exp(config.trip_km_sigma * rng.standard_normal()))
        phi = float(rng.random()) * 2 * math.pi
        dropoff = _clip(pickup + km / config.detour * np.array([math.cos(phi), math.sin(phi)]), config.city_radius)
        legs.append((tuple(np.round(pickup, 4)), tuple(np.round(dropoff, 4))))
        pickup = _clip(dropoff + rng.normal(0.0, config.repositioning_km, 2), config.city_radius)

    minutes = lambda km: km / config.speed_kmh * 60.0
    drive = [minutes(_road_km(a, b, config)) + 2.0 for a, b in legs]
    empty = [minutes(_road_km(legs[c][1], legs[c + 1][0], config)) for c in range(len(legs) - 1)]
    # drop trips from the end until the shift has room for them
    while len(legs) > 1 and sum(drive) + sum(empty) > hours * 60:
        legs.pop()
        drive.pop()
        empty.pop()
    idle = hours * 60 - sum(drive) - sum(empty)
    if idle < 0:
        return None
    parts = rng.dirichlet(np.ones(len(legs) + 1)) * idle
    t = start + parts[0]
    trips = []
    for c, (a, b) in enumerate(legs):
        trips.append(ShiftTrip(a, b, round(t, 3), round(t + drive[c], 3), round(_road_km(a, b, config), 4)))
        t += drive[c] + parts[c + 1] + (empty[c] if c < len(empty) else 0.0)
    return Shift(sid, group, stratum, round(start, 3), round(hours, 4), tuple(trips))


def shift_pool(config: GeneratorConfig, group: int, seed: int | None = None) -> list[Shift]:
    """``pool_factor * n_vehicles`` shifts of one day group."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1, group])
    pool: list[Shift] = []
    n = 0
    while len(pool) < config.pool_factor * config.n_vehicles:
        s = _draw_shift(rng, f"d{group}-{n:05d}", group, config)
        n += 1
        if s is not None:
            pool.append(s)
    return pool


def _quotas(sizes: Sequence[int], n: int) -> list[int]:
    """Largest-remainder split of ``n`` proportional to ``sizes``."""
    total = sum(sizes)
    if total == 0:
        raise GeneratorError("empty shift pool")
    raw = [n * s / total for s in sizes]
    out = [math.floor(r) for r in raw]
    order = sorted(range(len(sizes)), key=lambda i: (-(raw[i] - out[i]), i))
    for i in order[: n - sum(out)]:
        out[i] += 1
    return out


def sample_shifts(
    pool: Sequence[Shift],
    n: int,
    rng: np.random.Generator,
    accept=lambda shift: True,
) -> tuple[list[Shift], list[str]]:
    """Proportional stratified sample of ``n`` shifts.

    Rejected shifts are replaced from the same stratum. Returns the sample in
    start order and the ids of the rejected shifts.
    """
    strata: dict[int, list[Shift]] = {}
    for s in pool:
        strata.setdefault(s.stratum, []).append(s)
    keys = sorted(strata)
    quota = _quotas([len(strata[k]) for k in keys], n)
    chosen: list[Shift] = []
    rejected: list[str] = []
    for k, q in zip(keys, quota):
        if q == 0:
            continue
        members = strata[k]
        order = rng.permutation(len(members))
        got = 0
        for i in order:
            if got == q:
                break
            s = members[int(i)]
            if accept(s):
                chosen.append(s)
                got += 1
            else:
                rejected.append(s.id)
        if got < q:
            raise GeneratorError(f"start stratum {k} has too few usable shifts ({got} of {q})")
    chosen.sort(key=lambda s: (s.start, s.id))
    return chosen, rejected


# -- vehicles ------------------------------------------------------------------


def _map_into_day(trips: Sequence[ShiftTrip]) -> list[ShiftTrip]:
    out = []
    for t in trips:
        if t.start >= DAY_MINUTES:
            out.append(replace(t, start=t.start - DAY_MINUTES, end=t.end - DAY_MINUTES))
        elif t.end > DAY_MINUTES:
            # a trip across midnight moves to the start of the day
            out.append(replace(t, start=0.0, end=t.end - t.start))
        else:
            out.append(t)
    return sorted(out, key=lambda t: t.start)


def build_vehicle(shift: Shift, stations: Sequence[Station], config: GeneratorConfig, tech: TechParams | None = None) -> Vehicle:
    """Turn a shift into a vehicle with periods, energies and reachable stations."""
    tech = tech or config.tech
    pm = config.period_minutes
    trips: list[Trip] = []
    last_end = 0
    for t in _map_into_day(shift.trips):
        a = max(last_end, int(math.floor(t.start / pm)))
        b = max(a + 1, int(math.ceil(t.end / pm)))
        if b > config.horizon_periods:
            break
        trips.append(Trip(t.pickup, t.dropoff, a, b, round(t.km * tech.consumption_rate, 4)))
        last_end = b
    gaps = []
    for c in range(len(trips) - 1):
        here, there = trips[c].dropoff, trips[c + 1].pickup
        direct = round(_road_km(here, there, config) * tech.consumption_rate, 4)
        near = []
        for s in stations:
            km_in = _road_km(here, (s.x, s.y), config)
            if km_in <= config.reach_km:
                near.append((km_in, s.id, s))
        options = []
        for km_in, _, s in sorted(near)[: config.max_options]:
            km_out = _road_km((s.x, s.y), there, config)
            options.append(
                StationOption(
                    s.id,
                    round(km_in / config.speed_kmh * 60, 3),
                    round(km_out / config.speed_kmh * 60, 3),
                    round(km_in * tech.consumption_rate, 4),
                    round(km_out * tech.consumption_rate, 4),
                )
            )
        gaps.append(Gap(direct, tuple(options)))
    q = round(config.q_share * tech.q_max, 4)
    return Vehicle(shift.id, tuple(trips), tuple(gaps), q, q)


# -- instances -----------------------------------------------------------------


@dataclass
class Provenance:
    seed: int
    demand_seed: int
    config: dict[str, Any]
    rejected: dict[str, list[str]] = field(default_factory=dict)  # per scenario, shifts replaced for infeasibility
    removed: dict[str, list[str]] = field(default_factory=dict)  # per scenario, vehicles dropped by a tech change

    def to_dict(self) -> dict[str, Any]:
        body = asdict(self)
        body["schema"] = PROVENANCE_SCHEMA
        return body


def generate_stations(config: GeneratorConfig) -> list[Station]:
    return select_station_sites(raw_sites(config), config.n_stations, config.seed, config.city_radius, config.charge_points)


def generate_instance(
    config: GeneratorConfig,
    demand_seed: int | None = None,
    stations: Sequence[Station] | None = None,
) -> tuple[Instance, Provenance]:
    """Stations and shift pools from ``config.seed``, scenario draws from ``demand_seed``.

    Different demand seeds sample different scenarios from the same shift
    population, which is how out-of-sample sets are built.

    Every vehicle can finish its shift on its own with all stations open
    (under ``screening_tech`` if set); shifts that cannot are replaced.
    """
    config.validate()
    demand_seed = config.seed if demand_seed is None else demand_seed
    stations = list(stations) if stations is not None else generate_stations(config)
    tech = config.tech
    screen = config.screening_tech or tech
    probe = Instance(tuple(stations), (), config.horizon_periods, config.period_minutes, screen)
    opened = frozenset(s.id for s in stations)
    pools: dict[int, list[Shift]] = {}
    verdict: dict[str, bool] = {}

    def usable(shift: Shift) -> bool:
        if shift.id not in verdict:
            v = build_vehicle(shift, stations, config, screen)
            verdict[shift.id] = len(v.trips) > 0 and vehicle_feasible(v, probe, opened)
        return verdict[shift.id]

    scenarios = []
    prov = Provenance(config.seed, demand_seed, config.to_dict())
    for z in range(config.n_scenarios):
        group = z % DAY_GROUPS
        if group not in pools:
            pools[group] = shift_pool(config, group, config.seed)
        rng = np.random.default_rng([demand_seed, 2, z])
        chosen, rejected = sample_shifts(pools[group], config.n_vehicles, rng, usable)
        sid = f"z{z:02d}"
        scenarios.append(Scenario(sid, tuple(build_vehicle(s, stations, config, tech) for s in chosen)))
        prov.rejected[sid] = rejected
    inst = Instance(tuple(stations), tuple(scenarios), config.horizon_periods, config.period_minutes, tech)
    return inst, prov


def out_of_sample_sets(config: GeneratorConfig, n_sets: int = 6, stations: Sequence[Station] | None = None) -> list[tuple[Instance, Provenance]]:
    """Fresh scenario sets over the same stations, one demand seed each."""
    stations = list(stations) if stations is not None else generate_stations(config)
    out = []
    for j in range(n_sets):
        demand_seed = int(np.random.SeedSequence([config.seed, 3, j]).generate_state(1)[0])
        out.append(generate_instance(config, demand_seed, stations))
    return out


def derive_parameter_instance(master: Instance, tech: TechParams) -> tuple[Instance, list[tuple[str, str]]]:
    """Keep the vehicles that can still finish their shift alone under ``tech``.

    Start and end SOC are rescaled to the new battery size. Returns the derived
    instance and the removed (scenario, vehicle) pairs, which count as unserved
    when evaluating the derived instance.
    """
    probe = master.with_tech(tech)
    opened = frozenset(probe.station_ids)
    # start and end SOC keep their share of the battery
    scale = tech.q_max / master.tech.q_max
    removed: list[tuple[str, str]] = []
    scenarios = []
    for z in probe.scenarios:
        keep = []
        for v in z.vehicles:
            if scale != 1:
                v = replace(v, q_begin=round(v.q_begin * scale, 4), q_end=round(v.q_end * scale, 4))
            if vehicle_feasible(v, probe, opened):
                keep.append(v)
            else:
                removed.append((z.id, v.id))
        scenarios.append(Scenario(z.id, tuple(keep), z.weight))
    return probe.with_scenarios(scenarios), removed

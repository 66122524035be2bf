"""Station selection by cover cuts.

The first-stage problem opens the cheapest set of stations that hits every
cover in the pool. A cover is a set of stations whose joint closure was shown
to be operationally infeasible, so at least one of them must be open.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .kernel import GE, Kernel, LinearProgram, default_kernel
from .model import Instance, Scenario, Station, StationConfiguration
from .operational import MAX_COUNT, PROVE, FeasibilityResult, OperationalOptions, check_feasibility

CUTS_SCHEMA = "taxicharge.cuts/1"


class PreconditionError(ValueError):
    """Raised when even opening every station does not meet the requirement."""


@dataclass(frozen=True)
class CoverCut:
    stations: frozenset[str]

    def violated_by(self, opened: Iterable[str]) -> bool:
        return not (self.stations & set(opened))


class CutPool:
    """Cover cuts with no cover a superset of another."""

    def __init__(self, covers: Iterable[Iterable[str]] = ()) -> None:
        self._covers: list[frozenset[str]] = []
        for c in covers:
            self.add(c)

    def add(self, cover: Iterable[str]) -> bool:
        cover = frozenset(cover)
        if not cover:
            raise ValueError("a cover must not be empty")
        if any(c <= cover for c in self._covers):
            return False
        self._covers = [c for c in self._covers if not cover <= c]
        self._covers.append(cover)
        return True

    @property
    def covers(self) -> list[frozenset[str]]:
        return list(self._covers)

    def violated_by(self, opened: Iterable[str]) -> list[frozenset[str]]:
        opened = set(opened)
        return [c for c in self._covers if not c & opened]

    def __len__(self) -> int:
        return len(self._covers)

    def __iter__(self):
        return iter(self._covers)

    def to_json(self) -> str:
        body = {"schema": CUTS_SCHEMA, "covers": [sorted(c) for c in self._covers]}
        return json.dumps(body, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CutPool":
        raw = json.loads(text)
        if raw.get("schema") != CUTS_SCHEMA:
            raise ValueError(f"not a cut pool file: schema {raw.get('schema')!r}")
        return cls(raw["covers"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CutPool":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def solve_ccp(stations: Sequence[Station], cuts: Iterable[Iterable[str]], kernel: Kernel | None = None) -> StationConfiguration:
    """Cheapest station set that opens at least one station of every cover."""
    kernel = kernel or default_kernel()
    covers = [frozenset(c) for c in cuts]
    if not covers:
        return StationConfiguration(frozenset(), 0.0)
    if any(not c for c in covers):
        raise ValueError("empty cover makes the station problem infeasible")
    used = sorted({s for c in covers for s in c}, key=[st.id for st in stations].index)
    cost = {st.id: st.cost for st in stations}
    lp = LinearProgram()
    col = {s: lp.add_variable(cost[s], 0.0, 1.0, s) for s in used}
    for k, c in enumerate(covers):
        lp.add_constraint({col[s]: 1.0 for s in c}, GE, 1.0, f"cover{k}")
    res = kernel.solve_binary(lp)
    if not res.optimal:
        raise RuntimeError(f"station problem ended with status {res.status}")
    opened = frozenset(s for s in used if res.x[col[s]] > 0.5)
    return StationConfiguration(opened, float(math.fsum(cost[s] for s in sorted(opened))))


class ScenarioOracle:
    """Operational feasibility checks with result caching.

    Feasibility is monotone in the opened set: opening more stations never
    hurts. Prove-mode answers are therefore reused for supersets of feasible
    sets and subsets of infeasible ones.
    """

    def __init__(self, instance: Instance, options: OperationalOptions | None = None) -> None:
        self.instance = instance
        self.options = options or OperationalOptions()
        self._feasible: dict[str, list[frozenset[str]]] = {}
        self._infeasible: dict[str, list[frozenset[str]]] = {}
        self._counts: dict[tuple[str, frozenset[str]], FeasibilityResult] = {}
        self.evaluations = 0
        self.cache_hits = 0

    def feasible(self, scenario: Scenario, opened: Iterable[str]) -> bool:
        opened = frozenset(opened)
        yes = self._feasible.setdefault(scenario.id, [])
        no = self._infeasible.setdefault(scenario.id, [])
        if any(f <= opened for f in yes):
            self.cache_hits += 1
            return True
        if any(opened <= f for f in no):
            self.cache_hits += 1
            return False
        self.evaluations += 1
        ok = check_feasibility(self.instance, scenario, opened, PROVE, options=self.options).feasible
        (yes if ok else no).append(opened)
        return ok

    def count(self, scenario: Scenario, opened: Iterable[str]) -> FeasibilityResult:
        """Exact largest number of servable vehicles."""
        key = (scenario.id, frozenset(opened))
        hit = self._counts.get(key)
        if hit is not None:
            self.cache_hits += 1
            return hit
        self.evaluations += 1
        res = check_feasibility(self.instance, scenario, key[1], MAX_COUNT, options=self.options)
        self._counts[key] = res
        if res.exact:
            ids = self._feasible if res.feasible else self._infeasible
            ids.setdefault(scenario.id, []).append(key[1])
        return res


def count_infeasible(
    oracle: ScenarioOracle, scenarios: Sequence[Scenario], opened: Iterable[str], limit: int
) -> tuple[int, list[str]]:
    """Infeasible scenarios under ``opened``, stopping once ``limit`` + 1 are found."""
    opened = frozenset(opened)
    bad: list[str] = []
    for z in scenarios:
        if not oracle.feasible(z, opened):
            bad.append(z.id)
            if len(bad) > limit:
                break
    return len(bad), bad


def strengthen_cover(
    cover: Iterable[str],
    closing_infeasible: Callable[[frozenset[str]], bool],
    rng: random.Random,
    budget: int | None = None,
    patience: int = 3,
) -> list[frozenset[str]]:
    """Search random subsets of ``cover`` that are still covers.

    Each descent starts from the full cover and keeps shrinking while the
    sampled subset stays infeasible to close. After a feasible sample the
    descent retries from the last verified cover, and after ``patience``
    consecutive failures it restarts from the full cover. ``budget`` caps the
    number of sampled subsets. Returns the inclusion-minimal covers found.
    """
    full = frozenset(cover)
    order = sorted(full)
    budget = max(16, 2 * len(full)) if budget is None else budget
    found: list[frozenset[str]] = [full]
    tried: dict[frozenset[str], bool] = {}
    draws = 0
    while draws < budget:
        current = full
        misses = 0
        while len(current) > 1 and draws < budget and misses < patience:
            size = rng.randint(math.ceil(len(current) / 2), len(current) - 1)
            pool = [s for s in order if s in current]
            candidate = frozenset(rng.sample(pool, size))
            draws += 1
            ok = tried.get(candidate)
            if ok is None:
                ok = closing_infeasible(candidate)
                tried[candidate] = ok
            if ok:
                found.append(candidate)
                current = candidate
                misses = 0
            else:
                misses += 1
        if len(full) <= 1:
            break
    return prune_covers(found)


def prune_covers(covers: Iterable[frozenset[str]]) -> list[frozenset[str]]:
    unique = sorted(set(covers), key=lambda c: (len(c), sorted(c)))
    keep: list[frozenset[str]] = []
    for c in unique:
        if not any(k <= c for k in keep):
            keep.append(c)
    return keep


@dataclass
class IterationRecord:
    opened: frozenset[str]
    cost: float
    infeasible: list[str]
    closed: frozenset[str] = frozenset()
    new_cuts: list[frozenset[str]] = field(default_factory=list)


@dataclass
class CuttingPlaneResult:
    config: StationConfiguration
    cuts: CutPool
    iterations: list[IterationRecord]
    evaluations: int


def cutting_plane(
    instance: Instance,
    scenarios: Sequence[Scenario],
    max_infeasible: int = 0,
    oracle: ScenarioOracle | None = None,
    rng: random.Random | None = None,
    cuts: CutPool | None = None,
    strengthen: bool = True,
    budget: int | None = None,
    kernel: Kernel | None = None,
    check_all_open: bool = True,
) -> CuttingPlaneResult:
    """Cheapest configuration with at most ``max_infeasible`` infeasible scenarios.

    With ``max_infeasible=0`` every scenario must be fully served.
    """
    oracle = oracle or ScenarioOracle(instance)
    rng = rng or random.Random(0)
    pool = cuts if cuts is not None else CutPool()
    stations = instance.stations
    all_ids = frozenset(instance.station_ids)
    scenarios = list(scenarios)
    if check_all_open:
        n_bad, bad = count_infeasible(oracle, scenarios, all_ids, max_infeasible)
        if n_bad > max_infeasible:
            raise PreconditionError(
                f"no feasible configuration even with all stations open (infeasible: {', '.join(bad)})"
            )
    start = oracle.evaluations
    history: list[IterationRecord] = []
    # scenarios that failed recently are checked first; the count does not depend on the order
    order = list(scenarios)
    while True:
        config = solve_ccp(stations, pool, kernel)
        n_bad, bad = count_infeasible(oracle, order, config.opened, max_infeasible)
        record = IterationRecord(config.opened, config.total_cost, bad)
        history.append(record)
        if n_bad <= max_infeasible:
            return CuttingPlaneResult(config, pool, history, oracle.evaluations - start)
        order = [z for z in order if z.id in bad] + [z for z in order if z.id not in bad]
        closed = all_ids - config.opened
        record.closed = closed

        def closing_infeasible(cover: frozenset[str]) -> bool:
            n, _ = count_infeasible(oracle, order, all_ids - cover, max_infeasible)
            return n > max_infeasible

        new = strengthen_cover(closed, closing_infeasible, rng, budget) if strengthen else [closed]
        for c in new:
            pool.add(c)
        record.new_cuts = new


def deterministic_solve(
    instance: Instance,
    scenario: Scenario | str,
    oracle: ScenarioOracle | None = None,
    rng: random.Random | None = None,
    **kwargs,
) -> CuttingPlaneResult:
    """Cheapest configuration that serves every vehicle of one scenario."""
    z = instance.scenario(scenario) if isinstance(scenario, str) else scenario
    return cutting_plane(instance, [z], 0, oracle, rng, **kwargs)

"""Robust station planning over a set of demand scenarios.

Four planning modes share the cover-cut machinery:

* FSA serves every vehicle in every scenario.
* aSA tolerates up to floor((1 - alpha)|Z|) scenarios that are not fully served.
* aVA lets every scenario drop up to floor((1 - alpha)|V_z|) vehicles. It grows a
  set of fully served (possibly partial) scenarios by adversarial sampling.
* ISA solves each scenario on its own and picks the cheapest or the median one.
"""

from __future__ import annotations

import math
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .model import Instance, Scenario, StationConfiguration
from .operational import MAX_COUNT, OperationalOptions, check_feasibility
from .strategic import CutPool, CuttingPlaneResult, ScenarioOracle, cutting_plane, deterministic_solve

FSA = "fsa"
ASA = "asa"
AVA = "ava"
ISA = "isa"
DET = "det"
MODES = (FSA, ASA, AVA, ISA, DET)
LOWEST = "l"
MEDIAN = "m"

_EPS = 1e-9


def allowed_failures(alpha: float, n: int) -> int:
    """How many of ``n`` items may fail at level ``alpha`` (rounded down)."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return max(0, math.floor((1 - alpha) * n + _EPS))


def _percent(alpha: float) -> str:
    pct = round(alpha * 100, 6)
    return str(int(pct)) if pct == int(pct) else f"{pct:g}"


def run_name(mode: str, alpha: float = 1.0, seed_strategy: str = LOWEST, scenario: str | None = None) -> str:
    """Short label of a run, e.g. ``95-VA-L`` or ``ISA-M``."""
    if mode == FSA:
        return "FSA"
    if mode == ASA:
        return f"{_percent(alpha)}-SA"
    if mode == AVA:
        return f"{_percent(alpha)}-VA-{seed_strategy.upper()}"
    if mode == ISA:
        return f"ISA-{seed_strategy.upper()}"
    if mode == DET:
        return f"DET-{scenario}"
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class RobustConfig:
    mode: str
    alpha: float = 1.0
    seed_strategy: str = LOWEST
    seed: int = 0
    scenario: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.mode in (FSA, ISA, DET) and self.alpha != 1:
            raise ValueError(f"mode {self.mode} takes no alpha")
        if self.seed_strategy not in (LOWEST, MEDIAN):
            raise ValueError(f"seed strategy must be 'l' or 'm', got {self.seed_strategy!r}")
        if self.mode == DET and self.scenario is None:
            raise ValueError("mode det needs a scenario id")

    @property
    def name(self) -> str:
        return run_name(self.mode, self.alpha, self.seed_strategy, self.scenario)


# -- parallel helpers -----------------------------------------------------------


class Workers:
    """Order-preserving map over a process pool, or in-process for one job."""

    def __init__(self, jobs: int = 1) -> None:
        self.jobs = max(1, int(jobs))
        self._pool: ProcessPoolExecutor | None = None

    def map(self, fn: Callable, items: Iterable) -> list:
        items = list(items)
        if self.jobs == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.jobs)
        return list(self._pool.map(fn, items))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "Workers":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _count_job(args) -> tuple[int, int, bool, tuple[str, ...]]:
    instance, scenario, opened, options = args
    res = check_feasibility(instance, scenario, opened, MAX_COUNT, options=options)
    return res.n_feasible, res.n_vehicles, res.exact, res.infeasible_vehicles


def _deterministic_job(args) -> CuttingPlaneResult:
    instance, scenario, seed, options = args
    oracle = ScenarioOracle(instance, options)
    return deterministic_solve(instance, scenario, oracle, random.Random(f"{seed}:{scenario.id}"))


# -- feasibility metrics --------------------------------------------------------


@dataclass(frozen=True)
class ScenarioCount:
    scenario: str
    n_feasible: int
    n_vehicles: int
    exact: bool = True
    infeasible_vehicles: tuple[str, ...] = ()

    @property
    def ratio(self) -> float:
        return self.n_feasible / self.n_vehicles if self.n_vehicles else 1.0

    @property
    def n_infeasible(self) -> int:
        return self.n_vehicles - self.n_feasible


@dataclass(frozen=True)
class FeasibilityReport:
    counts: tuple[ScenarioCount, ...]

    @property
    def mean_vehicle_feasibility(self) -> float:
        return sum(c.ratio for c in self.counts) / len(self.counts) if self.counts else 1.0

    @property
    def min_vehicle_feasibility(self) -> float:
        return min((c.ratio for c in self.counts), default=1.0)

    @property
    def scenario_feasibility(self) -> float:
        if not self.counts:
            return 1.0
        return sum(c.n_feasible == c.n_vehicles for c in self.counts) / len(self.counts)

    @property
    def exact(self) -> bool:
        return all(c.exact for c in self.counts)

    def meets_vehicle_level(self, alpha: float) -> bool:
        """Every scenario drops at most floor((1 - alpha)|V_z|) vehicles."""
        return all(c.n_infeasible <= allowed_failures(alpha, c.n_vehicles) for c in self.counts)

    def meets_scenario_level(self, alpha: float) -> bool:
        bad = sum(c.n_feasible < c.n_vehicles for c in self.counts)
        return bad <= allowed_failures(alpha, len(self.counts))

    def to_dict(self) -> dict:
        return {
            "mean_vehicle_feasibility": self.mean_vehicle_feasibility,
            "min_vehicle_feasibility": self.min_vehicle_feasibility,
            "scenario_feasibility": self.scenario_feasibility,
            "exact": self.exact,
            "scenarios": [
                {
                    "id": c.scenario,
                    "feasible": c.n_feasible,
                    "vehicles": c.n_vehicles,
                    "exact": c.exact,
                    "infeasible_vehicles": list(c.infeasible_vehicles),
                }
                for c in self.counts
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FeasibilityReport":
        return cls(
            tuple(
                ScenarioCount(c["id"], c["feasible"], c["vehicles"], c["exact"], tuple(c["infeasible_vehicles"]))
                for c in raw["scenarios"]
            )
        )


def _sweep(
    instance: Instance,
    scenarios: Sequence[Scenario],
    opened: frozenset[str],
    options: OperationalOptions,
    workers: Workers | None,
) -> list[ScenarioCount]:
    jobs = [(instance, z, opened, options) for z in scenarios]
    raw = (workers or Workers(1)).map(_count_job, jobs)
    return [ScenarioCount(z.id, *r) for z, r in zip(scenarios, raw)]


def evaluate_feasibility(
    instance: Instance,
    config: StationConfiguration | Iterable[str],
    scenarios: Sequence[Scenario] | None = None,
    options: OperationalOptions | None = None,
    workers: Workers | None = None,
) -> FeasibilityReport:
    """Largest servable vehicle count of each scenario under ``config``."""
    opened = config.opened if isinstance(config, StationConfiguration) else frozenset(config)
    unknown = opened - set(instance.station_ids)
    if unknown:
        raise KeyError(f"configuration opens unknown stations: {', '.join(sorted(unknown))}")
    scenarios = instance.scenarios if scenarios is None else scenarios
    return FeasibilityReport(tuple(_sweep(instance, scenarios, opened, options or OperationalOptions(), workers)))


# -- modes ----------------------------------------------------------------------


@dataclass
class IndependentSolution:
    scenario: str
    config: StationConfiguration
    cuts: CutPool


@dataclass
class AdversarialStep:
    opened: frozenset[str]
    cost: float
    violated: list[str]
    chosen: str | None = None
    partial: tuple[str, ...] = ()
    escalated: str | None = None  # "infeasible" or "full" when a partial scenario was not enough


@dataclass
class RobustResult:
    name: str
    config: StationConfiguration
    cuts: CutPool
    omega: list[str] = field(default_factory=list)
    ranking: list[IndependentSolution] = field(default_factory=list)
    steps: list[AdversarialStep] = field(default_factory=list)
    evaluations: int = 0
    timings: dict[str, float] = field(default_factory=dict)


def solve_deterministic(
    instance: Instance,
    scenario: str,
    seed: int = 0,
    options: OperationalOptions | None = None,
) -> RobustResult:
    t0 = time.perf_counter()
    z = instance.scenario(scenario)
    res = _deterministic_job((instance, z, seed, options or OperationalOptions()))
    return RobustResult(
        run_name(DET, scenario=scenario), res.config, res.cuts, [z.id], evaluations=res.evaluations,
        timings={"solve": time.perf_counter() - t0},
    )


def solve_fsa(
    instance: Instance,
    seed: int = 0,
    options: OperationalOptions | None = None,
    scenarios: Sequence[Scenario] | None = None,
) -> RobustResult:
    """Cheapest configuration serving every vehicle of every scenario."""
    t0 = time.perf_counter()
    scenarios = list(instance.scenarios if scenarios is None else scenarios)
    oracle = ScenarioOracle(instance, options)
    res = cutting_plane(instance, scenarios, 0, oracle, random.Random(f"{seed}:cuts"))
    return RobustResult(
        "FSA", res.config, res.cuts, [z.id for z in scenarios], evaluations=res.evaluations,
        timings={"solve": time.perf_counter() - t0},
    )


def solve_asa(
    instance: Instance,
    alpha: float,
    seed: int = 0,
    options: OperationalOptions | None = None,
) -> RobustResult:
    """Cheapest configuration fully serving all but floor((1 - alpha)|Z|) scenarios."""
    t0 = time.perf_counter()
    scenarios = list(instance.scenarios)
    k = allowed_failures(alpha, len(scenarios))
    oracle = ScenarioOracle(instance, options)
    res = cutting_plane(instance, scenarios, k, oracle, random.Random(f"{seed}:cuts"))
    return RobustResult(
        run_name(ASA, alpha), res.config, res.cuts, [z.id for z in scenarios], evaluations=res.evaluations,
        timings={"solve": time.perf_counter() - t0},
    )


def rank_scenarios(
    instance: Instance,
    seed: int = 0,
    options: OperationalOptions | None = None,
    workers: Workers | None = None,
) -> list[IndependentSolution]:
    """Deterministic solution of every scenario, cheapest first (ties by scenario order)."""
    options = options or OperationalOptions()
    jobs = [(instance, z, seed, options) for z in instance.scenarios]
    results = (workers or Workers(1)).map(_deterministic_job, jobs)
    ranked = sorted(range(len(jobs)), key=lambda i: (results[i].config.total_cost, i))
    return [IndependentSolution(instance.scenarios[i].id, results[i].config, results[i].cuts) for i in ranked]


def pick_seed(ranking: Sequence[IndependentSolution], strategy: str) -> IndependentSolution:
    if not ranking:
        raise ValueError("no scenarios to pick from")
    if strategy == LOWEST:
        return ranking[0]
    if strategy == MEDIAN:
        return ranking[(len(ranking) - 1) // 2]
    raise ValueError(f"seed strategy must be 'l' or 'm', got {strategy!r}")


def solve_isa(
    instance: Instance,
    seed_strategy: str = LOWEST,
    seed: int = 0,
    options: OperationalOptions | None = None,
    workers: Workers | None = None,
    ranking: Sequence[IndependentSolution] | None = None,
) -> RobustResult:
    """Configuration of the cheapest or median independently solved scenario."""
    t0 = time.perf_counter()
    ranking = list(ranking) if ranking is not None else rank_scenarios(instance, seed, options, workers)
    chosen = pick_seed(ranking, seed_strategy)
    return RobustResult(
        run_name(ISA, seed_strategy=seed_strategy), chosen.config, chosen.cuts, [chosen.scenario], ranking,
        timings={"ranking": time.perf_counter() - t0},
    )


def solve_ava(
    instance: Instance,
    alpha: float,
    seed_strategy: str = LOWEST,
    seed: int = 0,
    options: OperationalOptions | None = None,
    workers: Workers | None = None,
    ranking: Sequence[IndependentSolution] | None = None,
) -> RobustResult:
    """Adversarial vehicle-level planning.

    The fully served set starts from the seed scenario. Each round solves it
    with cover cuts, counts servable vehicles in every other scenario and, if
    some scenario drops too many, adds a partial copy of the least violated one
    holding just enough of its unserved vehicles.
    """
    options = options or OperationalOptions()
    t0 = time.perf_counter()
    ranking = list(ranking) if ranking is not None else rank_scenarios(instance, seed, options, workers)
    t_rank = time.perf_counter() - t0
    start = pick_seed(ranking, seed_strategy)
    cut_rng = random.Random(f"{seed}:cuts")
    pick_rng = random.Random(f"{seed}:partial")
    oracle = ScenarioOracle(instance, options)
    pool = CutPool(start.cuts.covers)
    omega = [instance.scenario(start.scenario)]
    phi = [z for z in instance.scenarios if z.id != start.scenario]
    budget = {z.id: allowed_failures(alpha, len(z.vehicles)) for z in phi}
    steps: list[AdversarialStep] = []
    evaluations = 0
    t_sweep = 0.0
    while True:
        inner = cutting_plane(instance, omega, 0, oracle, cut_rng, cuts=pool)
        evaluations += inner.evaluations
        pool = inner.cuts
        opened = inner.config.opened
        t1 = time.perf_counter()
        counts = _sweep(instance, phi, opened, options, workers)
        t_sweep += time.perf_counter() - t1
        evaluations += len(phi)
        over = [(c.n_infeasible - budget[c.scenario], k, c) for k, c in enumerate(counts) if c.n_infeasible > budget[c.scenario]]
        step = AdversarialStep(opened, inner.config.total_cost, [c.scenario for _, _, c in over])
        steps.append(step)
        if not over:
            break
        excess, _, worst = min(over, key=lambda t: (t[0], t[1]))
        target = instance.scenario(worst.scenario)
        tag = f"{worst.scenario}#{len(omega)}"
        if alpha >= 1:
            partial = target.subset([v.id for v in target.vehicles], tag)
            step.escalated = "full"
        else:
            unserved = [v.id for v in target.vehicles if v.id in set(worst.infeasible_vehicles)]
            partial = target.subset(pick_rng.sample(unserved, excess), tag)
            # a handful of vehicles can fit once the rest of the scenario is gone; then grow the partial scenario.
            # each candidate gets its own id since the oracle caches by scenario id
            if oracle.feasible(partial, opened):
                partial = target.subset(unserved, tag + "u")
                step.escalated = "infeasible"
                if oracle.feasible(partial, opened):
                    partial = target.subset([v.id for v in target.vehicles], tag + "f")
                    step.escalated = "full"
        step.chosen = worst.scenario
        step.partial = tuple(v.id for v in partial.vehicles)
        omega.append(partial)
    return RobustResult(
        run_name(AVA, alpha, seed_strategy),
        StationConfiguration(opened, inner.config.total_cost),
        pool,
        [z.id for z in omega],
        ranking,
        steps,
        evaluations,
        {"ranking": t_rank, "sweeps": t_sweep, "total": time.perf_counter() - t0},
    )


def solve(
    instance: Instance,
    config: RobustConfig,
    options: OperationalOptions | None = None,
    workers: Workers | None = None,
) -> RobustResult:
    """Dispatch on ``config.mode``."""
    if config.mode == FSA:
        return solve_fsa(instance, config.seed, options)
    if config.mode == ASA:
        return solve_asa(instance, config.alpha, config.seed, options)
    if config.mode == AVA:
        return solve_ava(instance, config.alpha, config.seed_strategy, config.seed, options, workers)
    if config.mode == ISA:
        return solve_isa(instance, config.seed_strategy, config.seed, options, workers)
    return solve_deterministic(instance, config.scenario, config.seed, options)


def acceptance(config: RobustConfig, report: FeasibilityReport, promised: Iterable[str] | None = None) -> bool:
    """Does a report satisfy the mode's promise?

    ISA and det only promise the scenarios they were solved on; pass them as
    ``promised`` (the result's ``omega``). Without it, and on sets that do not
    contain those scenarios, they are held to alpha = 1 like FSA.
    """
    if config.mode == FSA:
        return report.scenario_feasibility == 1.0
    if config.mode == ASA:
        return report.meets_scenario_level(config.alpha)
    if config.mode == AVA:
        return report.meets_vehicle_level(config.alpha)
    ids = set(promised) if promised is not None else ({config.scenario} if config.scenario else set())
    own = [c for c in report.counts if c.scenario in ids]
    if ids and len(own) == len(ids):
        return all(c.n_feasible == c.n_vehicles for c in own)
    return report.scenario_feasibility == 1.0

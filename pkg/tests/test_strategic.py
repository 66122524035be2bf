import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from taxicharge.model import Station
from taxicharge.strategic import (
    CutPool,
    PreconditionError,
    ScenarioOracle,
    cutting_plane,
    deterministic_solve,
    prune_covers,
    solve_ccp,
    strengthen_cover,
)
from oracles import cheapest_configuration, covering_enumeration, max_servable
from toys import toy_instance

IDS = [f"s{i}" for i in range(7)]


def stations(costs):
    return [Station(s, 0.0, 0.0, c, 1) for s, c in costs.items()]


covers_strategy = st.lists(st.sets(st.sampled_from(IDS), min_size=1), min_size=0, max_size=8)
costs_strategy = st.lists(st.integers(1, 60), min_size=len(IDS), max_size=len(IDS))


@settings(max_examples=150, deadline=None)
@given(costs_strategy, covers_strategy)
def test_station_problem_matches_enumeration(costs, covers):
    cost = dict(zip(IDS, map(float, costs)))
    got = solve_ccp(stations(cost), covers)
    want, _ = covering_enumeration(cost, covers)
    assert got.total_cost == pytest.approx(want)
    assert all(got.opened & c for c in covers)


def test_empty_cover_rejected():
    with pytest.raises(ValueError):
        solve_ccp(stations({"a": 1.0}), [set()])
    with pytest.raises(ValueError):
        CutPool([[]])


@settings(max_examples=150, deadline=None)
@given(covers_strategy)
def test_cut_pool_is_antichain(covers):
    pool = CutPool(covers)
    kept = pool.covers
    for a, b in itertools.permutations(kept, 2):
        assert not a <= b
    # every input cover is implied by some kept cover
    for c in covers:
        assert any(k <= frozenset(c) for k in kept)
    # the pool enforces exactly the same configurations
    for mask in range(1 << 4):
        opened = {IDS[k] for k in range(4) if mask >> k & 1}
        assert bool(pool.violated_by(opened)) == any(not (set(c) & opened) for c in covers)


def test_cut_pool_roundtrip(tmp_path):
    pool = CutPool([{"b", "a"}, {"c"}, {"a", "b", "d"}])
    assert len(pool) == 2
    path = tmp_path / "cuts.json"
    pool.save(path)
    again = CutPool.load(path)
    assert sorted(map(sorted, again)) == [["a", "b"], ["c"]]
    assert again.to_json() == pool.to_json()
    with pytest.raises(ValueError):
        CutPool.from_json('{"schema": "other", "covers": []}')


def test_prune_keeps_minimal():
    got = prune_covers([frozenset("abc"), frozenset("ab"), frozenset("b"), frozenset("cd")])
    assert got == [frozenset("b"), frozenset("cd")]


def test_strengthening_without_smaller_cover_keeps_full():
    calls = []

    def never(c):
        calls.append(c)
        return False

    got = strengthen_cover(set("abcdef"), never, random.Random(1))
    assert got == [frozenset("abcdef")]
    assert calls and all(len(c) < 6 for c in calls)


def test_strengthening_finds_planted_cover():
    planted = frozenset({"c", "f"})
    full = set("abcdefgh")
    checked = {}

    def closing_infeasible(c):
        checked[c] = planted <= c
        return checked[c]

    for seed in range(20):
        got = strengthen_cover(full, closing_infeasible, random.Random(seed), budget=60)
        # every returned cover was verified, except possibly the full one
        for c in got:
            assert c == frozenset(full) or checked[c]
            assert planted <= c
        assert planted in got


def test_strengthening_single_station():
    assert strengthen_cover({"a"}, lambda c: True, random.Random(0)) == [frozenset("a")]


def test_strengthening_respects_budget():
    n = []
    strengthen_cover(set("abcdefghij"), lambda c: n.append(c) or True, random.Random(3), budget=7)
    assert len(n) <= 7


def contended(seed, n_vehicles=5, n_scenarios=1, n_stations=4):
    return toy_instance(
        seed,
        n_vehicles=n_vehicles,
        n_stations=n_stations,
        n_scenarios=n_scenarios,
        demand=2.2,
        reach=0.7,
        max_trips=4,
        max_gap=6,
        feasible_only=True,
    )


def brute_force(inst, scenarios, k):
    """Cheapest configuration with at most k scenarios not fully served."""
    inst = inst.with_scenarios(scenarios)
    cost, _ = cheapest_configuration(inst, lambda c: sum(f < n for f, n in c.values()) <= k)
    return cost


def test_deterministic_matches_brute_force():
    solved = 0
    for seed in range(30):
        inst = contended(seed)
        z = inst.scenarios[0]
        want = brute_force(inst, [z], 0)
        if want is None:
            with pytest.raises(PreconditionError):
                deterministic_solve(inst, z)
            continue
        res = deterministic_solve(inst, z, rng=random.Random(seed))
        assert res.config.total_cost == pytest.approx(want)
        assert max_servable(inst, z, res.config.opened)[0] == len(z.vehicles)
        solved += 1
    assert solved >= 15


def test_chance_constrained_matches_brute_force():
    solved = 0
    for seed in range(12):
        inst = contended(100 + seed, n_vehicles=4, n_scenarios=4, n_stations=4)
        for k in (0, 1, 2):
            want = brute_force(inst, inst.scenarios, k)
            if want is None:
                with pytest.raises(PreconditionError):
                    cutting_plane(inst, inst.scenarios, k)
                continue
            res = cutting_plane(inst, inst.scenarios, k, rng=random.Random(seed))
            assert res.config.total_cost == pytest.approx(want)
            solved += 1
    assert solved >= 20


def test_cuts_are_valid():
    # closing every station of a cover leaves the scenario infeasible
    for seed in range(15):
        inst = contended(seed)
        z = inst.scenarios[0]
        try:
            res = deterministic_solve(inst, z, rng=random.Random(seed))
        except PreconditionError:
            continue
        for cover in res.cuts:
            rest = set(inst.station_ids) - cover
            assert max_servable(inst, z, rest)[0] < len(z.vehicles)


def test_larger_allowance_never_costs_more():
    for seed in range(8):
        inst = contended(200 + seed, n_vehicles=4, n_scenarios=4)
        costs = []
        for k in range(4):
            try:
                costs.append(cutting_plane(inst, inst.scenarios, k, rng=random.Random(0)).config.total_cost)
            except PreconditionError:
                costs.append(None)
        known = [c for c in costs if c is not None]
        assert known == sorted(known, reverse=True)


def test_cutting_plane_is_deterministic():
    inst = contended(3, n_vehicles=5, n_scenarios=3)
    a = cutting_plane(inst, inst.scenarios, 1, rng=random.Random(9))
    b = cutting_plane(inst, inst.scenarios, 1, rng=random.Random(9))
    assert a.config == b.config
    assert a.cuts.to_json() == b.cuts.to_json()
    assert [r.opened for r in a.iterations] == [r.opened for r in b.iterations]


def test_oracle_cache_agrees_with_direct_checks():
    inst = contended(4, n_vehicles=6)
    z = inst.scenarios[0]
    oracle = ScenarioOracle(inst)
    ids = inst.station_ids
    subsets = [frozenset(c) for r in range(len(ids) + 1) for c in itertools.combinations(ids, r)]
    for sub in subsets + subsets[::-1]:
        want = max_servable(inst, z, sub)[0] == len(z.vehicles)
        assert oracle.feasible(z, sub) == want
    assert oracle.cache_hits >= len(subsets)
    assert oracle.evaluations <= len(subsets)


def test_warm_started_pool_gives_same_answer():
    inst = contended(5, n_vehicles=5, n_scenarios=2)
    cold = cutting_plane(inst, inst.scenarios, 0, rng=random.Random(0))
    warm = cutting_plane(inst, inst.scenarios, 0, rng=random.Random(0), cuts=CutPool(cold.cuts.covers))
    assert warm.config.total_cost == pytest.approx(cold.config.total_cost)
    assert len(warm.iterations) == 1

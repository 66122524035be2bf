import pytest

from taxicharge.model import Gap, Instance, Scenario, Station, StationConfiguration, StationOption, TechParams, Trip, Vehicle
from taxicharge.robust import (
    ASA,
    AVA,
    FSA,
    ISA,
    FeasibilityReport,
    IndependentSolution,
    RobustConfig,
    ScenarioCount,
    Workers,
    acceptance,
    allowed_failures,
    evaluate_feasibility,
    pick_seed,
    rank_scenarios,
    run_name,
    solve,
    solve_asa,
    solve_ava,
    solve_deterministic,
    solve_fsa,
    solve_isa,
)
from taxicharge.strategic import CutPool, PreconditionError
from oracles import cheapest_configuration, max_servable
from toys import fleet_toy, toy_instance


def needs(vid, station):
    # runs dry unless it charges at ``station`` between its trips
    opt = StationOption(station, 0, 0, 0.0, 0.0)
    trips = (Trip((0, 0), (0, 0), 0, 1, 15.0), Trip((0, 0), (0, 0), 3, 4, 5.0))
    return Vehicle(vid, trips, (Gap(0.0, (opt,)),), 18.0, 0.0)


def two_needs(cost_a=10.0, cost_b=20.0):
    stations = (Station("a", 0, 0, cost_a, 1), Station("b", 0, 0, cost_b, 1))
    scen = (Scenario("za", (needs("v1", "a"),)), Scenario("zb", (needs("v2", "b"),)))
    return Instance(stations, scen, 12, 10, TechParams(q_max=20.0, charge_power=30.0))


def small(seed, n_scenarios=3):
    return toy_instance(
        seed, n_vehicles=4, n_stations=4, n_scenarios=n_scenarios, demand=2.2, reach=0.7, max_trips=4, max_gap=6, feasible_only=True
    )


def test_allowed_failures():
    assert allowed_failures(0.95, 100) == 5
    assert allowed_failures(0.95, 20) == 1
    assert allowed_failures(0.95, 19) == 0
    assert allowed_failures(0.9, 10) == 1
    assert allowed_failures(1.0, 50) == 0
    assert allowed_failures(0.5, 3) == 1
    with pytest.raises(ValueError):
        allowed_failures(0.0, 3)


def test_run_names():
    assert run_name(AVA, 0.95, "l") == "95-VA-L"
    assert run_name(AVA, 0.995, "m") == "99.5-VA-M"
    assert run_name(ASA, 0.5) == "50-SA"
    assert run_name(FSA) == "FSA"
    assert run_name(ISA, seed_strategy="m") == "ISA-M"
    assert RobustConfig(AVA, 0.99, "l").name == "99-VA-L"


def test_config_validation():
    with pytest.raises(ValueError):
        RobustConfig("nope")
    with pytest.raises(ValueError):
        RobustConfig(FSA, alpha=0.9)
    with pytest.raises(ValueError):
        RobustConfig(AVA, alpha=1.5)
    with pytest.raises(ValueError):
        RobustConfig(AVA, 0.9, "x")
    with pytest.raises(ValueError):
        RobustConfig("det")


def test_report_arithmetic():
    rep = FeasibilityReport(tuple(ScenarioCount(f"z{i}", 95, 100) for i in range(4)))
    assert rep.mean_vehicle_feasibility == pytest.approx(0.95)
    assert rep.min_vehicle_feasibility == pytest.approx(0.95)
    assert rep.scenario_feasibility == 0
    assert rep.meets_vehicle_level(0.95) and not rep.meets_vehicle_level(0.96)
    mixed = FeasibilityReport((ScenarioCount("a", 10, 10), ScenarioCount("b", 8, 10)))
    assert mixed.min_vehicle_feasibility <= mixed.mean_vehicle_feasibility
    assert mixed.scenario_feasibility == 0.5
    assert mixed.meets_scenario_level(0.5) and not mixed.meets_scenario_level(0.75)
    assert FeasibilityReport.from_dict(mixed.to_dict()) == mixed


def test_evaluate_matches_assignment_oracle():
    for seed in range(8):
        inst = toy_instance(seed, n_vehicles=6, n_stations=3, n_scenarios=2, demand=2.2, max_trips=4, max_gap=6, feasible_only=True)
        for opened in (inst.station_ids, inst.station_ids[:1], inst.station_ids[1:]):
            rep = evaluate_feasibility(inst, opened)
            for z, c in zip(inst.scenarios, rep.counts):
                assert c.exact
                assert c.n_feasible == max_servable(inst, z, opened)[0]
                assert len(c.infeasible_vehicles) == c.n_infeasible


def test_evaluate_rejects_unknown_station():
    with pytest.raises(KeyError):
        evaluate_feasibility(two_needs(), {"zz"})


def test_all_open_on_feasible_toy_is_fully_feasible():
    inst = fleet_toy(0)
    rep = evaluate_feasibility(inst, inst.station_ids)
    assert rep.mean_vehicle_feasibility == 1 and rep.scenario_feasibility == 1


def test_fsa_single_scenario_is_deterministic():
    inst = small(1, n_scenarios=1)
    assert solve_fsa(inst).config == solve_deterministic(inst, inst.scenarios[0].id).config


def test_fsa_opens_union_of_forced_stations():
    assert solve_fsa(two_needs()).config.opened == {"a", "b"}


def test_asa_half_opens_cheaper_requirement():
    assert solve_asa(two_needs(10, 20), 0.5).config.opened == {"a"}
    assert solve_asa(two_needs(30, 20), 0.5).config.opened == {"b"}
    assert solve_asa(two_needs(), 1.0).config == solve_fsa(two_needs()).config


def test_fsa_and_asa_match_enumeration():
    checked = 0
    for seed in range(10):
        inst = small(seed)
        want, _ = cheapest_configuration(inst, lambda c: all(f == n for f, n in c.values()))
        if want is None:
            with pytest.raises(PreconditionError):
                solve_fsa(inst)
            continue
        assert solve_fsa(inst).config.total_cost == pytest.approx(want)
        want_half, _ = cheapest_configuration(inst, lambda c: sum(f < n for f, n in c.values()) <= 1)
        got = solve_asa(inst, 0.5)
        assert got.config.total_cost == pytest.approx(want_half)
        assert evaluate_feasibility(inst, got.config).scenario_feasibility >= 0.5
        checked += 1
    assert checked >= 5


def test_isa_picks_lowest_and_lower_median():
    sols = [IndependentSolution(f"z{i}", StationConfiguration(frozenset(), c), CutPool()) for i, c in enumerate((5.0, 7.0, 9.0))]
    assert pick_seed(sols, "l").config.total_cost == 5
    assert pick_seed(sols, "m").config.total_cost == 7
    assert pick_seed(sols + [IndependentSolution("z3", StationConfiguration(frozenset(), 11.0), CutPool())], "m").scenario == "z1"


def test_ranking_is_sorted_with_stable_ties():
    inst = fleet_toy(1)
    rank = rank_scenarios(inst)
    order = [z.id for z in inst.scenarios]
    keys = [(r.config.total_cost, order.index(r.scenario)) for r in rank]
    assert keys == sorted(keys)
    assert solve_isa(inst, "l", ranking=rank).config == rank[0].config
    single = small(2, n_scenarios=1)
    assert solve_isa(single).config == solve_deterministic(single, single.scenarios[0].id).config


def test_ava_full_level_matches_fsa():
    for seed in range(6):
        inst = fleet_toy(seed, n_vehicles=10, n_scenarios=3)
        try:
            fsa = solve_fsa(inst)
        except PreconditionError:
            continue
        assert solve_ava(inst, 1.0).config.total_cost == pytest.approx(fsa.config.total_cost)


def test_ava_loose_level_returns_seed_solution():
    inst = fleet_toy(2)
    rank = rank_scenarios(inst)
    res = solve_ava(inst, 0.05, ranking=rank)
    assert res.omega == [rank[0].scenario]
    assert len(res.steps) == 1 and not res.steps[0].violated
    assert res.config == rank[0].config


def test_ava_bookkeeping():
    grew = 0
    for seed in range(10):
        inst = fleet_toy(seed)
        try:
            res = solve_ava(inst, 0.9, seed=seed)
        except PreconditionError:
            continue
        # one scenario enters the fully served set per adversarial round
        assert len(res.omega) == len(res.steps)
        for k, step in enumerate(res.steps[:-1]):
            z = inst.scenario(step.chosen)
            assert set(step.partial) <= {v.id for v in z.vehicles}
            assert res.omega[k + 1].startswith(step.chosen + "#")
            if step.escalated is None:
                n_inf = len(z.vehicles) - max_servable_count(inst, z, step.opened)
                assert len(step.partial) == n_inf - allowed_failures(0.9, len(z.vehicles))
            grew += 1
        rep = evaluate_feasibility(inst, res.config)
        assert rep.meets_vehicle_level(0.9)
        assert acceptance(RobustConfig(AVA, 0.9), rep)
    assert grew >= 5


def max_servable_count(inst, z, opened):
    return evaluate_feasibility(inst, opened, [z]).counts[0].n_feasible


def test_mode_ordering_and_acceptance():
    for seed in range(6):
        inst = fleet_toy(seed)
        try:
            rank = rank_scenarios(inst)
            fsa = solve_fsa(inst)
        except PreconditionError:
            continue
        isa = solve_isa(inst, "l", ranking=rank)
        va = [solve_ava(inst, a, "l", ranking=rank) for a in (0.9, 0.95, 0.99)]
        sa = [solve_asa(inst, a) for a in (0.5, 0.75)]
        costs = [isa.config.total_cost] + [r.config.total_cost for r in va] + [fsa.config.total_cost]
        assert costs == sorted(costs)
        assert sa[0].config.total_cost <= sa[1].config.total_cost <= fsa.config.total_cost
        for res, cfg in [(fsa, RobustConfig(FSA))] + list(zip(sa, (RobustConfig(ASA, 0.5), RobustConfig(ASA, 0.75)))):
            assert acceptance(cfg, evaluate_feasibility(inst, res.config))


def test_dispatch_and_parallel_workers_agree():
    inst = fleet_toy(3, n_vehicles=12, n_scenarios=3)
    cfg = RobustConfig(AVA, 0.9, "m", seed=4)
    one = solve(inst, cfg)
    with Workers(2) as w:
        two = solve(inst, cfg, workers=w)
        rep2 = evaluate_feasibility(inst, one.config, workers=w)
    assert one.config == two.config
    assert one.omega == two.omega
    assert one.cuts.to_json() == two.cuts.to_json()
    assert rep2 == evaluate_feasibility(inst, one.config)
    assert solve(inst, RobustConfig("det", scenario="z1")).name == "DET-z1"


def test_isa_and_det_acceptance_cover_their_own_scenario():
    rep = FeasibilityReport((ScenarioCount("a", 10, 10), ScenarioCount("b", 8, 10)))
    assert acceptance(RobustConfig(ISA), rep, ["a"])
    assert not acceptance(RobustConfig(ISA), rep, ["b"])
    assert not acceptance(RobustConfig(ISA), rep, ())
    assert acceptance(RobustConfig("det", scenario="a"), rep)
    assert not acceptance(RobustConfig("det", scenario="b"), rep)
    inst = fleet_toy(1)
    isa = solve_isa(inst, "m")
    assert acceptance(RobustConfig(ISA, seed_strategy="m"), evaluate_feasibility(inst, isa.config), isa.omega)

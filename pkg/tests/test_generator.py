import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taxicharge.generator import (
    DAY_MINUTES,
    GeneratorConfig,
    GeneratorError,
    Shift,
    ShiftTrip,
    _quotas,
    build_vehicle,
    derive_parameter_instance,
    generate_instance,
    generate_stations,
    out_of_sample_sets,
    raw_sites,
    sample_shifts,
    select_station_sites,
    shift_pool,
    station_cost,
)
from taxicharge.model import TechParams, dumps_instance, instance_to_dict, validate_instance
from taxicharge.network import build_network
from taxicharge.pricing import end_labels, vehicle_feasible

SMALL = GeneratorConfig(n_vehicles=30, n_stations=8, n_scenarios=3)


def test_station_cost_examples():
    assert station_cost(0.0) == pytest.approx(50.0)
    assert station_cost(1.0) == pytest.approx(10.0 + 30 * math.exp(-10), abs=1e-12)
    assert station_cost(1.0) == pytest.approx(10.0014, abs=1e-4)
    assert station_cost(0.5) == pytest.approx(15.2021, abs=1e-4)
    for bad in (-0.01, 1.01):
        with pytest.raises(GeneratorError):
            station_cost(bad)


@given(st.floats(0, 1), st.floats(0, 1))
def test_station_cost_strictly_decreasing(a, b):
    lo, hi = sorted((a, b))
    # below about 1e-15 the difference is lost in float rounding
    if hi - lo > 1e-12:
        assert station_cost(lo) > station_cost(hi)


def test_all_sites_selected_when_k_equals_count():
    sites = raw_sites(GeneratorConfig(n_raw_sites=12))
    got = select_station_sites(sites, 12)
    assert [s.id for s in got] == [f"s{i:03d}" for i in range(12)]


def test_single_cluster_on_square():
    square = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    (only,) = select_station_sites(square, 1)
    centre = square.mean(axis=0)
    dist = np.hypot(*(square - centre).T)
    # every corner is equally close; the first one wins the tie
    assert np.allclose(dist, dist[0])
    assert only.id == "s000"


def test_five_sites_from_full_set_are_distinct_and_reproducible():
    cfg = GeneratorConfig(n_stations=5)
    a = generate_stations(cfg)
    b = generate_stations(cfg)
    assert a == b
    assert len({s.id for s in a}) == 5
    pts = np.array([[s.x, s.y] for s in a])
    gaps = [np.hypot(*(pts[i] - pts[j])) for i in range(5) for j in range(i + 1, 5)]
    # k-means spreads the sites; no two picks sit on top of each other
    assert min(gaps) > 1.0
    for s in a:
        assert 10.0 <= s.cost <= 50.0


def test_too_many_stations_rejected():
    with pytest.raises(GeneratorError):
        select_station_sites(raw_sites(GeneratorConfig(n_raw_sites=10)), 11)
    with pytest.raises(GeneratorError):
        GeneratorConfig(n_raw_sites=10, n_stations=11).validate()


@settings(max_examples=200)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=8), st.integers(0, 200))
def test_quotas_are_proportional(sizes, n):
    if sum(sizes) == 0:
        with pytest.raises(GeneratorError):
            _quotas(sizes, n)
        return
    q = _quotas(sizes, n)
    assert sum(q) == n
    for qi, si in zip(q, sizes):
        assert abs(qi - n * si / sum(sizes)) < 1
        if si == 0:
            assert qi == 0


def uniform_pool(n, strata=3):
    trip = ShiftTrip((0.0, 0.0), (1.0, 0.0), 0.0, 10.0, 1.0)
    return [Shift(f"p{i}", 0, i % strata, 60.0 * i, 8.0, (trip,)) for i in range(n)]


def test_full_sample_returns_the_pool():
    pool = uniform_pool(12)
    got, rejected = sample_shifts(pool, 12, np.random.default_rng(0))
    assert sorted(s.id for s in got) == sorted(s.id for s in pool)
    assert not rejected


def test_rejected_shifts_are_replaced_within_stratum():
    pool = uniform_pool(30)
    bad = {"p0", "p3", "p4"}
    got, rejected = sample_shifts(pool, 15, np.random.default_rng(1), lambda s: s.id not in bad)
    assert not bad & {s.id for s in got}
    assert set(rejected) <= bad
    per = [sum(s.stratum == k for s in got) for k in range(3)]
    assert per == [5, 5, 5]
    with pytest.raises(GeneratorError):
        sample_shifts(pool, 15, np.random.default_rng(1), lambda s: s.stratum != 0)


def test_pool_excludes_short_shifts():
    pool = shift_pool(SMALL, 0)
    assert len(pool) == SMALL.pool_factor * SMALL.n_vehicles
    assert all(s.hours >= SMALL.min_shift_hours for s in pool)
    assert all(s.stratum == int(s.start // (SMALL.start_bin_hours * 60)) for s in pool)


def test_midnight_shift_is_mapped_into_the_day():
    stations = generate_stations(SMALL)
    trips = tuple(ShiftTrip((0.0, 0.0), (1.0, 1.0), 1320.0 + 60 * k, 1340.0 + 60 * k, 3.0) for k in range(6))
    v = build_vehicle(Shift("late", 0, 5, 1320.0, 6.0, trips), stations, SMALL)
    assert len(v.trips) == 6
    starts = [t.start for t in v.trips]
    assert starts == sorted(starts) and starts[0] < 20
    for a, b in zip(v.trips, v.trips[1:]):
        assert a.end <= b.start
    assert all(0 <= t.start < t.end <= SMALL.horizon_periods for t in v.trips)


@pytest.fixture(scope="module")
def small_instance():
    return generate_instance(SMALL)


def test_generation_is_deterministic(small_instance):
    inst, prov = small_instance
    again, prov2 = generate_instance(SMALL)
    assert dumps_instance(inst) == dumps_instance(again)
    assert prov.to_dict() == prov2.to_dict()
    other, _ = generate_instance(GeneratorConfig(n_vehicles=30, n_stations=8, n_scenarios=3, seed=1))
    assert dumps_instance(other) != dumps_instance(inst)


def test_generated_instance_is_valid_and_individually_feasible(small_instance):
    inst, _ = small_instance
    validate_instance(instance_to_dict(inst))
    assert len(inst.scenarios) == 3
    for z in inst.scenarios:
        assert len(z.vehicles) == SMALL.n_vehicles
        for v in z.vehicles:
            assert v.q_begin == v.q_end == 0.5 * inst.tech.q_max
            assert vehicle_feasible(v, inst, inst.station_ids)


def test_default_scenario_count():
    cfg = GeneratorConfig(n_vehicles=10, n_stations=6)
    inst, _ = generate_instance(cfg)
    assert len(inst.scenarios) == 28


def test_fleet_statistics_match_targets():
    cfg = GeneratorConfig(n_scenarios=7)
    inst, _ = generate_instance(cfg)
    hours = {s.id: s.hours for g in range(7) for s in shift_pool(cfg, g)}
    for z in inst.scenarios:
        assert abs(statistics.median(hours[v.id] for v in z.vehicles) - 8.0) <= 1.0
        assert abs(statistics.mean(len(v.trips) for v in z.vehicles) - 10.9) <= 2.0


def test_out_of_sample_sets_share_stations(small_instance):
    inst, _ = small_instance
    sets = out_of_sample_sets(SMALL, 6, inst.stations)
    assert len(sets) == 6
    texts = {dumps_instance(i) for i, _ in sets} | {dumps_instance(inst)}
    assert len(texts) == 7
    for other, prov in sets:
        assert other.stations == inst.stations
        assert prov.demand_seed != SMALL.seed
    assert [dumps_instance(i) for i, _ in out_of_sample_sets(SMALL, 2, inst.stations)] == [
        dumps_instance(i) for i, _ in sets[:2]
    ]


def test_derived_instance_with_master_tech_keeps_everyone(small_instance):
    inst, _ = small_instance
    same, removed = derive_parameter_instance(inst, inst.tech)
    assert removed == []
    assert same == inst


def test_empty_battery_removes_every_consuming_vehicle(small_instance):
    inst, _ = small_instance
    tiny = TechParams(q_max=1e-6)
    _, removed = derive_parameter_instance(inst, tiny)
    want = [(z.id, v.id) for z in inst.scenarios for v in z.vehicles if any(t.energy > 0 for t in v.trips)]
    assert removed == want


def test_halved_battery_matches_labeling():
    base = TechParams()
    big = base.scaled(battery=2.0, power=2.0)
    cfg = GeneratorConfig(n_vehicles=50, n_stations=8, n_scenarios=1, tech=big)
    master, _ = generate_instance(cfg)
    half = base.scaled(battery=0.5)
    derived, removed = derive_parameter_instance(master, half)
    probe = derived.with_scenarios(master.scenarios).with_tech(half)
    want = []
    for v in master.scenarios[0].vehicles:
        scaled = type(v)(v.id, v.trips, v.gaps, v.q_begin * half.q_max / big.q_max, v.q_end * half.q_max / big.q_max)
        if not end_labels(build_network(scaled, probe, set(probe.station_ids))):
            want.append((master.scenarios[0].id, v.id))
    assert removed == want
    assert removed
    kept = {v.id for v in derived.scenarios[0].vehicles}
    assert kept.isdisjoint(v for _, v in removed)
    assert derived.scenarios[0].vehicles[0].q_begin == pytest.approx(0.5 * half.q_max)


def test_config_round_trip_and_errors():
    cfg = GeneratorConfig(seed=3, n_vehicles=12, tech=TechParams(q_max=60))
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(GeneratorError):
        GeneratorConfig.from_dict({"n_vehiclez": 3})
    with pytest.raises(GeneratorError):
        GeneratorConfig.from_dict({"schema": "nope"})
    with pytest.raises(GeneratorError):
        GeneratorConfig.from_dict({"n_stations": 300})
    assert GeneratorConfig().n_strata == DAY_MINUTES // 240

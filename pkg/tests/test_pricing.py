import random

import pytest
from hypothesis import given, settings, strategies as st

from taxicharge.model import Gap, Instance, Scenario, Station, StationOption, TechParams, Trip, Vehicle, charge_amount
from taxicharge.network import NetArc, build_network
from taxicharge.pricing import (
    Label,
    _insert,
    dominates,
    end_labels,
    extend,
    label_setting,
    price_vehicle,
    vehicle_feasible,
)
from oracles import enumerate_routes, pareto
from toys import toy_instance

TECH = TechParams()


def one_gap_net(q_begin=10.0):
    opt = StationOption("s", 0, 0, 0.0, 2.0)
    v = Vehicle("v", (Trip((0, 0), (0, 0), 0, 1, 0.0), Trip((0, 0), (0, 0), 5, 6, 0.0)), (Gap(0.0, (opt,)),), q_begin, 0.0)
    inst = Instance((Station("s", 0, 0, 1.0, 1),), (Scenario("z", (v,)),), 10, 10, TECH)
    return build_network(v, inst, {"s"})


def test_extend_plain_arc_keeps_label():
    net = one_gap_net()
    lab = Label(0, 1.5, 12.0)
    nxt = extend(lab, NetArc(0, 1, "R", 0.0), net)
    assert (nxt.cost, nxt.soc) == (1.5, 12.0)


def test_extend_full_battery():
    net = one_gap_net()
    q = net.charging_vertices[-1]
    b2 = next(a for a in net.arcs if a.tail == q and a.kind == "B2")
    nxt = extend(Label(q, 0.0, TECH.q_max), b2, net)
    assert nxt.soc == pytest.approx(TECH.q_max - 2.0)


def test_extend_charges_on_departure():
    net = one_gap_net()
    q = net.charging_vertices[-1]
    b2 = next(a for a in net.arcs if a.tail == q and a.kind == "B2")
    nxt = extend(Label(q, 0.0, 10.0), b2, net)
    assert nxt.soc == pytest.approx(10 + 50 / 6 - 2)
    assert nxt.soc == pytest.approx(10 + charge_amount(10.0, TECH) - 2, abs=1e-12)


def test_extend_rejects_below_floor():
    net = one_gap_net()
    assert extend(Label(0, 0.0, 0.5), NetArc(0, 1, "R", 1.0), net) is None


def test_dominance_rules():
    a = Label(0, 1.0, 5.0)
    assert dominates(a, Label(0, 1.0, 5.0))
    assert not dominates(Label(0, 0.5, 4.0), Label(0, 1.0, 5.0))
    assert dominates(Label(0, 0.5, 6.0), Label(0, 1.0, 5.0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=30))
def test_insertion_yields_pareto_front(pairs):
    bucket = []
    for c, r in pairs:
        _insert(bucket, Label(0, float(c), float(r)))
    got = sorted((lab.cost, lab.soc) for lab in bucket)
    assert got == sorted(pareto([(float(c), float(r)) for c, r in pairs]))
    for x in bucket:
        for y in bucket:
            if x is not y:
                assert not dominates(x, y)


def random_prices(rng, inst):
    return {
        (s, t): rng.choice([0.0, 0.0, rng.uniform(0, 1)])
        for s in inst.station_ids
        for t in range(inst.horizon_periods)
    }


def check_against_enumeration(seed):
    rng = random.Random(seed)
    inst = toy_instance(seed, n_vehicles=1, n_stations=rng.randint(1, 3), max_trips=5, q_max=20, demand=1.6)
    v = inst.scenarios[0].vehicles[0]
    opened = {s for s in inst.station_ids if rng.random() < 0.8}
    prices = random_prices(rng, inst)
    net = build_network(v, inst, opened, prices)
    rho = rng.uniform(0, 2)
    res = price_vehicle(net, rho, column_cap=None)
    paths = enumerate_routes(v, inst, opened, prices)
    done = [(c, r) for c, r, _ in paths if r >= net.q_end - 1e-9]
    want = pareto(done)
    got = sorted((lab.cost, lab.soc) for lab in res.end_labels)
    assert len(got) == len(want)
    for (gc, gr), (wc, wr) in zip(got, sorted(want)):
        assert gc == pytest.approx(wc, abs=1e-9) and gr == pytest.approx(wr, abs=1e-9)
    assert res.feasible == bool(done)
    neg = sorted((c, r) for c, r in want if -rho + c < -1e-6)
    assert sorted((r.cost, r.soc_end) for r in res.routes) == pytest.approx(neg, abs=1e-9)
    by_choice = {ch: (c, r) for c, r, ch in paths}
    for route in res.routes:
        c, r = by_choice[route.choices]
        assert (c, r) == pytest.approx((route.cost, route.soc_end), abs=1e-9)
        assert route.reduced_cost == pytest.approx(-rho + route.cost)
        periods = {(ch[0], t) for ch in route.choices if ch for t in range(ch[1], ch[2] + 1)}
        assert route.footprint == periods


def test_pricing_matches_enumeration():
    for seed in range(80):
        check_against_enumeration(seed)


def test_zero_duals_price_nothing():
    for seed in range(10):
        inst = toy_instance(seed, n_vehicles=2)
        for v in inst.scenarios[0].vehicles:
            net = build_network(v, inst, inst.station_ids)
            res = price_vehicle(net, 0.0)
            assert res.routes == []
            assert res.feasible == bool(end_labels(net))


def test_infeasible_vehicle_has_no_routes():
    v = Vehicle("v", (Trip((0, 0), (0, 0), 0, 1, 50.0),), (), 20.0, 0.0)
    inst = Instance((Station("s", 0, 0, 1.0, 1),), (Scenario("z", (v,)),), 10, 10, TECH)
    res = price_vehicle(build_network(v, inst, {"s"}), 1.0)
    assert res.routes == [] and not res.feasible
    assert not vehicle_feasible(v, inst)


def test_zero_energy_vehicle_feasible():
    v = Vehicle("v", (Trip((0, 0), (0, 0), 0, 1, 0.0), Trip((0, 0), (0, 0), 3, 4, 0.0)), (Gap(0.0),), 0.0, 0.0)
    inst = Instance((Station("s", 0, 0, 1.0, 1),), (Scenario("z", (v,)),), 10, 10, TECH)
    assert vehicle_feasible(v, inst, set())


def test_column_cap_keeps_best():
    for seed in range(30):
        rng = random.Random(seed)
        inst = toy_instance(seed, n_vehicles=1, n_stations=3, demand=1.5)
        v = inst.scenarios[0].vehicles[0]
        net = build_network(v, inst, inst.station_ids, random_prices(rng, inst))
        full = price_vehicle(net, 5.0, column_cap=None).routes
        capped = price_vehicle(net, 5.0, column_cap=2).routes
        assert capped == full[:2]


def test_fast_feasibility_matches_labeling():
    for seed in range(150):
        rng = random.Random(seed)
        inst = toy_instance(seed, n_vehicles=3, n_stations=3, demand=rng.uniform(1, 2.5))
        for v in inst.scenarios[0].vehicles:
            opened = {s for s in inst.station_ids if rng.random() < 0.6}
            by_labels = bool(end_labels(build_network(v, inst, opened)))
            assert vehicle_feasible(v, inst, opened) == by_labels
            paths = enumerate_routes(v, inst, opened)
            assert by_labels == any(r >= v.end_requirement(inst.tech) - 1e-9 for _, r, _ in paths)


def test_more_stations_never_hurt():
    for seed in range(60):
        rng = random.Random(seed)
        inst = toy_instance(seed, n_vehicles=3, n_stations=4, demand=2.0)
        small = {s for s in inst.station_ids if rng.random() < 0.5}
        for v in inst.scenarios[0].vehicles:
            if vehicle_feasible(v, inst, small):
                assert vehicle_feasible(v, inst, inst.station_ids)


def test_labels_respect_soc_bounds():
    for seed in range(30):
        inst = toy_instance(seed, n_vehicles=2, demand=1.5)
        for v in inst.scenarios[0].vehicles:
            net = build_network(v, inst, inst.station_ids)
            for bucket in label_setting(net):
                for lab in bucket:
                    assert inst.tech.q_min - 1e-9 <= lab.soc <= inst.tech.q_max + 1e-9


def test_deterministic_output():
    inst = toy_instance(4, n_vehicles=1, demand=1.5)
    v = inst.scenarios[0].vehicles[0]
    prices = random_prices(random.Random(1), inst)
    a = price_vehicle(build_network(v, inst, inst.station_ids, prices), 3.0)
    b = price_vehicle(build_network(v, inst, inst.station_ids, prices), 3.0)
    assert a.routes == b.routes

from collections import defaultdict

import pytest
import simpy

from config.settings import CLEAN_START_MIN, DAY_MINUTES, REFERENCE_SCENARIO_M, REFERENCE_SCENARIO_S
from source.engine import (
    DAY_COLUMNS,
    TRIP_COLUMNS,
    DeadlockError,
    Replication,
    congestion_frame,
    days_frame,
    pooled_travel,
    run_replication,
    run_replications,
    trips_frame,
)
from source.kinematics import KinematicsParams
from source.scenario import load_scenario
from source.traffic import Network, OccupancyLedger
from source.workflow import FleetPlan


def _free_flow(scenario):
    net = Network(simpy.Environment(), scenario.network, KinematicsParams(), OccupancyLedger(), tiebreak=lambda: 0.5)
    return {route.id: net.free_flow_minutes(route) for route in scenario.network.active_routes()}


@pytest.mark.parametrize("path, expected", [
    (REFERENCE_SCENARIO_M, {"clean-M": 2.635, "soiled-M": 5.828}),
    (REFERENCE_SCENARIO_S, {"clean-S": 10.400, "soiled-S": 3.805}),
])
def test_reference_free_flow(path, expected):
    free = _free_flow(load_scenario(path))
    for route, minutes in expected.items():
        assert free[route] == pytest.approx(minutes, abs=0.005)


def test_every_case_is_hauled_three_times(tiny_scenario):
    result = run_replication(tiny_scenario, seed=7)
    cases = sum(d.case_count for d in result.days)
    assert [d.day for d in result.days] == [0, 1]
    assert 6 <= cases <= 10
    for state in ("clean", "soiled", "washed"):
        assert len(result.travel(state)) == cases


def test_trips_are_never_faster_than_free_flow(tiny_scenario):
    result = run_replication(tiny_scenario, seed=7)
    free = _free_flow(tiny_scenario)
    for trip in result.trips:
        assert trip.travel_minutes >= free[trip.route] - 1e-9
        assert trip.nominal == pytest.approx(free[trip.route])
        assert trip.travel_minutes == pytest.approx(trip.nominal + trip.delay)


def test_clean_and_soiled_timing(tiny_scenario):
    result = run_replication(tiny_scenario, seed=7)
    for trip in result.trips:
        day_start = trip.day * DAY_MINUTES
        if trip.cart_state == "clean":
            # комплектация длится не меньше 3 минут
            assert trip.pickup_time >= day_start + CLEAN_START_MIN + 3.0
            assert trip.dropoff_time < day_start + DAY_MINUTES
        elif trip.cart_state == "soiled":
            # грязная тележка дня d выпускается на следующие сутки, не раньше 60 минут
            assert trip.pickup_time >= day_start + DAY_MINUTES + 60.0


def test_same_seed_same_trips(tiny_scenario):
    a = run_replication(tiny_scenario, seed=11, replication=1)
    b = run_replication(tiny_scenario, seed=11, replication=1)
    assert a.trips == b.trips
    assert [d.t_c for d in a.days] == [d.t_c for d in b.days]


def test_fleet_size_does_not_change_case_volumes(tiny_scenario):
    small = run_replication(tiny_scenario.with_fleet(FleetPlan.constant(1, 3)), seed=5)
    large = run_replication(tiny_scenario.with_fleet(FleetPlan.constant(3, 3)), seed=5)
    assert [d.case_count for d in small.days] == [d.case_count for d in large.days]


def test_kanban_peak_respects_the_plan(tiny_scenario):
    result = run_replication(tiny_scenario.with_fleet(FleetPlan.constant(1, 3)), seed=3)
    assert max(result.congestion.kanban_peak.values()) == 1
    result = run_replication(tiny_scenario.with_fleet(FleetPlan.constant(2, 3)), seed=3)
    assert max(result.congestion.kanban_peak.values()) <= 2


def test_variant_s_runs(tiny_scenario):
    scenario = tiny_scenario.with_variant("S")
    result = run_replication(scenario, seed=7)
    assert {t.route for t in result.trips} == {"clean-S", "soiled-S", "washed-S"}
    assert all(d.t_c is not None and d.t_c > 0 for d in result.days)


def test_replications_are_ordered_and_independent(tiny_scenario):
    results = run_replications(tiny_scenario, seed=7)
    assert [r.replication for r in results] == [0, 1]
    assert results[0].trips != results[1].trips
    assert results[1].trips == run_replication(tiny_scenario, seed=7, replication=1).trips


def test_frames(tiny_scenario):
    results = run_replications(tiny_scenario, seed=7, replications=2)
    trips = trips_frame(results)
    assert list(trips.columns) == TRIP_COLUMNS
    assert len(trips) == sum(len(r.trips) for r in results)
    assert (trips.travel_min > 0).all()
    days = days_frame(results)
    assert list(days.columns) == DAY_COLUMNS
    assert len(days) == 4
    congestion = congestion_frame(results)
    assert list(congestion.rep) == [0, 1]
    pooled = pooled_travel(results)
    assert sorted(pooled) == ["clean", "soiled", "washed"]


def test_trace_is_collected(tiny_scenario):
    result = run_replication(tiny_scenario.with_horizon(days=1), seed=7, trace=True)
    actions = {action for _, _, action, _ in result.trace}
    assert {"assign", "pickup", "dropoff", "gate_pass"} <= actions


def test_trace_replay_finds_no_shared_zone(tiny_scenario):
    result = run_replication(tiny_scenario.with_fleet(FleetPlan.constant(3, 3)), seed=7, trace=True)
    spurs = {link.id for link in tiny_scenario.network.links if link.kind == "spur"}
    occupant = {}
    stops = {}
    queues = defaultdict(list)
    moves = 0
    for _, agv, action, detail in result.trace:
        if action == "zone":
            link, zone = detail.rsplit(":", 1)
            assert occupant.get((link, int(zone))) is None
            occupant[(link, int(zone))] = agv
            previous = stops.get((agv, link))
            if previous is not None:
                del occupant[(link, previous)]
            stops[(agv, link)] = int(zone)
            moves += 1
        elif action == "enter":
            queues[detail].append(agv)
            if detail in spurs:
                assert len(queues[detail]) == 1
        elif action == "leave":
            assert queues[detail].pop(0) == agv
            del occupant[(detail, stops.pop((agv, detail)))]
    assert moves > len(result.trips)


def test_stalled_workflow_raises_deadlock(tiny_scenario):
    replication = Replication(tiny_scenario.with_horizon(days=1), seed=7)
    replication.dispatcher.dispatch_nearest_idle = lambda task: None
    with pytest.raises(DeadlockError) as info:
        replication.run()
    assert "unfinished" in str(info.value)
    assert "AGV01" in info.value.trace


@pytest.mark.slow
def test_reference_day_completes():
    scenario = load_scenario(REFERENCE_SCENARIO_M).with_horizon(days=1, replications=1)
    result = run_replication(scenario, seed=scenario.seed)
    free = _free_flow(scenario)
    assert result.mean_travel("clean") >= free["clean-M"]
    assert len(result.travel("clean")) == result.days[0].case_count

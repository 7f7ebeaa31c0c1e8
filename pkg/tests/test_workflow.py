import pytest
import simpy

from source.fleet import TripRecord
from source.stochastics import EmpiricalCdf, RngPolicy, TriangularDist
from source.workflow import (
    CART_CYCLE,
    CartState,
    CaseCart,
    FleetPlan,
    KanbanController,
    KanbanError,
    ResourcePools,
    SurgicalCase,
    format_clock,
    generate_day_schedule,
    summarize_days,
    task_completion_time,
)

RELEASE = EmpiricalCdf(((0.25, 0.0), (0.75, 30.0), (0.75, 60.0), (1.0, 90.0)))


def _trip(day, state, pickup, dropoff):
    return TripRecord(0, day, "mon", 1, state, f"{state}-M", pickup, dropoff)


def test_cart_walks_the_whole_cycle():
    cart = CaseCart(7)
    for minute, state in enumerate(CART_CYCLE[1:] + CART_CYCLE[:1], start=1):
        cart.transition(state, float(minute))
    assert cart.state == CartState.AVAILABLE
    assert len(cart.history) == len(CART_CYCLE)


def test_cart_rejects_skipped_states():
    cart = CaseCart(7)
    with pytest.raises(ValueError, match="illegal transition"):
        cart.transition(CartState.IN_OR, 0.0)


def test_cart_binds_to_one_case():
    cart = CaseCart(1)
    cart.bind(10)
    with pytest.raises(ValueError):
        cart.bind(11)
    cart.unbind()
    cart.bind(11)
    assert cart.case_id == 11


def test_case_release_offset_within_day():
    with pytest.raises(ValueError):
        SurgicalCase(1, "mon", 0, release_offset=1440.0)
    assert SurgicalCase(1, "mon", 0, release_offset=1410.0).release_offset == 1410.0


def test_resource_pools():
    env = simpy.Environment()
    pools = ResourcePools(env, cart_pool=3, loading_employees=4, washers=3)
    assert pools.available_carts == 3
    pools.carts.get()
    env.run()
    assert pools.carts_in_use == 1
    assert [c.cart_id for c in pools.carts.items] == [2, 3]


def test_fleet_plan():
    plan = FleetPlan((3, 3, 3, 4, 4))
    assert plan.label == "3-3-3-4-4"
    assert plan.cap("thu") == 4
    assert FleetPlan.from_mapping({"mon": 3, "tue": 3, "wed": 3, "thu": 4, "fri": 4}) == plan
    with pytest.raises(ValueError):
        FleetPlan((0, 3, 3, 3, 3))
    with pytest.raises(ValueError):
        FleetPlan((12, 3, 3, 3, 3))
    with pytest.raises(ValueError):
        FleetPlan((3, 3, 3))


def test_fleet_plan_neighbours_stay_in_bounds():
    corner = FleetPlan.constant(1, pool_size=3)
    neighbours = corner.neighbours()
    assert len(neighbours) == 5
    assert all(max(p.k) == 2 and min(p.k) == 1 for p in neighbours)
    assert len(FleetPlan.constant(2, pool_size=3).neighbours()) == 10


def test_kanban_limits_work_in_progress():
    env = simpy.Environment()
    kanban = KanbanController(env, cap=3)
    events = [kanban.acquire() for _ in range(5)]
    assert [e.triggered for e in events] == [True, True, True, False, False]
    kanban.release()
    assert events[3].triggered and not events[4].triggered
    assert kanban.active == 3
    assert kanban.peak_per_day == {0: 3}


def test_raising_the_cap_grants_waiting_requests():
    env = simpy.Environment()
    kanban = KanbanController(env, cap=3)
    events = [kanban.acquire() for _ in range(5)]
    kanban.set_cap(5, day=1)
    assert all(e.triggered for e in events)
    assert kanban.peak_per_day == {0: 3, 1: 5}
    assert kanban.grants == 5


def test_lowering_the_cap_does_not_preempt():
    env = simpy.Environment()
    kanban = KanbanController(env, cap=3)
    for _ in range(3):
        kanban.acquire()
    kanban.set_cap(1, day=1)
    assert kanban.active == 3
    assert kanban.peak_per_day == {0: 3, 1: 3}
    waiting = kanban.acquire()
    kanban.release()
    kanban.release()
    assert not waiting.triggered
    kanban.release()
    assert waiting.triggered


def test_kanban_errors():
    env = simpy.Environment()
    kanban = KanbanController(env, cap=2)
    with pytest.raises(KanbanError):
        kanban.release()
    with pytest.raises(KanbanError):
        kanban.set_cap(0, day=0)


@pytest.mark.parametrize("minutes, text", [
    (0.0, "8:00:00 AM"),
    (240.0, "12:00:00 PM"),
    (545.0, "5:05:00 PM"),
    (543.0 + 1 / 60.0, "5:03:01 PM"),
    (960.0, "12:00:00 AM"),
])
def test_format_clock(minutes, text):
    assert format_clock(minutes) == text


def test_task_completion_time_uses_clean_trips_only():
    trips = [
        _trip(0, "clean", 425.0, 434.0),
        _trip(0, "soiled", 400.0, 500.0),
        _trip(0, "clean", 520.0, 531.5),
    ]
    assert task_completion_time(trips) == pytest.approx(106.5)
    assert task_completion_time([_trip(0, "washed", 1.0, 2.0)]) is None


def test_summarize_days():
    trips = [
        _trip(0, "clean", 425.0, 434.0),
        _trip(0, "clean", 430.0, 441.0),
        _trip(1, "soiled", 1500.0, 1506.0),
    ]
    days = summarize_days(trips, {0: 2, 1: 0}, {0: "mon", 1: "tue"})
    first, second = days
    assert first.t_c == pytest.approx(16.0)
    assert first.completion_clock == pytest.approx(441.0)
    assert first.completion_clock_text == "3:21:00 PM"
    assert first.clean_mean == pytest.approx(10.0)
    assert first.clean_total == pytest.approx(20.0)
    assert first.trip_count == 2
    assert second.t_c is None
    assert second.soiled_mean == pytest.approx(6.0)
    assert second.completion_clock_text == ""


def test_day_schedule_is_reproducible():
    a = generate_day_schedule("mon", TriangularDist(60, 68, 75), RELEASE, RngPolicy(11, 2))
    b = generate_day_schedule("mon", TriangularDist(60, 68, 75), RELEASE, RngPolicy(11, 2))
    assert a == b
    assert 60 <= len(a) <= 75
    assert {c.release_offset for c in a} <= {0.0, 30.0, 90.0}
    assert [c.case_id for c in a] == list(range(1, len(a) + 1))


def test_day_schedule_ignores_dispatch_draws():
    rng = RngPolicy(11, 0)
    for _ in range(50):
        rng.uniform("dispatch_tiebreak")
    drawn = generate_day_schedule("tue", TriangularDist(65, 72, 76), RELEASE, rng)
    fresh = generate_day_schedule("tue", TriangularDist(65, 72, 76), RELEASE, RngPolicy(11, 0))
    assert drawn == fresh


def test_day_schedule_with_historical_count_and_picking():
    cases = generate_day_schedule(
        "wed", TriangularDist(60, 65, 72), RELEASE, RngPolicy(5), day=3, first_case_id=100,
        picking=TriangularDist(3, 4, 5), count=7,
    )
    assert len(cases) == 7
    assert cases[0].case_id == 100 and cases[0].day == 3
    assert all(3.0 <= c.picking_time <= 5.0 for c in cases)


def test_day_schedule_rejects_weekend():
    with pytest.raises(ValueError):
        generate_day_schedule("sat", TriangularDist(1, 2, 3), RELEASE, RngPolicy(1))

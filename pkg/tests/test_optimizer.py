import itertools
import math

import numpy as np
import pytest

from config.settings import WEEKDAYS
from source.engine import CongestionCounters, RepResult
from source.fleet import TripRecord
from source.optimizer import (
    EvaluationResult,
    FilterCriteria,
    SearchError,
    aggregate,
    default_starts,
    evaluate,
    filter_candidates,
    report,
    search,
)
from source.workflow import DayMetrics, FleetPlan

TWO_DAYS = ("mon", "tue")


def _day(day, weekday, t_c, clock, clean_total, trips):
    return DayMetrics(
        day=day, weekday=weekday, case_count=trips, t_c=t_c, completion_clock=clock,
        clean_mean=clean_total / trips if trips else None, soiled_mean=None, washed_mean=None,
        clean_total=clean_total, trip_count=trips,
    )


def _toy(completion=None, travel=None):
    """Оценщик без модели: цель и T_c считаются прямо по плану."""
    calls = []

    def evaluator(plan):
        calls.append(plan.k)
        value = travel(plan.k) if travel else float(sum(plan.k))
        by_day = {d: (completion(k) if completion else 0.0) for d, k in zip(plan.weekdays, plan.k)}
        return EvaluationResult(plan, total_travel=[value], sum_completion=[sum(by_day.values())],
                                completion_by_weekday=by_day)

    evaluator.calls = calls
    return evaluator


def test_exhaustive_search_matches_brute_force():
    evaluator = _toy(completion=lambda k: 100.0 * (4 - k))
    result = search("min_total_travel", evaluator, budget=9, pool_size=3, weekdays=TWO_DAYS, constraint=200.0)
    assert result.exhaustive
    assert result.evaluations == 9
    assert result.best.plan.k == (2, 2)
    assert [r.feasible for r in result.ranked] == [True] * 4 + [False] * 5
    feasible = [r.objective("min_total_travel") for r in result.ranked if r.feasible]
    assert feasible == sorted(feasible)


def test_exhaustive_search_agrees_with_enumeration_on_random_toys():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pool = int(rng.integers(1, 5))
        weekdays = TWO_DAYS[: int(rng.integers(1, 3))]
        plans = list(itertools.product(range(1, pool + 1), repeat=len(weekdays)))
        travel = {k: float(rng.integers(0, 50)) for k in plans}
        completion = {(d, k): float(rng.uniform(0.0, 300.0)) for d in weekdays for k in range(1, pool + 1)}

        def evaluator(plan):
            by_day = {d: completion[(d, k)] for d, k in zip(plan.weekdays, plan.k)}
            return EvaluationResult(plan, total_travel=[travel[plan.k]], sum_completion=[sum(by_day.values())],
                                    completion_by_weekday=by_day)

        result = search("min_total_travel", evaluator, budget=len(plans), pool_size=pool, weekdays=weekdays,
                        constraint=200.0)
        feasible = [k for k in plans if all(completion[(d, v)] <= 200.0 for d, v in zip(weekdays, k))]
        assert result.exhaustive and result.evaluations == len(plans)
        assert {r.plan.k for r in result.ranked if r.feasible} == set(feasible)
        if feasible:
            assert result.best.plan.k == min(feasible, key=lambda k: (travel[k], k))
        else:
            assert result.best is None


def test_best_first_search_walks_to_the_optimum():
    evaluator = _toy(travel=lambda k: float((k[0] - 2) ** 2 + (k[1] - 4) ** 2))
    starts = [FleetPlan((3, 3), 5, TWO_DAYS), FleetPlan((5, 5), 5, TWO_DAYS)]
    result = search("min_total_travel", evaluator, budget=10, pool_size=5, weekdays=TWO_DAYS, starts=starts)
    assert not result.exhaustive
    assert result.evaluations == 10
    assert len(set(evaluator.calls)) == len(evaluator.calls)
    assert result.best.plan.k == (2, 4)
    assert result.best.objective("min_total_travel") == 0.0


def test_search_without_feasible_plans():
    evaluator = _toy(completion=lambda k: 500.0)
    result = search("min_sum_completion", evaluator, budget=9, pool_size=3, weekdays=TWO_DAYS, constraint=200.0)
    assert result.best is None
    assert len(result.ranked) == 9


def test_search_rejects_bad_settings():
    with pytest.raises(SearchError):
        search("min_total_travel", _toy(), budget=0)
    with pytest.raises(SearchError):
        search("max_happiness", _toy(), budget=5)
    with pytest.raises(SearchError):
        search("min_total_travel", _toy(), budget=5, mode="median")


def test_default_starts_are_capped_by_the_pool():
    assert [p.k for p in default_starts(5, TWO_DAYS)] == [(3, 3), (5, 5)]
    assert [p.label for p in default_starts(11)] == ["3-3-3-3-3", "7-7-7-7-7", "11-11-11-11-11"]


def test_constraint_modes():
    result = EvaluationResult(
        FleetPlan.constant(3),
        completion_by_weekday={"mon": 190.0},
        completion_per_replication=[{"mon": 170.0}, {"mon": 210.0}],
    )
    assert result.meets(200.0)
    assert not result.meets(200.0, mode="replication")
    assert result.meets(None)
    with pytest.raises(SearchError):
        result.meets(200.0, mode="median")
    assert result.objective("min_total_travel") == math.inf


def test_aggregate_over_replications():
    plan = FleetPlan.constant(2, 3)
    first = RepResult(0, 7, [
        TripRecord(0, 0, "mon", 1, "clean", "clean-M", 10.0, 20.0),
        TripRecord(0, 1, "tue", 2, "clean", "clean-M", 1450.0, 1462.0),
    ], [
        _day(0, "mon", 30.0, 440.0, 10.0, 1),
        _day(1, "tue", 50.0, 460.0, 12.0, 1),
    ], CongestionCounters())
    second = RepResult(1, 7, [
        TripRecord(1, 0, "mon", 1, "clean", "clean-M", 10.0, 24.0),
    ], [
        _day(0, "mon", 40.0, 450.0, 14.0, 1),
        _day(1, "tue", None, None, 0.0, 0),
    ], CongestionCounters())

    result = aggregate(plan, [first, second], tc_bound=55.0)
    assert result.replications == 2
    assert result.travel_by_weekday["mon"] == pytest.approx((12.0, 10.0, 14.0))
    assert result.travel_by_weekday["tue"] == pytest.approx((12.0, 12.0, 12.0))
    assert result.completion_by_weekday == pytest.approx({"mon": 35.0, "tue": 50.0})
    assert result.clock_by_weekday == pytest.approx({"mon": 445.0, "tue": 460.0})
    assert (result.min_travel, result.max_travel, result.avg_travel) == pytest.approx((10.0, 14.0, 12.0))
    assert result.avg_completion == pytest.approx(40.0)
    assert result.avg_completion_clock == pytest.approx(450.0)
    assert result.total_travel == pytest.approx([11.0, 7.0])
    assert result.sum_completion == pytest.approx([80.0, 40.0])
    assert result.completion_per_replication == [{"mon": 30.0, "tue": 50.0}, {"mon": 40.0}]
    assert result.objective("min_total_travel") == pytest.approx(9.0)
    assert result.objective("min_sum_completion") == pytest.approx(60.0)
    assert result.feasible
    assert not aggregate(plan, [first, second], tc_bound=45.0).feasible


def _candidate(k, avg_travel, clock):
    return EvaluationResult(FleetPlan.constant(k), avg_travel=avg_travel, avg_completion_clock=clock)


def test_filter_candidates_keeps_order():
    candidates = [
        _candidate(3, 10.0, 500.0),
        _candidate(5, 9.0, 400.0),
        _candidate(2, 13.0, 400.0),
        _candidate(2, 11.0, 546.0),
        _candidate(2, 11.0, None),
        _candidate(2, math.nan, 400.0),
        _candidate(4, 12.0, 545.0),
    ]
    kept = filter_candidates(candidates, FilterCriteria(max_total_daily_agvs=4, max_avg_travel=12.0))
    assert [r.plan.k[0] for r in kept] == [3, 4]
    with pytest.raises(ValueError):
        FilterCriteria(max_avg_travel=0.0)


def test_report_table():
    best = _candidate(3, 10.0, 545.0)
    best.min_travel, best.max_travel = 8.0, 14.0
    table = report([best, _candidate(4, 11.0, None)])
    assert list(table.columns) == ["rank", *WEEKDAYS, "min_travel", "max_travel", "avg_travel",
                                   "avg_completion_clock", "avg_completion_min", "feasible"]
    assert list(table["rank"]) == [1, 2]
    assert table.loc[0, "avg_completion_clock"] == "5:05:00 PM"
    assert table.loc[1, "avg_completion_clock"] == ""
    assert table.loc[0, "thu"] == 3
    assert report([]).empty


def test_evaluate_uses_common_random_numbers(tiny_scenario):
    plan = FleetPlan.constant(1, 3)
    a = evaluate(plan, tiny_scenario, replications=1, seed=7)
    b = evaluate(plan, tiny_scenario, replications=1, seed=7)
    assert a.plan == plan
    assert a.replications == 1
    assert a.total_travel == b.total_travel
    assert a.completion_by_weekday == b.completion_by_weekday
    assert set(a.completion_by_weekday) == {"mon", "tue"}
    assert a.feasible

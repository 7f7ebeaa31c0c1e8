import numpy as np
import pytest

from config.settings import REFERENCE_SCENARIO_M, REFERENCE_SCENARIO_S
from source.engine import days_frame, pooled_travel, run_replication, run_replications
from source.optimizer import (
    EXPERIMENTS,
    LATEST_COMPLETION_MIN,
    FilterCriteria,
    evaluate,
    filter_candidates,
    search,
)
from source.scenario import load_scenario
from source.stochastics import welch_t_test
from source.workflow import FleetPlan

# Эталонная сеть на сокращённом горизонте: 10 рабочих дней, 3 репликации
DAYS, REPS = 10, 3

pytestmark = pytest.mark.slow


def _scenario(path, fleet=None, days=DAYS, reps=REPS):
    scenario = load_scenario(path).with_horizon(days=days, replications=reps)
    if fleet is not None:
        scenario = scenario.with_fleet(FleetPlan.constant(fleet, scenario.fleet.pool_size))
    return scenario


@pytest.fixture(scope="module")
def runs():
    """Прогоны по размеру парка и варианту; общие для всех проверок модуля."""
    cache = {}

    def get(variant, fleet):
        if (variant, fleet) not in cache:
            scenario = _scenario(REFERENCE_SCENARIO_M if variant == "M" else REFERENCE_SCENARIO_S, fleet)
            cache[(variant, fleet)] = run_replications(scenario, scenario.seed)
        return cache[(variant, fleet)]

    return get


def _mean_completion(results):
    return float(days_frame(results)["t_c_min"].dropna().mean())


def test_current_practice_matches_observed_travel(runs):
    travel = pooled_travel(runs("M", 11))
    assert 9.0 <= np.mean(travel["clean"]) <= 10.4
    assert 5.6 <= np.mean(travel["soiled"]) <= 6.9


def test_more_agvs_slow_clean_trips(runs):
    many = pooled_travel(runs("M", 11))["clean"]
    few = pooled_travel(runs("M", 3))["clean"]
    assert np.mean(many) > np.mean(few)
    assert welch_t_test(many, few).p_value < 0.05


def test_completion_time_plateaus(runs):
    t3, t6, t11 = (_mean_completion(runs("M", k)) for k in (3, 6, 11))
    assert t3 > t6
    assert t6 - t11 < 0.2 * (t3 - t6)


def test_swapped_elevators_trade_clean_for_soiled(runs):
    m = pooled_travel(runs("M", 11))
    s = pooled_travel(runs("S", 11))
    assert np.mean(s["soiled"]) < np.mean(m["soiled"])
    assert welch_t_test(s["soiled"], m["soiled"]).p_value < 0.05
    assert np.mean(s["clean"]) > np.mean(m["clean"])
    assert welch_t_test(s["clean"], m["clean"]).p_value < 0.05


@pytest.mark.parametrize("seed", [1, 2, 3, 20230601])
def test_swapped_variant_runs_a_day_without_gridlock(seed):
    scenario = _scenario(REFERENCE_SCENARIO_S, days=1, reps=1)
    result = run_replication(scenario, seed=seed)
    cases = result.days[0].case_count
    assert len(result.travel("clean")) == cases
    assert len(result.travel("soiled")) == cases


def test_travel_objective_uses_fewer_agvs_than_completion_objective():
    scenario = _scenario(REFERENCE_SCENARIO_M, days=5, reps=2)
    seed = scenario.seed
    cache = {}

    def evaluator(plan):
        if plan.k not in cache:
            cache[plan.k] = evaluate(plan, scenario, seed=seed)
        return cache[plan.k]

    baseline = evaluator(scenario.fleet)
    criteria = FilterCriteria(max_avg_travel=baseline.avg_travel)
    kept = {}
    for experiment, (objective, bound) in EXPERIMENTS.items():
        result = search(objective, evaluator, budget=14, constraint=bound)
        kept[experiment] = filter_candidates([r for r in result.ranked if r.feasible], criteria)
        assert kept[experiment]
        assert all(r.avg_completion_clock <= LATEST_COMPLETION_MIN for r in kept[experiment])
    assert sum(kept[1][0].plan.k) < sum(kept[2][0].plan.k)

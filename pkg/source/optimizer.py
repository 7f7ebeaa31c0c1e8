"""
Подбор числа AGV по дням недели: оценка плана на общих случайных числах,
поиск «лучший-первым» с окрестностью ±1 и отбор решений.
"""

import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import AGV_POOL, WEEKDAYS
from .engine import DeadlockError, RepResult, run_replications
from .logger import logger
from .scenario import Scenario
from .workflow import FleetPlan, format_clock

OBJECTIVES = ("min_total_travel", "min_sum_completion")
CONSTRAINT_MODES = ("mean", "replication")

# Эксперименты: цель и ограничение на T_c (минуты)
EXPERIMENTS: Dict[int, Tuple[str, Optional[float]]] = {
    1: ("min_total_travel", 200.0),
    2: ("min_sum_completion", None),
}
START_LEVELS = (3, 7, 11)

# 5:05 pm = 9 ч 05 мин после 8:00
LATEST_COMPLETION_MIN = 545.0


class SearchError(Exception):
    """Неверные настройки поиска."""


@dataclass
class EvaluationResult:
    plan: FleetPlan
    replications: int = 0
    travel_by_weekday: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)
    completion_by_weekday: Dict[str, float] = field(default_factory=dict)
    clock_by_weekday: Dict[str, float] = field(default_factory=dict)
    min_travel: float = math.nan
    max_travel: float = math.nan
    avg_travel: float = math.nan
    avg_completion: Optional[float] = None
    avg_completion_clock: Optional[float] = None
    total_travel: List[float] = field(default_factory=list)
    sum_completion: List[float] = field(default_factory=list)
    completion_per_replication: List[Dict[str, float]] = field(default_factory=list)
    feasible: bool = True

    def objective(self, name: str) -> float:
        if name == "min_total_travel":
            values = self.total_travel
        elif name == "min_sum_completion":
            values = self.sum_completion
        else:
            raise SearchError(f"Unknown objective {name!r}")
        return float(np.mean(values)) if values else math.inf

    def meets(self, bound: Optional[float], mode: str = "mean") -> bool:
        """Ограничение T_c ≤ bound для каждого дня недели: по среднему или в каждой репликации."""
        if bound is None:
            return True
        if mode == "mean":
            return all(v <= bound for v in self.completion_by_weekday.values())
        if mode == "replication":
            return all(v <= bound for rep in self.completion_per_replication for v in rep.values())
        raise SearchError(f"Unknown constraint mode {mode!r}")


@dataclass(frozen=True)
class FilterCriteria:
    max_total_daily_agvs: int = AGV_POOL
    max_avg_travel: float = math.inf
    latest_completion_clock: float = LATEST_COMPLETION_MIN

    def __post_init__(self):
        if self.max_total_daily_agvs <= 0 or self.max_avg_travel <= 0 or self.latest_completion_clock <= 0:
            raise ValueError("Filter thresholds must be positive")


@dataclass
class SearchResult:
    objective: str
    ranked: List[EvaluationResult]
    evaluations: int
    exhaustive: bool = False

    @property
    def best(self) -> Optional[EvaluationResult]:
        feasible = [r for r in self.ranked if r.feasible]
        return feasible[0] if feasible else None


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def aggregate(plan: FleetPlan, results: Sequence[RepResult], tc_bound: Optional[float] = None, mode: str = "mean") -> EvaluationResult:
    """Сводка репликаций одного плана."""
    travel: Dict[str, List[float]] = {d: [] for d in plan.weekdays}
    completion: Dict[str, List[float]] = {d: [] for d in plan.weekdays}
    clocks: Dict[str, List[float]] = {d: [] for d in plan.weekdays}
    all_travel: List[float] = []
    total_travel, sum_completion, per_rep = [], [], []

    for result in results:
        for trip in result.trips:
            travel.setdefault(trip.weekday, []).append(trip.travel_minutes)
            all_travel.append(trip.travel_minutes)
        rep_completion: Dict[str, List[float]] = {}
        for day in result.days:
            if day.t_c is not None:
                completion.setdefault(day.weekday, []).append(day.t_c)
                clocks.setdefault(day.weekday, []).append(day.completion_clock)
                rep_completion.setdefault(day.weekday, []).append(day.t_c)
        total_travel.append(float(np.mean([d.clean_total for d in result.days])) if result.days else 0.0)
        sum_completion.append(float(sum(d.t_c for d in result.days if d.t_c is not None)))
        per_rep.append({d: float(np.mean(v)) for d, v in rep_completion.items()})

    evaluation = EvaluationResult(
        plan=plan,
        replications=len(results),
        travel_by_weekday={
            d: (float(np.mean(v)), float(np.min(v)), float(np.max(v))) for d, v in travel.items() if v
        },
        completion_by_weekday={d: float(np.mean(v)) for d, v in completion.items() if v},
        clock_by_weekday={d: float(np.mean(v)) for d, v in clocks.items() if v},
        min_travel=float(np.min(all_travel)) if all_travel else math.nan,
        max_travel=float(np.max(all_travel)) if all_travel else math.nan,
        avg_travel=float(np.mean(all_travel)) if all_travel else math.nan,
        avg_completion=_mean([v for vs in completion.values() for v in vs]),
        avg_completion_clock=_mean([v for vs in clocks.values() for v in vs]),
        total_travel=total_travel,
        sum_completion=sum_completion,
        completion_per_replication=per_rep,
    )
    evaluation.feasible = evaluation.meets(tc_bound, mode)
    return evaluation


def evaluate(
    plan: FleetPlan,
    scenario: Scenario,
    replications: Optional[int] = None,
    seed: int = 0,
    jobs: int = 1,
    tc_bound: Optional[float] = None,
    mode: str = "mean",
) -> EvaluationResult:
    """
    Оценка плана: репликации с теми же потоками ГСЧ, что и у любого другого плана.

    Args:
        plan: число AGV по дням недели
        scenario: сценарий (его парк заменяется планом)
        replications: число репликаций (по умолчанию из сценария)
        seed: главное зерно; репликация r всегда получает потоки (seed, r)
        tc_bound: ограничение на T_c, минуты

    Returns:
        EvaluationResult
    """
    try:
        results = run_replications(scenario.with_fleet(plan), seed, replications, jobs)
    except DeadlockError as e:
        raise DeadlockError(f"plan {plan.label}: {e.args[0].splitlines()[0]}", e.trace) from e
    evaluation = aggregate(plan, results, tc_bound, mode)
    logger.info(
        f"Plan {plan.label}: avg travel {evaluation.avg_travel:.3f} min, "
        f"sum T_c {evaluation.objective('min_sum_completion'):.1f}, feasible={evaluation.feasible}"
    )
    return evaluation


def default_starts(pool_size: int, weekdays: Tuple[str, ...] = WEEKDAYS) -> List[FleetPlan]:
    plans = []
    for level in START_LEVELS:
        plan = FleetPlan.constant(min(level, pool_size), pool_size, weekdays)
        if plan not in plans:
            plans.append(plan)
    return plans


def search(
    objective: str,
    evaluator: Callable[[FleetPlan], EvaluationResult],
    budget: int,
    pool_size: int = AGV_POOL,
    weekdays: Tuple[str, ...] = WEEKDAYS,
    constraint: Optional[float] = None,
    mode: str = "mean",
    starts: Optional[Sequence[FleetPlan]] = None,
) -> SearchResult:
    """
    Поиск «лучший-первым» по планам парка.

    Старт: планы «все по 3, 7, 11»; раскрывается лучший ещё не раскрытый
    допустимый план, его соседи (±1 в один день) оцениваются в порядке
    возрастания плана. Если бюджет покрывает всё пространство, перебираются
    все планы. Возвращаются все оценённые планы: допустимые по возрастанию цели,
    затем недопустимые.
    """
    if objective not in OBJECTIVES:
        raise SearchError(f"Unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if budget < 1:
        raise SearchError("Search budget must be at least one evaluation")
    if mode not in CONSTRAINT_MODES:
        raise SearchError(f"Unknown constraint mode {mode!r}")

    evaluated: Dict[Tuple[int, ...], EvaluationResult] = {}

    def run(plan: FleetPlan) -> Optional[EvaluationResult]:
        if plan.k in evaluated or len(evaluated) >= budget:
            return None
        result = evaluator(plan)
        result = replace(result, plan=plan, feasible=result.meets(constraint, mode))
        evaluated[plan.k] = result
        return result

    space = pool_size ** len(weekdays)
    exhaustive = budget >= space
    if exhaustive:
        for k in itertools.product(range(1, pool_size + 1), repeat=len(weekdays)):
            run(FleetPlan(k, pool_size, weekdays))
    else:
        frontier: List[Tuple[float, Tuple[int, ...]]] = []
        for plan in starts if starts is not None else default_starts(pool_size, weekdays):
            result = run(plan)
            if result is not None and result.feasible:
                heapq.heappush(frontier, (result.objective(objective), plan.k))
        while frontier and len(evaluated) < budget:
            _, k = heapq.heappop(frontier)
            for neighbour in sorted(evaluated[k].plan.neighbours(), key=lambda p: p.k):
                result = run(neighbour)
                if result is not None and result.feasible:
                    heapq.heappush(frontier, (result.objective(objective), neighbour.k))

    ranked = sorted(evaluated.values(), key=lambda r: (not r.feasible, r.objective(objective), r.plan.k))
    logger.info(f"Search {objective}: {len(evaluated)} plan(s) evaluated, exhaustive={exhaustive}")
    return SearchResult(objective, ranked, len(evaluated), exhaustive)


def filter_candidates(results: Sequence[EvaluationResult], criteria: FilterCriteria) -> List[EvaluationResult]:
    """Решения, пригодные к внедрению: порядок входа сохраняется."""
    kept = []
    for result in results:
        if max(result.plan.k) > criteria.max_total_daily_agvs:
            continue
        if not result.avg_travel <= criteria.max_avg_travel:
            continue
        if result.avg_completion_clock is None or result.avg_completion_clock > criteria.latest_completion_clock:
            continue
        kept.append(result)
    return kept


def report(results: Sequence[EvaluationResult]) -> pd.DataFrame:
    """Таблица планов: ранг, AGV по дням, времена поездок и время завершения."""
    weekdays = results[0].plan.weekdays if results else WEEKDAYS
    columns = ["rank", *weekdays, "min_travel", "max_travel", "avg_travel",
               "avg_completion_clock", "avg_completion_min", "feasible"]
    rows = []
    for rank, result in enumerate(results, start=1):
        row = {"rank": rank}
        row.update(dict(zip(result.plan.weekdays, result.plan.k)))
        clock = result.avg_completion_clock
        row.update({
            "min_travel": result.min_travel,
            "max_travel": result.max_travel,
            "avg_travel": result.avg_travel,
            "avg_completion_clock": format_clock(clock) if clock is not None else "",
            "avg_completion_min": clock,
            "feasible": result.feasible,
        })
        rows.append(row)
    return pd.DataFrame.from_records(rows, columns=columns)

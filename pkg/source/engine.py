"""
Один прогон модели (репликация) и серия прогонов.

Прогон собирает сеть, парк AGV, ограничение Kanban и потоки тележек на одном
календаре событий simpy и отрабатывает горизонт до полного опустошения конвейера.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence

import pandas as pd
import simpy

from .fleet import Agv, Dispatcher, TripRecord
from .logger import logger
from .scenario import Scenario
from .stochastics import RngPolicy
from .traffic import Network, OccupancyLedger
from .workflow import DayMetrics, KanbanController, Workflow, summarize_days

TRIP_COLUMNS = ["rep", "day", "weekday", "cart_id", "cart_state", "route", "pickup_min", "dropoff_min", "travel_min"]
DAY_COLUMNS = [
    "rep", "day", "weekday", "case_count", "t_c_min", "completion_min", "completion_clock",
    "clean_mean", "soiled_mean", "washed_mean", "clean_total", "trips", "kanban_peak",
]


class DeadlockError(Exception):
    """Календарь опустел, а тележки ещё в пути; trace: состояние сети и AGV."""

    def __init__(self, message: str, trace: str = ""):
        self.trace = trace
        super().__init__(f"{message}\n{trace}" if trace else message)


@dataclass
class CongestionCounters:
    blocked_minutes: Dict[str, float] = field(default_factory=dict)
    gate_holds: int = 0
    gate_hold_minutes: float = 0.0
    elevator_cycles: Dict[str, int] = field(default_factory=dict)
    cart_shortage_minutes: float = 0.0
    ledger_peak: Dict[str, int] = field(default_factory=dict)
    kanban_peak: Dict[int, int] = field(default_factory=dict)


@dataclass
class RepResult:
    replication: int
    seed: int
    trips: List[TripRecord]
    days: List[DayMetrics]
    congestion: CongestionCounters
    trace: Optional[list] = None

    def travel(self, cart_state: str) -> List[float]:
        return [t.travel_minutes for t in self.trips if t.cart_state == cart_state]

    def mean_travel(self, cart_state: str) -> Optional[float]:
        values = self.travel(cart_state)
        return sum(values) / len(values) if values else None


class Replication:
    def __init__(self, scenario: Scenario, seed: int, replication: int = 0, trace: bool = False):
        self.scenario = scenario
        self.seed = seed
        self.replication = replication
        self.env = simpy.Environment()
        self.trace: Optional[list] = [] if trace else None
        self.rng = RngPolicy(seed, replication)
        self.ledger = OccupancyLedger()
        self.network = Network(
            self.env,
            scenario.network,
            scenario.kinematics,
            self.ledger,
            tiebreak=lambda: self.rng.uniform("dispatch_tiebreak"),
            trace=self.trace,
        )
        self.dispatcher = Dispatcher(self.network, tiebreak=lambda: self.rng.uniform("dispatch_tiebreak"))
        for index in range(scenario.fleet.pool_size):
            self.dispatcher.add(Agv(self.env, f"AGV{index + 1:02d}", self.network, self.dispatcher, scenario.transfer_s / 60.0))
        self.kanban = KanbanController(self.env, scenario.fleet.cap(scenario.weekday(0)))
        self.workflow = Workflow(
            self.env, scenario, self.network, self.dispatcher, self.kanban, self.rng, replication
        )

    def _diagnostics(self) -> str:
        lines = [f"clock {self.env.now:.3f} min, open cart flows {self.workflow.open_flows}"]
        for agv in self.dispatcher.agvs:
            state = agv.state
            lines.append(f"{agv.id}: {state.phase.value} at {state.location} task={state.current_task}")
        lines.append(f"dispatch queue: {len(self.dispatcher.queue)}, kanban active {self.kanban.active}/{self.kanban.cap}")
        lines.append(self.network.describe())
        if self.trace:
            lines += [f"{t:.3f} {agv} {action} {detail}" for t, agv, action, detail in self.trace[-20:]]
        return "\n".join(lines)

    def run(self) -> RepResult:
        self.env.run()
        if self.workflow.open_flows:
            raise DeadlockError(
                f"Replication {self.replication}: no events left with {self.workflow.open_flows} cart flow(s) unfinished",
                self._diagnostics(),
            )

        workflow = self.workflow
        blocked = {route: causes.get("blocked", 0.0) for route, causes in sorted(workflow.delays.items())}
        congestion = CongestionCounters(
            blocked_minutes=blocked,
            gate_holds=self.network.gates.holds,
            gate_hold_minutes=self.network.gates.hold_minutes,
            elevator_cycles={e.id: e.state.cycles for e in self.network.elevators.values()},
            cart_shortage_minutes=workflow.cart_shortage_minutes,
            ledger_peak=dict(sorted(self.ledger.peak.items())),
            kanban_peak=dict(self.kanban.peak_per_day),
        )
        days = summarize_days(workflow.trips, workflow.case_counts, workflow.weekdays)
        return RepResult(self.replication, self.seed, list(workflow.trips), days, congestion, self.trace)


def run_replication(scenario: Scenario, seed: int, replication: int = 0, trace: bool = False) -> RepResult:
    """
    Один прогон сценария.

    Args:
        scenario: проверенный сценарий
        seed: главное зерно ГСЧ
        replication: номер репликации (отдельные потоки ГСЧ)
        trace: сохранять журнал событий сети

    Returns:
        RepResult: поездки, дневные показатели, счётчики заторов
    """
    result = Replication(scenario, seed, replication, trace).run()
    logger.debug(f"Replication {replication} finished: {len(result.trips)} trips")
    return result


def _run_one(args) -> RepResult:
    scenario, seed, replication = args
    return run_replication(scenario, seed, replication)


def run_replications(scenario: Scenario, seed: int, replications: Optional[int] = None, jobs: int = 1) -> List[RepResult]:
    """Независимые репликации; результаты всегда в порядке номеров."""
    count = replications if replications is not None else scenario.replications
    tasks = [(scenario, seed, r) for r in range(count)]
    if jobs > 1 and count > 1:
        with Pool(jobs) as pool:
            results = pool.map(_run_one, tasks)
    else:
        results = [_run_one(t) for t in tasks]
    logger.info(f"{count} replication(s) of variant {scenario.variant}, fleet {scenario.fleet.label} done")
    return results


def trips_frame(results: Sequence[RepResult]) -> pd.DataFrame:
    rows = [
        {
            "rep": t.replication,
            "day": t.day,
            "weekday": t.weekday,
            "cart_id": t.cart_id,
            "cart_state": t.cart_state,
            "route": t.route,
            "pickup_min": t.pickup_time,
            "dropoff_min": t.dropoff_time,
            "travel_min": t.travel_minutes,
        }
        for result in results
        for t in result.trips
    ]
    return pd.DataFrame.from_records(rows, columns=TRIP_COLUMNS)


def days_frame(results: Sequence[RepResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        for d in result.days:
            rows.append({
                "rep": result.replication,
                "day": d.day,
                "weekday": d.weekday,
                "case_count": d.case_count,
                "t_c_min": d.t_c,
                "completion_min": d.completion_clock,
                "completion_clock": d.completion_clock_text,
                "clean_mean": d.clean_mean,
                "soiled_mean": d.soiled_mean,
                "washed_mean": d.washed_mean,
                "clean_total": d.clean_total,
                "trips": d.trip_count,
                "kanban_peak": result.congestion.kanban_peak.get(d.day, 0),
            })
    return pd.DataFrame.from_records(rows, columns=DAY_COLUMNS)


def congestion_frame(results: Sequence[RepResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        c = result.congestion
        row = {
            "rep": result.replication,
            "gate_holds": c.gate_holds,
            "gate_hold_min": c.gate_hold_minutes,
            "cart_shortage_min": c.cart_shortage_minutes,
        }
        row.update({f"blocked_{route}": minutes for route, minutes in c.blocked_minutes.items()})
        row.update({f"elevator_{e}_cycles": n for e, n in sorted(c.elevator_cycles.items())})
        rows.append(row)
    return pd.DataFrame.from_records(rows).fillna(0.0)


def pooled_travel(results: Sequence[RepResult]) -> Dict[str, List[float]]:
    """Времена поездок всех репликаций по типам тележек."""
    pooled: Dict[str, List[float]] = defaultdict(list)
    for result in results:
        for trip in result.trips:
            pooled[trip.cart_state].append(trip.travel_minutes)
    return dict(pooled)

"""
Потоки тележек: чистая (MD → CCSA), грязная (SCSA → CSSD) и мытая (CSSD → MD).

Здесь же ограничение Kanban на число AGV в работе, генератор дневного
расписания операций и дневные показатели (время выполнения задач T_c).
"""

from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import simpy

from config.settings import AGV_POOL, CLEAN_START_MIN, DAY_MINUTES, WEEKDAYS
from .fleet import Dispatcher, Task, TripRecord
from .logger import logger
from .stochastics import (
    Distribution,
    EmpiricalCdf,
    RngPolicy,
    TriangularDist,
    sample,
    sample_discrete_cdf_many,
    sample_triangular,
)
from .traffic import Network

if TYPE_CHECKING:
    from .scenario import Scenario


class CartState(str, Enum):
    AVAILABLE = "available"
    CLEAN_LOADING = "clean_loading"
    CLEAN_TRANSIT = "clean_transit"
    STORED_CCSA = "stored_CCSA"
    IN_OR = "in_OR"
    SOILED_WAITING = "soiled_waiting"
    SOILED_TRANSIT = "soiled_transit"
    WASHING = "washing"
    WASHED_TRANSIT = "washed_transit"
    DRYING = "drying"


CART_CYCLE = (
    CartState.AVAILABLE,
    CartState.CLEAN_LOADING,
    CartState.CLEAN_TRANSIT,
    CartState.STORED_CCSA,
    CartState.IN_OR,
    CartState.SOILED_WAITING,
    CartState.SOILED_TRANSIT,
    CartState.WASHING,
    CartState.WASHED_TRANSIT,
    CartState.DRYING,
)


class KanbanError(Exception):
    """Освобождение AGV без парного захвата: внутренняя ошибка модели."""


@dataclass
class CaseCart:
    cart_id: int
    case_id: Optional[int] = None
    state: CartState = CartState.AVAILABLE
    history: List[Tuple[CartState, float]] = field(default_factory=list)

    def transition(self, new_state: CartState, now: float):
        """Переход только в следующее состояние цикла."""
        expected = CART_CYCLE[(CART_CYCLE.index(self.state) + 1) % len(CART_CYCLE)]
        if new_state != expected:
            raise ValueError(f"Cart {self.cart_id}: illegal transition {self.state.value} -> {new_state.value}")
        self.state = new_state
        self.history.append((new_state, now))

    def bind(self, case_id: int):
        if self.case_id is not None:
            raise ValueError(f"Cart {self.cart_id} is already bound to case {self.case_id}")
        self.case_id = case_id

    def unbind(self):
        self.case_id = None


@dataclass(frozen=True)
class SurgicalCase:
    case_id: int
    weekday: str
    day: int
    release_offset: float
    picking_time: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.release_offset < DAY_MINUTES:
            raise ValueError(f"Case {self.case_id}: release offset {self.release_offset} outside [0, {DAY_MINUTES:g})")


class ResourcePools:
    """Тележки, сотрудники комплектации и мойки одного прогона."""

    def __init__(self, env: simpy.Environment, cart_pool: int, loading_employees: int, washers: int):
        self.cart_pool = cart_pool
        self.carts = simpy.Store(env, capacity=cart_pool)
        self.carts.items.extend(CaseCart(i + 1) for i in range(cart_pool))
        self.employees = simpy.Resource(env, capacity=loading_employees)
        self.washers = simpy.Resource(env, capacity=washers)

    @property
    def available_carts(self) -> int:
        return len(self.carts.items)

    @property
    def carts_in_use(self) -> int:
        return self.cart_pool - self.available_carts


@dataclass(frozen=True)
class FleetPlan:
    """Число AGV в работе по дням недели (ограничение Kanban k)."""
    k: Tuple[int, ...]
    pool_size: int = AGV_POOL
    weekdays: Tuple[str, ...] = WEEKDAYS

    def __post_init__(self):
        if len(self.k) != len(self.weekdays):
            raise ValueError(f"Fleet plan needs {len(self.weekdays)} values, got {len(self.k)}")
        for weekday, value in zip(self.weekdays, self.k):
            if not 1 <= value <= self.pool_size:
                raise ValueError(f"Fleet size for {weekday} must be in [1, {self.pool_size}], got {value}")

    @classmethod
    def constant(cls, value: int, pool_size: int = AGV_POOL, weekdays: Tuple[str, ...] = WEEKDAYS) -> "FleetPlan":
        return cls(tuple(value for _ in weekdays), pool_size, weekdays)

    @classmethod
    def from_mapping(cls, values: Dict[str, int], pool_size: int = AGV_POOL) -> "FleetPlan":
        missing = [d for d in WEEKDAYS if d not in values]
        if missing:
            raise ValueError(f"Fleet plan misses weekdays: {missing}")
        return cls(tuple(int(values[d]) for d in WEEKDAYS), pool_size, WEEKDAYS)

    def cap(self, weekday: str) -> int:
        return self.k[self.weekdays.index(weekday)]

    @property
    def label(self) -> str:
        return "-".join(str(v) for v in self.k)

    def neighbours(self) -> List["FleetPlan"]:
        """Планы, отличающиеся на ±1 AGV в один день недели."""
        result = []
        for i in range(len(self.k)):
            for delta in (-1, 1):
                value = self.k[i] + delta
                if 1 <= value <= self.pool_size:
                    k = list(self.k)
                    k[i] = value
                    result.append(FleetPlan(tuple(k), self.pool_size, self.weekdays))
        return result


class KanbanController:
    """
    Kanban, где контейнеры это AGV: в работе одновременно не больше k на текущий день.

    Заявки сверх лимита ждут в FIFO-очереди. Пик дня обновляется при каждой
    смене лимита и числа AGV в работе, так что перенос с прошлого дня выше
    нового лимита тоже виден.
    """

    def __init__(self, env: simpy.Environment, cap: int = 1):
        self.env = env
        self.cap = cap
        self.day = 0
        self.active = 0
        self.queue: Deque[simpy.Event] = deque()
        self.peak_per_day: Dict[int, int] = {}
        self.grants = 0

    def set_cap(self, cap: int, day: int):
        if cap < 1:
            raise KanbanError(f"Kanban cap must be positive, got {cap}")
        self.cap = cap
        self.day = day
        self._sample()
        if self.active > cap:
            logger.debug(f"Kanban day {day}: {self.active} AGV(s) carried over a cap of {cap}")
        self._grant_waiting()

    def acquire(self) -> simpy.Event:
        event = self.env.event()
        if self.active < self.cap and not self.queue:
            self._grant(event)
        else:
            self.queue.append(event)
        return event

    def release(self):
        if self.active <= 0:
            raise KanbanError("Kanban release without a matching acquire")
        self.active -= 1
        self._sample()
        self._grant_waiting()

    def _sample(self):
        self.peak_per_day[self.day] = max(self.peak_per_day.get(self.day, 0), self.active)

    def _grant_waiting(self):
        while self.queue and self.active < self.cap:
            self._grant(self.queue.popleft())

    def _grant(self, event: simpy.Event):
        self.active += 1
        self.grants += 1
        self._sample()
        event.succeed()


@dataclass
class DayMetrics:
    day: int
    weekday: str
    case_count: int
    t_c: Optional[float]
    completion_clock: Optional[float]
    clean_mean: Optional[float]
    soiled_mean: Optional[float]
    washed_mean: Optional[float]
    clean_total: float
    trip_count: int

    @property
    def completion_clock_text(self) -> str:
        return format_clock(self.completion_clock) if self.completion_clock is not None else ""


def format_clock(minutes_past_8am: float) -> str:
    """Минуты от 8:00 в виде «5:03:01 PM»."""
    seconds = int(round(minutes_past_8am * 60.0)) + 8 * 3600
    hours = (seconds // 3600) % 24
    minutes = (seconds // 60) % 60
    secs = seconds % 60
    suffix = "AM" if hours < 12 else "PM"
    return f"{hours % 12 or 12}:{minutes:02d}:{secs:02d} {suffix}"


def task_completion_time(trips: Iterable[TripRecord]) -> Optional[float]:
    """
    Время выполнения задач дня: последняя выгрузка чистой тележки минус первая погрузка.

    Args:
        trips: поездки одного дня (нечистые отбрасываются)

    Returns:
        Минуты или None, если чистых поездок не было
    """
    clean = [t for t in trips if t.cart_state == "clean"]
    if not clean:
        return None
    return max(t.dropoff_time for t in clean) - min(t.pickup_time for t in clean)


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def summarize_days(
    trips: Sequence[TripRecord],
    case_counts: Dict[int, int],
    weekdays: Dict[int, str],
    day_minutes: float = DAY_MINUTES,
) -> List[DayMetrics]:
    by_day: Dict[int, List[TripRecord]] = defaultdict(list)
    for trip in trips:
        by_day[trip.day].append(trip)

    result = []
    for day in sorted(case_counts):
        day_trips = by_day.get(day, [])
        travel = defaultdict(list)
        for trip in day_trips:
            travel[trip.cart_state].append(trip.travel_minutes)
        clean = [t for t in day_trips if t.cart_state == "clean"]
        clock = max(t.dropoff_time for t in clean) - day * day_minutes if clean else None
        result.append(DayMetrics(
            day=day,
            weekday=weekdays[day],
            case_count=case_counts[day],
            t_c=task_completion_time(day_trips),
            completion_clock=clock,
            clean_mean=_mean(travel["clean"]),
            soiled_mean=_mean(travel["soiled"]),
            washed_mean=_mean(travel["washed"]),
            clean_total=float(sum(travel["clean"])),
            trip_count=len(day_trips),
        ))
    return result


def generate_day_schedule(
    weekday: str,
    case_count_dist: TriangularDist,
    release_cdf: EmpiricalCdf,
    rng: RngPolicy,
    day: int = 0,
    first_case_id: int = 1,
    picking: Optional[Distribution] = None,
    count: Optional[int] = None,
) -> List[SurgicalCase]:
    """
    Операции одного дня.

    Число операций: round(TRIA) из потока case_count (или заданное count для
    исторических данных); смещение выпуска грязной тележки: из эмпирической
    функции распределения дня недели; время комплектации: из потока picking_time.
    """
    if weekday not in WEEKDAYS:
        raise ValueError(f"Unknown weekday {weekday!r}")
    n = int(round(sample_triangular(case_count_dist, rng.uniform("case_count")))) if count is None else int(count)
    offsets = sample_discrete_cdf_many(release_cdf, rng.stream("release_time").random(n))
    picking_u = rng.stream("picking_time").random(n)
    return [
        SurgicalCase(
            case_id=first_case_id + i,
            weekday=weekday,
            day=day,
            release_offset=float(offsets[i]),
            picking_time=float(sample(picking, picking_u[i])) if picking is not None else 4.0,
        )
        for i in range(n)
    ]


class Workflow:
    """Жизненный цикл тележек за весь горизонт одного прогона."""

    def __init__(
        self,
        env: simpy.Environment,
        scenario: "Scenario",
        network: Network,
        dispatcher: Dispatcher,
        kanban: KanbanController,
        rng: RngPolicy,
        replication: int = 0,
    ):
        self.env = env
        self.scenario = scenario
        self.network = network
        self.dispatcher = dispatcher
        self.kanban = kanban
        self.rng = rng
        self.replication = replication
        self.pools = ResourcePools(env, scenario.cart_pool, scenario.loading_employees, scenario.washers)
        self.trips: List[TripRecord] = []
        self.schedules: Dict[int, List[SurgicalCase]] = {}
        self.weekdays: Dict[int, str] = {}
        self.delays: Dict[str, Dict[str, float]] = defaultdict(lambda: defaultdict(float))
        self.cart_shortage_minutes = 0.0
        self.open_flows = 0
        self._stored: Dict[int, simpy.Event] = {}
        self._next_case = 1
        self._short_days = set()
        self.process = env.process(self.run())

    @property
    def case_counts(self) -> Dict[int, int]:
        return {day: len(cases) for day, cases in self.schedules.items()}

    def run(self):
        env = self.env
        days = self.scenario.horizon
        for day in range(days + 1):
            start = day * DAY_MINUTES
            yield env.timeout(start - env.now)
            if day < days:
                weekday = self.scenario.weekday(day)
                self.weekdays[day] = weekday
                self.kanban.set_cap(self.scenario.fleet.cap(weekday), day)
            for case in self.schedules.get(day - 1, []):
                self._spawn(self.soiled_flow(case, start))
            if day == days:
                break

            cases = self._schedule(day)
            logger.debug(f"Rep {self.replication} day {day} ({self.weekdays[day]}): {len(cases)} cases")
            yield env.timeout(CLEAN_START_MIN)
            for case in cases:
                self._spawn(self.clean_flow(case))

    def _schedule(self, day: int) -> List[SurgicalCase]:
        scenario = self.scenario
        weekday = self.weekdays[day]
        cases = generate_day_schedule(
            weekday,
            scenario.case_counts[weekday],
            scenario.release[weekday],
            self.rng,
            day=day,
            first_case_id=self._next_case,
            picking=scenario.picking,
            count=scenario.historical_count(day),
        )
        self._next_case += len(cases)
        self.schedules[day] = cases
        for case in cases:
            self._stored[case.case_id] = self.env.event()
        return cases

    def _spawn(self, flow):
        self.open_flows += 1

        def wrapped():
            yield from flow
            self.open_flows -= 1

        self.env.process(wrapped())

    def _haul(self, cart: CaseCart, case: SurgicalCase, cart_state: str, transit: CartState):
        """Заявка на AGV от детента станции погрузки до выгрузки тележки."""
        env = self.env
        spec = self.network.spec
        route = spec.route(cart_state)
        origin = spec.origin_of(route)
        destination = spec.destination_of(route)
        holder = f"cart{cart.cart_id}"

        detent = self.network.detents[origin.id]
        yield detent.request(holder)
        yield self.kanban.acquire()

        task = Task(
            cart_id=cart.cart_id,
            cart_state=cart_state,
            route=route,
            origin=origin,
            destination=destination,
            requested_at=env.now,
            day=case.day,
            weekday=case.weekday,
            replication=self.replication,
            picked_up=env.event(),
            done=env.event(),
        )
        self.dispatcher.dispatch_nearest_idle(task)
        yield task.picked_up
        detent.release(holder)
        cart.transition(transit, env.now)

        record = yield task.done
        if task.reservation is not None:
            self.network.detents[destination.id].release(task.reservation)
        self.kanban.release()
        for cause, minutes in task.leg.delays.items():
            self.delays[route.id][cause] += minutes
        self.trips.append(record)
        return record

    def clean_flow(self, case: SurgicalCase):
        env = self.env
        asked = env.now
        cart = yield self.pools.carts.get()
        waited = env.now - asked
        if waited > 0:
            self.cart_shortage_minutes += waited
            if case.day not in self._short_days:
                self._short_days.add(case.day)
                logger.warning(f"Rep {self.replication} day {case.day}: cart pool exhausted, cases wait for carts")
        cart.bind(case.case_id)
        cart.transition(CartState.CLEAN_LOADING, env.now)

        with self.pools.employees.request() as request:
            yield request
            yield env.timeout(case.picking_time)

        yield from self._haul(cart, case, "clean", CartState.CLEAN_TRANSIT)
        cart.transition(CartState.STORED_CCSA, env.now)
        self._stored[case.case_id].succeed(cart)

    def soiled_flow(self, case: SurgicalCase, day_start: float):
        env = self.env
        cart = yield self._stored[case.case_id]
        cart.transition(CartState.IN_OR, env.now)
        yield env.timeout(max(0.0, day_start + case.release_offset - env.now))
        cart.transition(CartState.SOILED_WAITING, env.now)

        yield from self._haul(cart, case, "soiled", CartState.SOILED_TRANSIT)
        cart.transition(CartState.WASHING, env.now)
        self._spawn(self.washed_flow(cart, case))

    def washed_flow(self, cart: CaseCart, case: SurgicalCase):
        env = self.env
        with self.pools.washers.request() as request:
            yield request
            yield env.timeout(self.scenario.wash_cycle_min)

        yield from self._haul(cart, case, "washed", CartState.WASHED_TRANSIT)
        cart.transition(CartState.DRYING, env.now)
        yield env.timeout(self.scenario.drying_min)
        cart.transition(CartState.AVAILABLE, env.now)
        cart.unbind()
        yield self.pools.carts.put(cart)

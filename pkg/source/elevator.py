"""
Логика лифта для AGV.

Лифт обслуживает партии: голова очереди допуска задаёт сторону, к ней
добавляются попутчики с той же стороны до заполнения кабины. Пока есть место
и с той же стороны уже ждёт следующий AGV, закрытие двери откладывается.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, List, Optional, Set, Tuple

import simpy

from .layout import Elevator
from .logger import logger


class DoorPhase(str, Enum):
    OPEN = "open"
    CLOSED = "closed"
    CYCLING = "cycling"


@dataclass
class ElevatorState:
    elevator_id: str
    car_level: str
    occupants: Set[str] = field(default_factory=set)
    door_phase: DoorPhase = DoorPhase.CLOSED
    holding_for_follower: bool = False
    cycles: int = 0


class Admission:
    """Допуск одного AGV в ближайший рейс лифта."""

    def __init__(self, env: simpy.Environment, controller: "ElevatorController", agv_id: str, side: str):
        self.controller = controller
        self.agv_id = agv_id
        self.side = side
        self.requested_at = env.now
        self.granted = env.event()
        self.ready = env.event()
        self.ride_done = env.event()
        self.boarded = False


class ElevatorController:
    def __init__(
        self,
        env: simpy.Environment,
        elevator: Elevator,
        levels: Tuple[str, str],
        ledger,
        trace: Optional[list] = None,
    ):
        self.env = env
        self.spec = elevator
        self.levels = levels
        self.ledger = ledger
        self.trace = trace
        home = elevator.home_level if elevator.home_level in levels else levels[0]
        self.state = ElevatorState(elevator.id, car_level=home)
        self.queue: Deque[Admission] = deque()
        self.batch: List[Admission] = []
        self.batch_side: Optional[str] = None
        self.accepting = False
        self.exiting: Set[str] = set()
        self.listeners: List[Callable[[], None]] = []
        self._signal = env.event()
        self.slot_name = f"elevator:{elevator.id}"
        ledger.register(self.slot_name, elevator.agv_capacity)
        self.process = env.process(self._run())

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def capacity(self) -> int:
        return self.spec.agv_capacity

    @property
    def door_minutes(self) -> float:
        return self.spec.door_delay / 60.0

    @property
    def ride_minutes(self) -> float:
        return self.spec.ride_s / 60.0

    @property
    def nominal_minutes(self) -> float:
        """Закрытие, поездка и открытие: минимальная стоимость рейса для пассажира."""
        return 2.0 * self.door_minutes + self.ride_minutes

    def other(self, level: str) -> str:
        return self.levels[1] if level == self.levels[0] else self.levels[0]

    def is_free(self, side: str) -> bool:
        if self.exiting:
            return False
        if self.batch_side is None:
            return not self.queue
        return (
            self.accepting
            and self.batch_side == side
            and len(self.batch) < self.capacity
            and not self.queue
        )

    def load(self) -> int:
        """Сколько AGV уже ждёт или едет (для выбора лифта в группе)."""
        return len(self.queue) + len(self.batch)

    def request(self, agv_id: str, side: str) -> Admission:
        if side not in self.levels:
            raise ValueError(f"Elevator {self.id} does not serve level {side}")
        admission = Admission(self.env, self, agv_id, side)
        self.queue.append(admission)
        self._log("request", agv_id, side)
        self._poke()
        return admission

    def board(self, admission: Admission):
        self.ledger.acquire(self.slot_name, admission.agv_id)
        self.state.occupants.add(admission.agv_id)
        admission.boarded = True
        self._log("board", admission.agv_id, admission.side)
        self._poke()

    def alight(self, agv_id: str):
        self.ledger.release(self.slot_name, agv_id)
        self.state.occupants.discard(agv_id)

    def clear(self, agv_id: str):
        """AGV полностью покинул выездное ответвление лифта."""
        self.exiting.discard(agv_id)
        self._poke()

    def _log(self, action: str, agv_id: str, detail: str = ""):
        if self.trace is not None:
            self.trace.append((self.env.now, agv_id, f"elevator_{action}", f"{self.id}:{detail}"))

    def _poke(self):
        if not self._signal.triggered:
            self._signal.succeed()

    def _wait(self) -> simpy.Event:
        self._signal = self.env.event()
        return self._signal

    def _notify(self):
        for listener in list(self.listeners):
            listener()

    def _admit_followers(self, side: str):
        for admission in list(self.queue):
            if len(self.batch) >= self.capacity:
                break
            if admission.side == side:
                self.queue.remove(admission)
                self.batch.append(admission)
                admission.granted.succeed()
                if self.state.door_phase == DoorPhase.OPEN:
                    admission.ready.succeed()

    def _run(self):
        env = self.env
        state = self.state
        while True:
            while not self.queue:
                yield self._wait()

            head = self.queue.popleft()
            side = head.side
            self.batch = [head]
            self.batch_side = side
            self.accepting = True
            head.granted.succeed()
            self._admit_followers(side)
            self._notify()

            # Кабина на другой стороне: холостой рейс
            if state.car_level != side:
                if state.door_phase == DoorPhase.OPEN:
                    state.door_phase = DoorPhase.CYCLING
                    yield env.timeout(self.door_minutes)
                    state.door_phase = DoorPhase.CLOSED
                yield env.timeout(self.ride_minutes)
                state.car_level = side

            if state.door_phase != DoorPhase.OPEN:
                state.door_phase = DoorPhase.CYCLING
                yield env.timeout(self.door_minutes)
                state.door_phase = DoorPhase.OPEN
            for admission in self.batch:
                if not admission.ready.triggered:
                    admission.ready.succeed()

            while True:
                self._admit_followers(side)
                waiting = [a for a in self.batch if not a.boarded]
                if not waiting:
                    break
                state.holding_for_follower = bool(state.occupants)
                yield self._wait()

            state.holding_for_follower = False
            self.accepting = False
            state.door_phase = DoorPhase.CYCLING
            yield env.timeout(self.door_minutes)
            state.door_phase = DoorPhase.CLOSED
            yield env.timeout(self.ride_minutes)
            state.car_level = self.other(side)
            state.door_phase = DoorPhase.CYCLING
            yield env.timeout(self.door_minutes)
            state.door_phase = DoorPhase.OPEN
            state.cycles += 1

            self.exiting = {a.agv_id for a in self.batch}
            logger.debug(f"Elevator {self.id} cycle {state.cycles}: {len(self.batch)} AGV(s) to {state.car_level}")
            for admission in self.batch:
                admission.ride_done.succeed()

            while self.exiting:
                yield self._wait()

            self.batch = []
            self.batch_side = None
            self._notify()

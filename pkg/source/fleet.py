"""
Парк AGV: состояние транспортёра, движение по участкам и диспетчеризация.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Set, Tuple

import simpy

from .elevator import Admission, ElevatorController
from .kinematics import KinematicsParams, profile_for
from .layout import Hop, RouteSpec, Station
from .logger import logger
from .traffic import ENTERING, LEAVING, Gate, Lane, Network

# Допуск сравнения положений на участке, фут
_EPS = 1e-9


class Phase(str, Enum):
    IDLE_PARKED = "idle_parked"
    TRAVELING_EMPTY = "traveling_empty"
    LOADED = "loaded"
    IN_ELEVATOR = "in_elevator"
    HELD_AT_LOOKAHEAD = "held_at_lookahead"
    BLOCKED = "blocked"


@dataclass
class AgvState:
    id: str
    node: Optional[str]
    phase: Phase = Phase.IDLE_PARKED
    link: Optional[str] = None
    zone: Optional[int] = None
    current_task: Optional[int] = None
    odometer: float = 0.0

    @property
    def location(self):
        """(участок, зона) в движении или узел, если AGV стоит у станции или на парковке."""
        return (self.link, self.zone) if self.link is not None else self.node

    def add_distance(self, feet: float):
        if feet < 0:
            raise ValueError("odometer cannot decrease")
        self.odometer += feet


@dataclass
class TripRecord:
    replication: int
    day: int
    weekday: str
    cart_id: int
    cart_state: str
    route: str
    pickup_time: float
    dropoff_time: float
    agv_id: str = ""
    nominal: float = 0.0
    delay: float = 0.0

    def __post_init__(self):
        if self.dropoff_time <= self.pickup_time:
            raise ValueError(f"Trip of cart {self.cart_id}: drop-off must follow pickup")

    @property
    def travel_minutes(self) -> float:
        return self.dropoff_time - self.pickup_time


@dataclass
class Leg:
    """Учёт груженого пробега: время без помех и задержки по причинам."""
    nominal: float = 0.0
    delays: Dict[str, float] = field(default_factory=dict)

    @property
    def delay(self) -> float:
        return sum(self.delays.values())

    def add_delay(self, cause: str, minutes: float):
        if minutes != 0.0:
            self.delays[cause] = self.delays.get(cause, 0.0) + minutes


@dataclass
class Task:
    cart_id: int
    cart_state: str
    route: RouteSpec
    origin: Station
    destination: Station
    requested_at: float
    day: int
    weekday: str
    replication: int
    picked_up: simpy.Event
    done: simpy.Event
    reservation: Optional[str] = None
    leg: Optional[Leg] = None


class Agv:
    """
    Один транспортёр как процесс simpy.

    Свободный AGV едет на парковку; по дороге его можно переназначить в любом узле.
    """

    def __init__(
        self,
        env: simpy.Environment,
        agv_id: str,
        network: Network,
        dispatcher: "Dispatcher",
        transfer_min: float,
    ):
        self.env = env
        self.id = agv_id
        self.network = network
        self.dispatcher = dispatcher
        self.kinematics: KinematicsParams = network.kinematics
        self.transfer_min = transfer_min
        self.state = AgvState(agv_id, node=network.park_node)
        self.task: Optional[Task] = None
        self.heading: Optional[str] = None
        self._wake = env.event()
        self._held_lane: Optional[Lane] = None
        self._held_claim = None
        self._reserved: Set[str] = set()
        self._position = 0.0
        self._admission: Optional[Admission] = None
        self._exit_elevator: Optional[ElevatorController] = None
        self._alighted = True
        self._exit_link: Optional[str] = None
        self._came_from: Optional[str] = None
        self.process = env.process(self.run())

    @property
    def idle(self) -> bool:
        return self.task is None

    def position_node(self) -> str:
        return self.state.node if self.state.node is not None else self.heading

    def assign(self, task: Task):
        self.task = task
        self.state.current_task = task.cart_id
        self.network.log(self.id, "assign", f"cart{task.cart_id}:{task.cart_state}")
        if not self._wake.triggered:
            self._wake.succeed()

    def run(self):
        park = self.network.park_node
        while True:
            if self.task is None:
                if self.state.node == park and self._held_lane is None:
                    self.state.phase = Phase.IDLE_PARKED
                    self._wake = self.env.event()
                    yield self._wake
                    continue
                self.state.phase = Phase.TRAVELING_EMPTY
                yield from self.drive(self.network.path(self.position_node(), park), interruptible=True)
                continue

            task = self.task
            yield from self._serve(task)
            self.task = None
            self.state.current_task = None
            self.dispatcher.release(self)

    def _serve(self, task: Task):
        env = self.env
        self.state.phase = Phase.TRAVELING_EMPTY
        yield from self.drive(self.network.path(self.position_node(), task.origin.node))

        yield env.timeout(self.transfer_min)
        self.state.phase = Phase.LOADED
        leg = Leg()
        task.leg = leg
        pickup = env.now
        task.picked_up.succeed(pickup)
        self.network.log(self.id, "pickup", f"cart{task.cart_id}@{task.origin.id}")

        hops = self.network.spec.hops(task.route)
        gate = self.network.gate_for(task.route)
        yield from self.drive(hops, leg=leg, gate=gate, task=task)

        dropoff = env.now
        self.network.log(self.id, "dropoff", f"cart{task.cart_id}@{task.destination.id}")
        record = TripRecord(
            replication=task.replication,
            day=task.day,
            weekday=task.weekday,
            cart_id=task.cart_id,
            cart_state=task.cart_state,
            route=task.route.id,
            pickup_time=pickup,
            dropoff_time=dropoff,
            agv_id=self.id,
            nominal=leg.nominal,
            delay=leg.delay,
        )
        yield env.timeout(self.transfer_min)
        task.done.succeed(record)

    def _account(self, leg: Optional[Leg], cause: str, minutes: float):
        if leg is not None:
            leg.add_delay(cause, minutes)

    def _admit(self, hops: List[Hop], index: int, leg: Optional[Leg], cart_state: Optional[str]):
        """Запрос допуска в лифт перед въездным ответвлением hops[index]."""
        hop = hops[index]
        declared = self.network.elevator_at(hop.end)
        side = self.network.spec.level_of(hop.start)
        elevator = self.network.choose_elevator(declared, side, cart_state)
        if elevator is not declared:
            hops[index], hops[index + 1] = self.network.via(elevator, hop.start, hops[index + 1].end)
        started = self.env.now
        self._admission = elevator.request(self.id, side)
        yield self._admission.granted
        self._account(leg, "elevator", self.env.now - started)

    def drive(
        self,
        hops: List[Hop],
        leg: Optional[Leg] = None,
        gate: Optional[Gate] = None,
        task: Optional[Task] = None,
        interruptible: bool = False,
    ):
        """Проезд цепочки участков; при interruptible останавливается в узле, если появилась задача."""
        net = self.network
        hops = list(hops)
        cart_state = task.cart_state if task is not None else None
        i = 0
        while i < len(hops):
            hop = hops[i]
            if interruptible and self.task is not None and self._can_divert(hop.start):
                return False

            into_elevator = net.elevator_at(hop.end)
            if into_elevator is not None:
                if self._admission is None:
                    yield from self._admit(hops, i, leg, cart_state)
                elif self._admission.controller.spec.node != hop.end:
                    hops[i], hops[i + 1] = net.via(self._admission.controller, hop.start, hops[i + 1].end)
            elif (
                self._admission is None
                and net.is_station(hop.start)
                and i + 1 < len(hops)
                and net.elevator_at(hops[i + 1].end) is not None
            ):
                # Выезд со станции прямо к лифту: допуск до выезда, пока AGV не занимает участок
                yield from self._admit(hops, i + 1, leg, cart_state)

            chain = net.spur_chain(hops, i)
            wanted = [lane for lane in chain if lane.link.id not in self._reserved]
            if len(chain) > 1 and wanted:
                # Ответвления подряд занимаются вместе: между ними AGV не ждёт
                started = self.env.now
                yield net.claim_spurs(self.id, wanted)
                self._reserved.update(lane.link.id for lane in wanted)
                self._account(leg, "blocked", self.env.now - started)

            use_gate = gate if gate is not None and gate.link_id == hops[i].link.id else None
            yield from self.step(hops[i], leg, use_gate, task)

            if net.elevator_at(hops[i].end) is not None:
                yield from self._ride(leg)
            i += 1
        return True

    def _can_divert(self, node: str) -> bool:
        """Переназначение в узле возможно вне лифта и без разворота на занятом ответвлении."""
        if self._admission is not None or self.network.elevator_at(node) is not None or self._reserved:
            return False
        if self._held_lane is None:
            return True
        ahead = self.network.path(node, self.task.origin.node)
        return not ahead or ahead[0].link.id != self._held_lane.link.id

    def _release_behind(self):
        """Правило конца хода: предыдущий участок освобождается после въезда в следующую зону."""
        if self._exit_elevator is not None and not self._alighted:
            self._exit_elevator.alight(self.id)
            self._alighted = True
        if self._held_lane is not None:
            lane = self._held_lane
            self._held_lane = None
            lane.leave(self.id)
            if self._exit_elevator is not None and lane.link.id == self._exit_link:
                self._exit_elevator.clear(self.id)
                self._exit_elevator = None

    def step(self, hop: Hop, leg: Optional[Leg] = None, gate: Optional[Gate] = None, task: Optional[Task] = None):
        """Один участок: захват входа и перекрёстка, проезд по зонам с правилом конца хода."""
        env = self.env
        net = self.network
        link = hop.link
        lane = net.lanes[link.id]
        state = self.state

        started = env.now
        if link.id in self._reserved:
            self._reserved.discard(link.id)
        elif lane.body is not None:
            yield lane.body.request(self.id)
        if lane.entry is not None:
            yield lane.entry.request(self.id)

        claim = net.claims.get(hop.start)
        if claim is not None:
            if self._held_claim is claim:
                self._held_claim = None
            else:
                klass = LEAVING if (
                    self._came_from is not None
                    and (net.is_station(self._came_from) or net.elevator_at(self._came_from) is not None)
                ) else ENTERING
                yield claim.claim(self.id, klass, net.tiebreak())
        self._account(leg, "blocked", env.now - started)

        if self._exit_elevator is not None and net.elevator_at(hop.start) is self._exit_elevator:
            self._exit_link = link.id
            self._alighted = False

        lane.enter(self.id)
        state.node = None
        state.link = link.id
        state.zone = 0
        self.heading = hop.end
        self._came_from = hop.start
        self._position = 0.0
        net.log(self.id, "enter", link.id)

        def clear_start():
            self._release_behind()
            if claim is not None:
                claim.release(self.id)

        crossings = [(min(link.zone_length, link.length), clear_start)]
        if lane.entry is not None and 2 * link.zone_length < link.length:
            crossings.append((2 * link.zone_length, lambda: lane.entry.release(self.id)))

        moving = env.now
        gate_wait = 0.0
        yield from self._advance(lane, gate.zone if gate is not None else lane.last_zone, crossings)

        if gate is not None:
            state.phase = Phase.HELD_AT_LOOKAHEAD
            held = env.now
            reservation = f"reserve:cart{task.cart_id}" if task is not None else f"reserve:{self.id}"
            grant = yield net.gates.request(self.id, gate, reservation)
            gate_wait = env.now - held
            self._account(leg, "gate", gate_wait)
            net.log(self.id, "gate_pass", gate.key)
            if gate.claim is not None:
                self._held_claim = gate.claim
            if grant.admission is not None:
                self._admission = grant.admission
            if grant.spur is not None:
                self._reserved.add(grant.spur.link.id)
            if task is not None:
                task.reservation = grant.reservation
            state.phase = Phase.LOADED
            yield from self._advance(lane, lane.last_zone, crossings)

        if leg is not None:
            nominal = net.link_minutes(link, gate)
            leg.nominal += nominal
            self._account(leg, "blocked", env.now - moving - gate_wait - nominal)

        state.add_distance(link.length)
        state.node = hop.end
        self._held_lane = lane

        if net.is_station(hop.end):
            # Постановка к станции: участок больше не занят
            state.link = None
            state.zone = None
            self._release_behind()
        net.log(self.id, "arrive", hop.end)

    def _advance(self, lane: Lane, target: int, crossings: List[Tuple[float, Callable[[], None]]]):
        """Продвижение до зоны target; ведомый останавливается за зону до ведущего и ждёт его хода."""
        state = self.state
        end = lane.stop_position(target)
        while self._position < end - _EPS:
            limit = lane.limit(self.id)
            stop = target if limit is None else min(target, limit)
            if lane.stop_position(stop) > self._position + _EPS:
                lane.plan(self.id, stop)
                state.zone = stop
                yield from self._roll(lane, stop, target, crossings)
                continue
            phase = state.phase
            state.phase = Phase.BLOCKED
            yield lane.moved(lane.predecessor(self.id))
            state.phase = phase

    def _roll(self, lane: Lane, stop: int, target: int, crossings: List[Tuple[float, Callable[[], None]]]):
        """
        Проезд из покоя до зоны stop.

        Если ведущий продвинулся до начала торможения, остановка переносится
        дальше без потери хода; пересечение отметок crossings вызывает их действия.
        """
        env = self.env
        k = self.kinematics
        turning = lane.link.turning
        start = self._position
        began = env.now
        goal = lane.stop_position(stop)
        profile = profile_for(goal - start, k, turning)
        while True:
            pending = [mark for mark in crossings if mark[0] <= goal + _EPS]
            mark = pending[0][0] if pending else goal
            timer = env.timeout(max(began + profile.time_at(mark - start) / 60.0 - env.now, 0.0))
            ahead = lane.predecessor(self.id) if stop < target else None
            if ahead is None:
                yield timer
            else:
                yield timer | lane.moved(ahead)
            if not timer.processed:
                limit = lane.limit(self.id)
                wanted = target if limit is None else min(target, limit)
                if wanted > stop and (env.now - began) * 60.0 < profile.t_acc + profile.t_cruise:
                    lane.plan(self.id, wanted)
                    self.state.zone = stop = wanted
                    goal = lane.stop_position(stop)
                    profile = profile_for(goal - start, k, turning)
                continue
            if pending:
                crossings.remove(pending[0])
                pending[0][1]()
                continue
            break
        self._position = goal

    def _ride(self, leg: Optional[Leg]):
        env = self.env
        admission = self._admission
        elevator = admission.controller
        arrived = env.now
        self.state.phase = Phase.IN_ELEVATOR
        yield admission.ready
        lane = self._held_lane
        self._held_lane = None
        lane.leave(self.id)
        elevator.board(admission)
        self.state.link = None
        self.state.zone = None
        yield admission.ride_done
        elapsed = env.now - arrived
        if leg is not None:
            leg.nominal += elevator.nominal_minutes
            leg.add_delay("elevator", elapsed - elevator.nominal_minutes)
            self.state.phase = Phase.LOADED
        else:
            self.state.phase = Phase.TRAVELING_EMPTY
        self._admission = None
        self._exit_elevator = elevator
        self._exit_link = None
        self._alighted = False


class Dispatcher:
    """Назначение ближайшего свободного AGV; заявки без AGV ждут в FIFO-очереди."""

    def __init__(self, network: Network, tiebreak: Callable[[], float]):
        self.network = network
        self.tiebreak = tiebreak
        self.agvs: List[Agv] = []
        self.queue: Deque[Task] = deque()

    def add(self, agv: Agv):
        self.agvs.append(agv)

    def dispatch_nearest_idle(self, task: Task) -> Optional[str]:
        """
        Выбирает свободный AGV, ближайший к станции погрузки.

        Равенство расстояний: меньший пробег, затем жребий. Если свободных нет,
        заявка встаёт в очередь и достаётся первому освободившемуся AGV.
        """
        idle = [agv for agv in self.agvs if agv.idle]
        if not idle:
            self.queue.append(task)
            logger.debug(f"No idle AGV for cart {task.cart_id}; queue length {len(self.queue)}")
            return None
        ranked = sorted(
            (
                self.network.distance(agv.position_node(), task.origin.node),
                agv.state.odometer,
                self.tiebreak(),
                index,
            )
            for index, agv in enumerate(idle)
        )
        chosen = idle[ranked[0][3]]
        chosen.assign(task)
        return chosen.id

    def release(self, agv: Agv):
        if self.queue:
            agv.assign(self.queue.popleft())

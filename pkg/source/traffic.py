"""
Управление движением по зонам: учёт занятости, участки, перекрёстки,
детенты станций и точки упреждающей проверки (look-ahead).
"""

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import simpy
from simpy.core import Infinity
from simpy.resources.resource import PriorityRequest, Request

from .elevator import Admission, ElevatorController
from .kinematics import KinematicsParams, traverse_time
from .layout import Elevator, Hop, LayoutError, Link, NetworkSpec, RouteSpec, guide_path_graph
from .logger import logger

# Классы приоритета на перекрёстке: выезжающие из отделений и лифтов идут раньше
LEAVING = 0
ENTERING = 1

# Служебный приоритет: занимает свободный перекрёсток на время выбора победителя
_DECIDING = (-1,)


class OccupancyError(Exception):
    """Нарушение ёмкости ресурса: внутренняя ошибка модели."""


class OccupancyLedger:
    """Журнал занятости: проверяет ёмкость при каждом захвате и освобождении."""

    def __init__(self):
        self.capacity: Dict[str, int] = {}
        self.holders: Dict[str, Set[str]] = defaultdict(set)
        self.peak: Dict[str, int] = defaultdict(int)

    def register(self, resource: str, capacity: int):
        self.capacity[resource] = capacity

    def acquire(self, resource: str, holder: str):
        holders = self.holders[resource]
        if holder in holders:
            raise OccupancyError(f"{holder} already holds {resource}")
        capacity = self.capacity.get(resource, 1)
        if capacity and len(holders) >= capacity:
            raise OccupancyError(f"{resource} over capacity {capacity}: {sorted(holders)} + {holder}")
        holders.add(holder)
        self.peak[resource] = max(self.peak[resource], len(holders))

    def release(self, resource: str, holder: str):
        holders = self.holders[resource]
        if holder not in holders:
            raise OccupancyError(f"{holder} releases {resource} it does not hold")
        holders.remove(holder)

    def occupancy(self, resource: str) -> int:
        return len(self.holders[resource])

    def held_by(self, holder: str) -> List[str]:
        return sorted(r for r, hs in self.holders.items() if holder in hs)


class Slot:
    """
    Именованный simpy.Resource с FIFO-очередью (ёмкость 0: без ограничения).

    Заявки хранятся по имени держателя, поэтому освобождать можно по имени;
    каждая выдача и освобождение проходят через журнал занятости.
    """

    def __init__(self, env: simpy.Environment, name: str, capacity: int, ledger: OccupancyLedger):
        self.env = env
        self.name = name
        self.capacity = capacity
        self.ledger = ledger
        self.resource = simpy.Resource(env, capacity=capacity or Infinity)
        self.listeners: List[Callable[[], None]] = []
        self._requests: Dict[str, Request] = {}
        ledger.register(name, capacity)

    @property
    def holders(self) -> List[str]:
        return [holder for holder, req in self._requests.items() if req in self.resource.users]

    @property
    def waiting(self) -> int:
        return len(self.resource.queue)

    @property
    def free(self) -> bool:
        return self.resource.count < self.resource.capacity

    def available(self) -> bool:
        return self.free and not self.resource.queue

    def request(self, holder: str) -> Request:
        if holder in self._requests:
            raise OccupancyError(f"{holder} already requested {self.name}")
        req = self.resource.request()
        self._requests[holder] = req
        if req.triggered:
            self.ledger.acquire(self.name, holder)
        else:
            req.callbacks.append(lambda _event: self.ledger.acquire(self.name, holder))
        return req

    def try_acquire(self, holder: str) -> bool:
        if not self.available():
            return False
        self.request(holder)
        return True

    def release(self, holder: str):
        req = self._requests.get(holder)
        if req is None or req not in self.resource.users:
            raise OccupancyError(f"{holder} releases {self.name} it does not hold")
        del self._requests[holder]
        self.resource.release(req)
        self.ledger.release(self.name, holder)
        for listener in list(self.listeners):
            listener()


class Lane:
    """
    Участок сети во время прогона.

    У каждого AGV на участке своя зона остановки (stops): ведомый планирует
    остановку не дальше чем за зону до ведущего, так что зона занята не более
    чем одним AGV. body: всё ответвление целиком (один AGV), entry: нулевая
    зона магистрали, пока хвост AGV не ушёл во вторую зону. Обгон запрещён.
    """

    def __init__(self, env: simpy.Environment, link: Link, ledger: OccupancyLedger,
                 log: Optional[Callable[[str, str, str], None]] = None):
        self.env = env
        self.link = link
        self.ledger = ledger
        self.body = Slot(env, f"link:{link.id}", 1, ledger) if link.kind == "spur" else None
        self.entry = Slot(env, f"entry:{link.id}", 1, ledger) if link.kind != "spur" else None
        self.order: Deque[str] = deque()
        self.stops: Dict[str, int] = {}
        self.listeners: List[Callable[[], None]] = []
        self._moved: Dict[str, simpy.Event] = {}
        self._log = log

    @property
    def last_zone(self) -> int:
        return self.link.zone_count - 1

    def stop_position(self, zone: int) -> float:
        """Положение передней кромки AGV, остановившегося в зоне zone, фут."""
        return min((zone + 1) * self.link.zone_length, self.link.length)

    def zone_key(self, zone: int) -> str:
        return f"zone:{self.link.id}:{zone}"

    def enter(self, agv_id: str):
        """Ставит AGV в хвост участка с остановкой в нулевой зоне."""
        if agv_id in self.stops:
            raise OccupancyError(f"{agv_id} is already on {self.link.id}")
        self.order.append(agv_id)
        self.plan(agv_id, 0)

    def predecessor(self, agv_id: str) -> Optional[str]:
        index = self.order.index(agv_id)
        return self.order[index - 1] if index else None

    def limit(self, agv_id: str) -> Optional[int]:
        """Дальняя допустимая зона остановки: за зону до ведущего (None: ведущего нет)."""
        ahead = self.predecessor(agv_id)
        return None if ahead is None else self.stops[ahead] - 1

    def plan(self, agv_id: str, zone: int):
        """Переносит остановку AGV вперёд: новая зона захватывается раньше, чем отпускается старая."""
        current = self.stops.get(agv_id)
        if current == zone:
            return
        limit = self.limit(agv_id)
        if not 0 <= zone <= self.last_zone or (limit is not None and zone > limit) or (
            current is not None and zone < current
        ):
            raise OccupancyError(f"{agv_id} cannot stop in zone {zone} of {self.link.id} (limit {limit})")
        self.ledger.acquire(self.zone_key(zone), agv_id)
        if current is not None:
            self.ledger.release(self.zone_key(current), agv_id)
        self.stops[agv_id] = zone
        if self._log is not None:
            self._log(agv_id, "zone", f"{self.link.id}:{zone}")
        self._signal(agv_id)

    def moved(self, agv_id: str) -> simpy.Event:
        """Событие следующего продвижения (или выезда) AGV."""
        if agv_id not in self._moved:
            self._moved[agv_id] = self.env.event()
        return self._moved[agv_id]

    def _signal(self, agv_id: str):
        event = self._moved.pop(agv_id, None)
        if event is not None:
            event.succeed()

    def leave(self, agv_id: str):
        if not self.order or self.order[0] != agv_id:
            raise OccupancyError(f"{agv_id} would pass {self.order[0] if self.order else None} on {self.link.id}")
        self.order.popleft()
        self.ledger.release(self.zone_key(self.stops.pop(agv_id)), agv_id)
        if self.entry is not None and agv_id in self.entry.holders:
            self.entry.release(agv_id)
        if self.body is not None:
            self.body.release(agv_id)
        if self._log is not None:
            self._log(agv_id, "leave", self.link.id)
        self._signal(agv_id)
        for listener in list(self.listeners):
            listener()


class ClaimPoint:
    """
    Перекрёсток: simpy.PriorityResource на один AGV.

    Заявка несёт приоритет (класс, время заявки, жребий). Заявки, пришедшие
    к свободному перекрёстку в один момент, конкурируют между собой: на нулевую
    задержку перекрёсток занимает служебная заявка, после неё ресурс отдаёт
    его лучшей по приоритету.
    """

    def __init__(self, env: simpy.Environment, node: str, ledger: OccupancyLedger):
        self.env = env
        self.node = node
        self.ledger = ledger
        self.name = f"node:{node}"
        self.resource = simpy.PriorityResource(env, capacity=1)
        self.listeners: List[Callable[[], None]] = []
        self._requests: Dict[str, PriorityRequest] = {}
        self._deciding: Optional[PriorityRequest] = None
        ledger.register(self.name, 1)

    @property
    def holder(self) -> Optional[str]:
        for agv_id, req in self._requests.items():
            if req in self.resource.users:
                return agv_id
        return None

    @property
    def free(self) -> bool:
        return self.resource.count == 0 and not self.resource.queue

    def claim(self, agv_id: str, klass: int, tiebreak: float) -> PriorityRequest:
        if self.free:
            self._deciding = self.resource.request(priority=_DECIDING)
            self.env.timeout(0).callbacks.append(self._decide)
        return self._request(agv_id, (klass, self.env.now, tiebreak))

    def seize(self, agv_id: str):
        if not self.free:
            raise OccupancyError(f"{self.name} is not free for {agv_id}")
        self._request(agv_id, (LEAVING, self.env.now, 0.0))

    def _request(self, agv_id: str, priority: tuple) -> PriorityRequest:
        if agv_id in self._requests:
            raise OccupancyError(f"{agv_id} already claimed {self.name}")
        req = self.resource.request(priority=priority)
        self._requests[agv_id] = req
        if req.triggered:
            self.ledger.acquire(self.name, agv_id)
        else:
            req.callbacks.append(lambda _event: self.ledger.acquire(self.name, agv_id))
        return req

    def _decide(self, _event):
        deciding, self._deciding = self._deciding, None
        self.resource.release(deciding)

    def release(self, agv_id: str):
        req = self._requests.get(agv_id)
        if req is None or req not in self.resource.users:
            raise OccupancyError(f"{agv_id} releases {self.name} held by {self.holder}")
        del self._requests[agv_id]
        self.resource.release(req)
        self.ledger.release(self.name, agv_id)
        for listener in list(self.listeners):
            listener()


@dataclass
class Gate:
    """Точка упреждающей проверки на маршруте."""
    key: str
    link_id: str
    zone: int
    position: float
    claim: Optional[ClaimPoint]
    elevators: List[ElevatorController]
    side: str
    detents: Optional[Slot]
    lane: Optional[Lane] = None
    spur: Optional[Lane] = None


@dataclass
class GateGrant:
    elevator: Optional[ElevatorController]
    admission: Optional[Admission]
    reservation: Optional[str]
    spur: Optional[Lane] = None


@dataclass
class _Hold:
    agv_id: str
    gate: Gate
    reservation: str
    event: simpy.Event
    since: float


class GateKeeper:
    """
    Общая FIFO-очередь AGV, удерживаемых в точках look-ahead.

    Условия пересматриваются при каждом освобождении перекрёстка, лифта
    или детента; выдача атомарна: захват перекрёстка и ответвления за ним,
    резерв детента назначения и допуск в лифт.
    """

    def __init__(self, env: simpy.Environment):
        self.env = env
        self.held: List[_Hold] = []
        self.holds = 0
        self.hold_minutes = 0.0
        self._busy = False

    def watch(self, gate: Gate):
        if gate.lane is not None:
            gate.lane.listeners.append(self.reevaluate)
        if gate.claim is not None:
            gate.claim.listeners.append(self.reevaluate)
        for elevator in gate.elevators:
            elevator.listeners.append(self.reevaluate)
        if gate.detents is not None:
            gate.detents.listeners.append(self.reevaluate)
        if gate.spur is not None:
            gate.spur.body.listeners.append(self.reevaluate)

    def request(self, agv_id: str, gate: Gate, reservation: str) -> simpy.Event:
        hold = _Hold(agv_id, gate, reservation, self.env.event(), self.env.now)
        self.held.append(hold)
        self.reevaluate()
        return hold.event

    def _choose(self, gate: Gate, agv_id: str) -> Tuple[bool, Optional[ElevatorController]]:
        if gate.lane is not None and gate.lane.order and gate.lane.order[0] != agv_id:
            return False, None
        if gate.claim is not None and not gate.claim.free:
            return False, None
        if gate.detents is not None and not gate.detents.available():
            return False, None
        if gate.spur is not None and not gate.spur.body.available():
            return False, None
        if not gate.elevators:
            return True, None
        for elevator in gate.elevators:
            if elevator.is_free(gate.side):
                return True, elevator
        return False, None

    def reevaluate(self):
        if self._busy:
            return
        self._busy = True
        try:
            blocked = set()
            for hold in list(self.held):
                if hold.gate.key in blocked:
                    continue
                ok, elevator = self._choose(hold.gate, hold.agv_id)
                if not ok:
                    blocked.add(hold.gate.key)
                    continue
                self.held.remove(hold)
                gate = hold.gate
                if gate.claim is not None:
                    gate.claim.seize(hold.agv_id)
                if gate.spur is not None:
                    gate.spur.body.try_acquire(hold.agv_id)
                reservation = None
                if gate.detents is not None:
                    gate.detents.try_acquire(hold.reservation)
                    reservation = hold.reservation
                admission = elevator.request(hold.agv_id, gate.side) if elevator is not None else None
                waited = self.env.now - hold.since
                if waited > 0:
                    self.holds += 1
                    self.hold_minutes += waited
                hold.event.succeed(GateGrant(elevator, admission, reservation, gate.spur))
        finally:
            self._busy = False


class Network:
    """Состояние сети во время одного прогона."""

    def __init__(
        self,
        env: simpy.Environment,
        spec: NetworkSpec,
        kinematics: KinematicsParams,
        ledger: OccupancyLedger,
        tiebreak: Callable[[], float],
        trace: Optional[list] = None,
    ):
        self.env = env
        self.spec = spec
        self.kinematics = kinematics
        self.ledger = ledger
        self.tiebreak = tiebreak
        self.trace = trace
        self.graph = guide_path_graph(spec)
        self.lanes: Dict[str, Lane] = {link.id: Lane(env, link, ledger, self.log) for link in spec.links}
        self.claims: Dict[str, ClaimPoint] = {node: ClaimPoint(env, node, ledger) for node in spec.intersections}
        self.detents: Dict[str, Slot] = {
            station.id: Slot(env, f"detent:{station.id}", 0 if station.is_parking else station.detent_capacity, ledger)
            for station in spec.stations
        }
        self.elevators: Dict[str, ElevatorController] = {}
        for elevator in spec.elevators:
            self.elevators[elevator.id] = ElevatorController(env, elevator, self._levels_of(elevator), ledger, trace)
        self.gates = GateKeeper(env)
        self._gates: Dict[str, Optional[Gate]] = {}
        self._paths: Dict[Tuple[str, str], List[Hop]] = {}
        self._distances: Dict[Tuple[str, str], float] = {}
        self.park_node = spec.parking().node
        logger.debug(
            f"Network runtime: {len(self.lanes)} lanes, {len(self.claims)} intersections, "
            f"{len(self.elevators)} elevators"
        )

    def _levels_of(self, elevator: Elevator) -> Tuple[str, str]:
        levels: List[str] = []
        for link in self.spec.links:
            if elevator.node in (link.from_node, link.to_node):
                level = self.spec.level_of(link.other_end(elevator.node))
                if level not in levels:
                    levels.append(level)
        if len(levels) != 2:
            raise LayoutError(f"elevator {elevator.id} must connect exactly two levels")
        return levels[0], levels[1]

    def elevator_at(self, node: str) -> Optional[ElevatorController]:
        spec = self.spec.elevator_by_node.get(node)
        return self.elevators[spec.id] if spec else None

    def is_station(self, node: str) -> bool:
        return node in self.spec.station_by_node

    def group_of(self, elevator: ElevatorController, cart_state: Optional[str] = None) -> List[ElevatorController]:
        """Лифт и его группа; объявленный на маршруте: первым."""
        members = [elevator]
        if elevator.spec.group:
            members += [
                e for e in self.elevators.values()
                if e is not elevator and e.spec.group == elevator.spec.group
            ]
        if cart_state is not None:
            members = [e for e in members if cart_state in e.spec.served_cart_states] or [elevator]
        return members

    def choose_elevator(self, elevator: ElevatorController, side: str, cart_state: Optional[str] = None) -> ElevatorController:
        """Ближайший свободный лифт группы, иначе наименее загруженный."""
        members = self.group_of(elevator, cart_state)
        for member in members:
            if member.is_free(side):
                return member
        return min(members, key=lambda e: (e.load(), members.index(e)))

    def via(self, elevator: ElevatorController, before: str, after: str) -> Tuple[Hop, Hop]:
        """Проходы «въезд: выезд» через конкретный лифт группы."""
        node = elevator.spec.node
        link_in = link_out = None
        for link in self.spec.links:
            if link_in is None and link.leads(before, node):
                link_in = link
            if link_out is None and link.leads(node, after):
                link_out = link
        if link_in is None or link_out is None:
            raise LayoutError(f"elevator {elevator.id} is not reachable between {before} and {after}")
        return Hop(link_in, before, node), Hop(link_out, node, after)

    def spur_chain(self, hops: Sequence[Hop], index: int) -> List[Lane]:
        """Ответвления подряд с hops[index] до станции, лифта или магистрали."""
        chain: List[Lane] = []
        for hop in hops[index:]:
            if hop.link.kind != "spur":
                break
            chain.append(self.lanes[hop.link.id])
            if self.is_station(hop.end) or self.elevator_at(hop.end) is not None:
                break
        return chain

    def claim_spurs(self, agv_id: str, lanes: Sequence[Lane]) -> simpy.Event:
        """Захват цепочки ответвлений целиком, когда свободны все: в узле между ними стоять нельзя."""
        event = self.env.event()
        bodies = [lane.body for lane in lanes]

        def attempt():
            if event.triggered or not all(body.available() for body in bodies):
                return
            for body in bodies:
                body.try_acquire(agv_id)
                body.listeners.remove(attempt)
            event.succeed()

        for body in bodies:
            body.listeners.append(attempt)
        attempt()
        return event

    def path(self, source: str, target: str) -> List[Hop]:
        """Кратчайший путь по всем участкам; чужие станции не бывают транзитными."""
        key = (source, target)
        if key not in self._paths:
            if source == target:
                self._paths[key] = []
            else:
                blocked = [n for n in self.spec.station_by_node if n not in key]
                view = nx.restricted_view(self.graph, blocked, [])
                try:
                    nodes = nx.shortest_path(view, source, target, weight="weight")
                except nx.NetworkXNoPath as e:
                    raise LayoutError(f"no guide path from {source} to {target}") from e
                hops = []
                for a, b in zip(nodes, nodes[1:]):
                    link = self.spec.link_by_id[self.graph.edges[a, b]["link"]]
                    hops.append(Hop(link, a, b))
                self._paths[key] = hops
        return list(self._paths[key])

    def distance(self, source: str, target: str) -> float:
        key = (source, target)
        if key not in self._distances:
            try:
                self._distances[key] = sum(h.link.length for h in self.path(source, target))
            except LayoutError:
                self._distances[key] = float("inf")
        return self._distances[key]

    def gate_for(self, route: RouteSpec) -> Optional[Gate]:
        if route.id in self._gates:
            return self._gates[route.id]
        gate = None
        if route.lookahead_stop is not None:
            link_id, zone = route.lookahead_stop
            hops = self.spec.hops(route)
            index = next(i for i, h in enumerate(hops) if h.link.id == link_id)
            node = hops[index].end
            elevators: List[ElevatorController] = []
            spur = None
            if index + 1 < len(hops):
                after = hops[index + 1]
                elevator = self.elevator_at(after.end)
                if elevator is not None:
                    elevators = self.group_of(elevator, route.cart_state)
                elif after.link.kind == "spur":
                    spur = self.lanes[after.link.id]
            lane = self.lanes[link_id]
            gate = Gate(
                key=route.id,
                link_id=link_id,
                zone=zone,
                position=lane.stop_position(zone),
                claim=self.claims.get(node),
                elevators=elevators,
                side=self.spec.level_of(node),
                detents=self.detents[self.spec.destination_of(route).id],
                lane=lane,
                spur=spur,
            )
            self.gates.watch(gate)
        self._gates[route.id] = gate
        return gate

    def link_minutes(self, link: Link, gate: Optional[Gate] = None) -> float:
        """Проезд участка без помех, с остановкой в точке look-ahead, если она на нём."""
        k = self.kinematics
        if gate is None or gate.position >= link.length:
            return traverse_time(link.length, k, link.turning) / 60.0
        first = traverse_time(gate.position, k, link.turning)
        rest = traverse_time(link.length - gate.position, k, link.turning)
        return (first + rest) / 60.0

    def free_flow_minutes(self, route: RouteSpec) -> float:
        """Время маршрута без помех: остановка на каждом узле и в точке look-ahead."""
        gate = self.gate_for(route)
        minutes = 0.0
        for hop in self.spec.hops(route):
            minutes += self.link_minutes(hop.link, gate if gate is not None and gate.link_id == hop.link.id else None)
            elevator = self.elevator_at(hop.end)
            if elevator is not None:
                minutes += elevator.nominal_minutes
        return minutes

    def log(self, agv_id: str, action: str, detail: str = ""):
        if self.trace is not None:
            self.trace.append((self.env.now, agv_id, action, detail))

    def describe(self) -> str:
        lines = []
        for name, holders in sorted(self.ledger.holders.items()):
            if holders:
                lines.append(f"{name}: {sorted(holders)}")
        return "\n".join(lines)

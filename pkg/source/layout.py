"""
Описание сети направляющих путей: узлы, участки, станции, лифты и маршруты.

Файл сети: TOML с таблицами [[node]], [[link]], [[station]], [[elevator]], [[route]].
"""

import math
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import networkx as nx

from config.settings import DOOR_DELAY_S, ELEVATOR_RIDE_S, ZONE_LENGTH_FT

from .logger import logger

CART_STATES = ("clean", "soiled", "washed")
VARIANTS = ("M", "S")
LINK_KINDS = ("trunk", "spur")
STATION_KINDS = ("MD", "CSSD", "CCSA", "SCSA", "OR_CORE", "PARKING")

_TOP_KEYS = {"zone_length_ft", "door_delay_s", "ride_s", "variant", "node", "link", "station", "elevator", "route"}
_NODE_KEYS = {"id", "level"}
_LINK_KEYS = {"id", "from", "to", "length_ft", "kind", "zone_length_ft", "turning"}
_STATION_KEYS = {"id", "node", "kind", "detents"}
_ELEVATOR_KEYS = {"id", "node", "capacity", "door_delay_s", "ride_s", "serves", "group", "home"}
_ROUTE_KEYS = {"cart_state", "variant", "links", "lookahead"}


class LayoutError(Exception):
    """Ошибка разбора файла сети."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Node:
    id: str
    level: str = "ground"


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length: float
    kind: str
    zone_length: float = ZONE_LENGTH_FT
    turning: bool = False

    @property
    def zone_count(self) -> int:
        return max(1, math.ceil(self.length / self.zone_length)) if self.length > 0 else 0

    @property
    def capacity(self) -> int:
        """Сколько AGV одновременно допускает участок (ответвление: одну)."""
        return 1 if self.kind == "spur" else self.zone_count

    def zone_bounds(self) -> List[Tuple[float, float]]:
        return [
            (i * self.zone_length, min((i + 1) * self.zone_length, self.length))
            for i in range(self.zone_count)
        ]

    def leads(self, start: str, end: str) -> bool:
        """Можно ли пройти участок от start к end (ответвления двусторонние)."""
        if self.from_node == start and self.to_node == end:
            return True
        return self.kind == "spur" and self.from_node == end and self.to_node == start

    def other_end(self, node: str) -> str:
        return self.to_node if node == self.from_node else self.from_node


@dataclass(frozen=True)
class Station:
    id: str
    node: str
    kind: str
    detent_capacity: int

    @property
    def is_parking(self) -> bool:
        return self.kind == "PARKING"


@dataclass(frozen=True)
class Elevator:
    id: str
    node: str
    agv_capacity: int
    door_delay: float = DOOR_DELAY_S
    served_cart_states: Tuple[str, ...] = CART_STATES
    ride_s: float = ELEVATOR_RIDE_S
    group: Optional[str] = None
    home_level: Optional[str] = None


@dataclass(frozen=True)
class RouteSpec:
    cart_state: str
    variant: str
    link_sequence: Tuple[str, ...]
    lookahead_stop: Optional[Tuple[str, int]] = None

    @property
    def id(self) -> str:
        return f"{self.cart_state}-{self.variant}"


@dataclass(frozen=True)
class Hop:
    """Один проход участка в заданном направлении."""
    link: Link
    start: str
    end: str


@dataclass(frozen=True)
class NetworkSpec:
    intersections: Tuple[str, ...]
    links: Tuple[Link, ...]
    stations: Tuple[Station, ...]
    elevators: Tuple[Elevator, ...]
    routes: Tuple[RouteSpec, ...]
    variant: str = "M"
    nodes: Tuple[Node, ...] = field(default=())

    @cached_property
    def link_by_id(self) -> Dict[str, Link]:
        return {link.id: link for link in self.links}

    @cached_property
    def node_by_id(self) -> Dict[str, Node]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def station_by_node(self) -> Dict[str, Station]:
        return {station.node: station for station in self.stations}

    @cached_property
    def elevator_by_node(self) -> Dict[str, Elevator]:
        return {elevator.node: elevator for elevator in self.elevators}

    def station(self, station_id: str) -> Station:
        for station in self.stations:
            if station.id == station_id:
                return station
        raise KeyError(station_id)

    def parking(self) -> Station:
        for station in self.stations:
            if station.is_parking:
                return station
        raise LayoutError("layout declares no PARKING station")

    def level_of(self, node_id: str) -> str:
        node = self.node_by_id.get(node_id)
        return node.level if node else "ground"

    def active_routes(self) -> Tuple[RouteSpec, ...]:
        return tuple(r for r in self.routes if r.variant == self.variant)

    def route(self, cart_state: str) -> RouteSpec:
        for route in self.active_routes():
            if route.cart_state == cart_state:
                return route
        raise LayoutError(f"no {cart_state} route for variant {self.variant}")

    def hops(self, route: RouteSpec) -> List[Hop]:
        """Цепочка проходов маршрута от станции-источника к станции-назначению."""
        hops: List[Hop] = []
        links = [self.link_by_id[link_id] for link_id in route.link_sequence]
        if not links:
            raise LayoutError(f"route {route.id} is empty")

        first = links[0]
        if first.kind == "spur" and first.to_node in self.station_by_node and first.from_node not in self.station_by_node:
            current = first.to_node
        else:
            current = first.from_node

        for link in links:
            if link.from_node == current and link.leads(current, link.to_node):
                nxt = link.to_node
            elif link.kind == "spur" and link.to_node == current:
                nxt = link.from_node
            else:
                raise LayoutError(f"route {route.id}: route discontinuity at link {link.id}")
            hops.append(Hop(link, current, nxt))
            current = nxt
        return hops

    def origin_of(self, route: RouteSpec) -> Station:
        return self.station_by_node[self.hops(route)[0].start]

    def destination_of(self, route: RouteSpec) -> Station:
        return self.station_by_node[self.hops(route)[-1].end]


@dataclass(frozen=True)
class ValidationReport:
    entries: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def _line_of(error: tomllib.TOMLDecodeError) -> Optional[int]:
    lineno = getattr(error, "lineno", None)
    if lineno:
        return lineno
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else None


def _check_keys(table: Dict[str, Any], allowed: set, where: str):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise LayoutError(f"unknown key(s) {', '.join(unknown)} in {where}")


def _require(table: Dict[str, Any], key: str, where: str) -> Any:
    if key not in table:
        raise LayoutError(f"missing required key '{key}' in {where}")
    return table[key]


def _unique(items: List[Any], kind: str):
    seen = set()
    for item in items:
        if item.id in seen:
            raise LayoutError(f"duplicate {kind} id {item.id}")
        seen.add(item.id)


def parse_lookahead(value: str) -> Tuple[str, int]:
    link_id, sep, zone = value.rpartition(":")
    if not sep or not link_id:
        raise LayoutError(f"lookahead must look like 'link:zone', got {value!r}")
    try:
        return link_id, int(zone)
    except ValueError as e:
        raise LayoutError(f"lookahead zone must be an integer, got {zone!r}") from e


def parse_layout(text: str) -> NetworkSpec:
    """
    Разбирает файл сети.

    Args:
        text: содержимое TOML-файла сети

    Returns:
        NetworkSpec со всеми ссылками, проверенными на существование
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise LayoutError(f"syntax error: {e}", line=_line_of(e)) from e

    _check_keys(data, _TOP_KEYS, "layout")
    zone_length = float(data.get("zone_length_ft", ZONE_LENGTH_FT))
    door_delay = float(data.get("door_delay_s", DOOR_DELAY_S))
    ride_s = float(data.get("ride_s", ELEVATOR_RIDE_S))
    variant = data.get("variant", "M")

    nodes = []
    for table in data.get("node", []):
        _check_keys(table, _NODE_KEYS, "[[node]]")
        nodes.append(Node(str(_require(table, "id", "[[node]]")), str(table.get("level", "ground"))))
    _unique(nodes, "node")
    node_ids = {node.id for node in nodes}

    def known_node(node_id: str) -> str:
        if node_id not in node_ids:
            raise LayoutError(f"unknown node {node_id}")
        return node_id

    links = []
    for table in data.get("link", []):
        _check_keys(table, _LINK_KEYS, "[[link]]")
        where = f"[[link]] {table.get('id', '?')}"
        kind = _require(table, "kind", where)
        if kind not in LINK_KINDS:
            raise LayoutError(f"{where}: kind must be one of {LINK_KINDS}, got {kind!r}")
        links.append(Link(
            id=str(_require(table, "id", where)),
            from_node=known_node(str(_require(table, "from", where))),
            to_node=known_node(str(_require(table, "to", where))),
            length=float(_require(table, "length_ft", where)),
            kind=kind,
            zone_length=float(table.get("zone_length_ft", zone_length)),
            turning=bool(table.get("turning", False)),
        ))
    _unique(links, "link")
    link_ids = {link.id for link in links}

    stations = []
    for table in data.get("station", []):
        _check_keys(table, _STATION_KEYS, "[[station]]")
        where = f"[[station]] {table.get('id', '?')}"
        kind = _require(table, "kind", where)
        if kind not in STATION_KINDS:
            raise LayoutError(f"{where}: unknown station kind {kind!r}")
        stations.append(Station(
            id=str(_require(table, "id", where)),
            node=known_node(str(_require(table, "node", where))),
            kind=kind,
            detent_capacity=int(_require(table, "detents", where)),
        ))
    _unique(stations, "station")

    elevators = []
    for table in data.get("elevator", []):
        _check_keys(table, _ELEVATOR_KEYS, "[[elevator]]")
        where = f"[[elevator]] {table.get('id', '?')}"
        serves = tuple(table.get("serves", CART_STATES))
        for state in serves:
            if state not in CART_STATES:
                raise LayoutError(f"{where}: unknown cart state {state!r}")
        elevators.append(Elevator(
            id=str(_require(table, "id", where)),
            node=known_node(str(_require(table, "node", where))),
            agv_capacity=int(_require(table, "capacity", where)),
            door_delay=float(table.get("door_delay_s", door_delay)),
            served_cart_states=serves,
            ride_s=float(table.get("ride_s", ride_s)),
            group=table.get("group"),
            home_level=table.get("home"),
        ))
    _unique(elevators, "elevator")

    routes = []
    for table in data.get("route", []):
        _check_keys(table, _ROUTE_KEYS, "[[route]]")
        where = "[[route]]"
        cart_state = _require(table, "cart_state", where)
        route_variant = _require(table, "variant", where)
        if cart_state not in CART_STATES:
            raise LayoutError(f"{where}: unknown cart state {cart_state!r}")
        if route_variant not in VARIANTS:
            raise LayoutError(f"{where}: unknown variant {route_variant!r}")
        sequence = tuple(str(x) for x in _require(table, "links", where))
        for link_id in sequence:
            if link_id not in link_ids:
                raise LayoutError(f"unknown link {link_id}")
        lookahead = parse_lookahead(table["lookahead"]) if "lookahead" in table else None
        routes.append(RouteSpec(cart_state, route_variant, sequence, lookahead))

    if variant not in VARIANTS:
        raise LayoutError(f"unknown variant {variant!r}")

    station_nodes = {s.node for s in stations}
    elevator_nodes = {e.node for e in elevators}
    intersections = tuple(n.id for n in nodes if n.id not in station_nodes and n.id not in elevator_nodes)

    spec = NetworkSpec(
        intersections=intersections,
        links=tuple(links),
        stations=tuple(stations),
        elevators=tuple(elevators),
        routes=tuple(routes),
        variant=variant,
        nodes=tuple(nodes),
    )
    logger.debug(
        f"Layout parsed: {len(nodes)} nodes, {len(links)} links, "
        f"{len(stations)} stations, {len(elevators)} elevators, {len(routes)} routes"
    )
    return spec


def guide_path_graph(spec: NetworkSpec) -> nx.DiGraph:
    """Ориентированный граф путей; ответвления дают рёбра в обе стороны."""
    graph = nx.DiGraph()
    graph.add_nodes_from(n.id for n in spec.nodes)
    for link in spec.links:
        graph.add_edge(link.from_node, link.to_node, link=link.id, weight=link.length)
        if link.kind == "spur":
            graph.add_edge(link.to_node, link.from_node, link=link.id, weight=link.length)
    return graph


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """
    Проверяет инварианты сети и маршрутов.

    Нарушения возвращаются записями отчёта; пустой отчёт означает корректную сеть.
    """
    entries: List[str] = []
    node_ids = {n.id for n in spec.nodes}
    station_nodes = {s.node for s in spec.stations}

    for link in spec.links:
        for end in (link.from_node, link.to_node):
            if end not in node_ids:
                entries.append(f"link {link.id}: unknown node {end}")
        if link.length <= 0:
            entries.append(f"link {link.id}: length must be positive")
        if link.zone_length <= 0:
            entries.append(f"link {link.id}: zone length must be positive")
        elif link.length > 0:
            bounds = link.zone_bounds()
            if bounds[-1][1] < link.length or any(b - a > link.zone_length + 1e-9 for a, b in bounds):
                entries.append(f"link {link.id}: zone partition does not cover the link")

    for station in spec.stations:
        if not station.is_parking and station.detent_capacity < 1:
            entries.append(f"station {station.id}: detent capacity must be at least 1")

    for elevator in spec.elevators:
        if elevator.agv_capacity < 1:
            entries.append(f"elevator {elevator.id}: capacity must be positive")
        if elevator.door_delay < 0:
            entries.append(f"elevator {elevator.id}: door delay must be non-negative")
        levels = {spec.level_of(l.other_end(elevator.node)) for l in spec.links if elevator.node in (l.from_node, l.to_node)}
        if len(levels) != 2:
            entries.append(f"elevator {elevator.id}: must connect exactly two levels, found {sorted(levels)}")

    seen = {}
    for route in spec.routes:
        key = (route.cart_state, route.variant)
        seen[key] = seen.get(key, 0) + 1
        try:
            hops = spec.hops(route)
        except LayoutError as e:
            entries.append(str(e))
            continue
        if hops[0].start not in station_nodes:
            entries.append(f"route {route.id}: does not start at a station")
        if hops[-1].end not in station_nodes:
            entries.append(f"route {route.id}: does not end at a station")
        for hop in hops[:-1]:
            if hop.end in station_nodes:
                entries.append(f"route {route.id}: passes through station node {hop.end}")
        for before, after in zip(hops, hops[1:]):
            elevator = spec.elevator_by_node.get(before.end)
            if elevator and spec.level_of(before.start) == spec.level_of(after.end):
                entries.append(f"route {route.id}: elevator {elevator.id} does not change level")
        if route.lookahead_stop:
            link_id, zone = route.lookahead_stop
            if link_id not in route.link_sequence:
                entries.append(f"route {route.id}: lookahead link {link_id} is not on the route")
            else:
                link = spec.link_by_id[link_id]
                if not 0 <= zone < link.zone_count:
                    entries.append(f"route {route.id}: lookahead zone {zone} outside link {link_id}")

    for state in CART_STATES:
        for variant in VARIANTS:
            count = seen.get((state, variant), 0)
            if count != 1:
                entries.append(f"expected exactly one {state} route for variant {variant}, found {count}")

    graph = guide_path_graph(spec)
    real_stations = [s for s in spec.stations if s.node in graph]
    for source in real_stations:
        reachable = nx.descendants(graph, source.node)
        for target in real_stations:
            if target is not source and target.node not in reachable:
                entries.append(f"station {target.id} is unreachable from station {source.id}")

    return ValidationReport(tuple(entries))


def apply_variant(spec: NetworkSpec, variant: str) -> NetworkSpec:
    """Возвращает сеть с активными маршрутами варианта M или S."""
    if variant not in VARIANTS:
        raise LayoutError(f"unknown variant {variant!r}")
    if not any(route.variant == variant for route in spec.routes):
        raise LayoutError(f"missing routes for variant {variant}")
    if spec.variant == variant:
        return spec
    return replace(spec, variant=variant)

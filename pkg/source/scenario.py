"""
Файл сценария: вариант сети, парк AGV по дням недели, горизонт, распределения.
"""

import io
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import pandas as pd

from config.settings import (
    AGV_POOL,
    CART_POOL,
    DAYS,
    DRYING_MIN,
    LOADING_EMPLOYEES,
    PICKING_TIME,
    REFERENCE_LAYOUT,
    REPLICATIONS,
    TRANSFER_S,
    WASH_CYCLE_MIN,
    WASHERS,
    WEEKDAYS,
)
from .ingest import read_text
from .kinematics import KinematicsParams
from .layout import LayoutError, NetworkSpec, apply_variant, parse_layout, validate_network
from .logger import logger
from .stochastics import Distribution, EmpiricalCdf, TriangularDist, parse_distribution
from .workflow import FleetPlan

_SCENARIO_KEYS = {
    "layout", "variant", "fleet", "pool_size", "days", "replications", "seed",
    "wash_cycle_min", "drying_min", "picking", "transfer_s", "loading_employees",
    "cart_pool", "washers", "case_volume_file", "case_counts", "release", "kinematics",
}
_KINEMATICS_KEYS = {"v_straight_ft_min", "turn_factor", "accel_ft_s2", "decel_ft_s2"}
_WEEKDAY_NAMES = {
    "mon": "mon", "monday": "mon", "tue": "tue", "tuesday": "tue", "wed": "wed", "wednesday": "wed",
    "thu": "thu", "thursday": "thu", "fri": "fri", "friday": "fri",
}


class ScenarioError(Exception):
    """Ошибка в файле сценария."""


@dataclass(frozen=True)
class CaseVolume:
    date: str
    weekday: str
    case_count: int


@dataclass(frozen=True)
class Scenario:
    network: NetworkSpec
    fleet: FleetPlan
    case_counts: Dict[str, TriangularDist]
    release: Dict[str, EmpiricalCdf]
    days: int = DAYS
    replications: int = REPLICATIONS
    seed: Optional[int] = None
    wash_cycle_min: float = WASH_CYCLE_MIN
    drying_min: float = DRYING_MIN
    picking: Distribution = field(default_factory=lambda: parse_distribution(PICKING_TIME))
    transfer_s: float = TRANSFER_S
    loading_employees: int = LOADING_EMPLOYEES
    cart_pool: int = CART_POOL
    washers: int = WASHERS
    kinematics: KinematicsParams = field(default_factory=KinematicsParams)
    case_volumes: Tuple[CaseVolume, ...] = ()
    source: Optional[Path] = None

    @property
    def variant(self) -> str:
        return self.network.variant

    @property
    def horizon(self) -> int:
        """Число рабочих дней: строки исторического файла или days."""
        return len(self.case_volumes) if self.case_volumes else self.days

    def weekday(self, day: int) -> str:
        if self.case_volumes:
            return self.case_volumes[day].weekday
        return WEEKDAYS[day % len(WEEKDAYS)]

    def historical_count(self, day: int) -> Optional[int]:
        return self.case_volumes[day].case_count if self.case_volumes else None

    def with_fleet(self, plan: FleetPlan) -> "Scenario":
        return replace(self, fleet=plan)

    def with_variant(self, variant: str) -> "Scenario":
        try:
            return replace(self, network=apply_variant(self.network, variant))
        except LayoutError as e:
            raise ScenarioError(str(e)) from e

    def with_horizon(self, days: Optional[int] = None, replications: Optional[int] = None) -> "Scenario":
        changes: Dict[str, Any] = {}
        if days is not None:
            if days < 1:
                raise ScenarioError("days must be positive")
            changes["days"] = days
            if self.case_volumes:
                changes["case_volumes"] = self.case_volumes[:days]
        if replications is not None:
            if replications < 1:
                raise ScenarioError("replications must be positive")
            changes["replications"] = replications
        return replace(self, **changes)


def _weekday(value: Any, where: str) -> str:
    name = _WEEKDAY_NAMES.get(str(value).strip().lower())
    if name is None:
        raise ScenarioError(f"{where}: unknown weekday {value!r}")
    return name


def _distributions(table: Dict[str, Any], kind: type, where: str) -> Dict[str, Any]:
    result = {}
    for key, literal in table.items():
        weekday = _weekday(key, where)
        try:
            dist = parse_distribution(str(literal))
        except ValueError as e:
            raise ScenarioError(f"{where}.{key}: {e}") from e
        if not isinstance(dist, kind):
            raise ScenarioError(f"{where}.{key}: expected {'TRIA' if kind is TriangularDist else 'DISC'} literal")
        result[weekday] = dist
    return result


def read_case_volumes(path: Path) -> Tuple[CaseVolume, ...]:
    """
    Исторические объёмы операций: строки date,weekday,case_count.

    Args:
        path: путь к CSV-файлу

    Returns:
        Кортеж CaseVolume в порядке строк файла
    """
    try:
        text = read_text(path)
    except OSError as e:
        raise ScenarioError(f"cannot read case volume file {path}: {e}") from e
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise ScenarioError(f"{path}: empty case volume file") from e
    missing = {"date", "weekday", "case_count"} - set(frame.columns)
    if missing:
        raise ScenarioError(f"{path}: missing columns {sorted(missing)}")

    volumes = []
    for index, row in frame.iterrows():
        line = index + 2
        weekday = _weekday(row["weekday"], f"{path.name} line {line}")
        try:
            count = int(row["case_count"])
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"{path.name} line {line}: bad case_count {row['case_count']!r}") from e
        if count < 0:
            raise ScenarioError(f"{path.name} line {line}: negative case_count")
        volumes.append(CaseVolume(str(row["date"]), weekday, count))
    if not volumes:
        raise ScenarioError(f"{path}: no case volume rows")
    return tuple(volumes)


def parse_scenario(data: Dict[str, Any], base_dir: Path, source: Optional[Path] = None) -> Scenario:
    unknown = sorted(set(data) - _SCENARIO_KEYS)
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {unknown}")

    layout_path = Path(data["layout"]) if "layout" in data else REFERENCE_LAYOUT
    if not layout_path.is_absolute():
        layout_path = base_dir / layout_path
    try:
        spec = parse_layout(read_text(layout_path))
        spec = apply_variant(spec, str(data.get("variant", spec.variant)))
    except OSError as e:
        raise ScenarioError(f"cannot read layout {layout_path}: {e}") from e
    except LayoutError as e:
        raise ScenarioError(f"layout {layout_path.name}: {e}") from e
    report = validate_network(spec)
    if not report.ok:
        raise ScenarioError(f"layout {layout_path.name} is invalid:\n" + "\n".join(report))

    pool_size = int(data.get("pool_size", AGV_POOL))
    fleet_value = data.get("fleet", pool_size)
    try:
        if isinstance(fleet_value, dict):
            fleet = FleetPlan.from_mapping({_weekday(k, "fleet"): v for k, v in fleet_value.items()}, pool_size)
        else:
            fleet = FleetPlan.constant(int(fleet_value), pool_size)
    except ValueError as e:
        raise ScenarioError(f"fleet: {e}") from e

    kin = data.get("kinematics", {})
    unknown = sorted(set(kin) - _KINEMATICS_KEYS)
    if unknown:
        raise ScenarioError(f"unknown kinematics keys: {unknown}")
    defaults = KinematicsParams()
    try:
        kinematics = KinematicsParams(
            v_straight=float(kin.get("v_straight_ft_min", defaults.v_straight)),
            turn_factor=float(kin.get("turn_factor", defaults.turn_factor)),
            accel=float(kin.get("accel_ft_s2", defaults.accel)),
            decel=float(kin.get("decel_ft_s2", defaults.decel)),
        )
        picking = parse_distribution(str(data.get("picking", PICKING_TIME)))
    except ValueError as e:
        raise ScenarioError(str(e)) from e

    case_volumes: Tuple[CaseVolume, ...] = ()
    if "case_volume_file" in data:
        volume_path = Path(data["case_volume_file"])
        if not volume_path.is_absolute():
            volume_path = base_dir / volume_path
        case_volumes = read_case_volumes(volume_path)

    case_counts = _distributions(data.get("case_counts", {}), TriangularDist, "case_counts")
    release = _distributions(data.get("release", {}), EmpiricalCdf, "release")
    needed = sorted({v.weekday for v in case_volumes}) if case_volumes else list(WEEKDAYS)
    for weekday in needed:
        if weekday not in release:
            raise ScenarioError(f"release: missing DISC literal for {weekday}")
        if not case_volumes and weekday not in case_counts:
            raise ScenarioError(f"case_counts: missing TRIA literal for {weekday}")

    seed = data.get("seed")
    scenario = Scenario(
        network=spec,
        fleet=fleet,
        case_counts=case_counts,
        release=release,
        days=int(data.get("days", DAYS)),
        replications=int(data.get("replications", REPLICATIONS)),
        seed=int(seed) if seed is not None else None,
        wash_cycle_min=float(data.get("wash_cycle_min", WASH_CYCLE_MIN)),
        drying_min=float(data.get("drying_min", DRYING_MIN)),
        picking=picking,
        transfer_s=float(data.get("transfer_s", TRANSFER_S)),
        loading_employees=int(data.get("loading_employees", LOADING_EMPLOYEES)),
        cart_pool=int(data.get("cart_pool", CART_POOL)),
        washers=int(data.get("washers", WASHERS)),
        kinematics=kinematics,
        case_volumes=case_volumes,
        source=source,
    )
    for name in ("days", "replications", "loading_employees", "cart_pool", "washers"):
        if getattr(scenario, name) < 1:
            raise ScenarioError(f"{name} must be positive")
    if scenario.wash_cycle_min < 0 or scenario.drying_min < 0 or scenario.transfer_s < 0:
        raise ScenarioError("wash_cycle_min, drying_min and transfer_s must be non-negative")
    return scenario


def load_scenario(path: Path) -> Scenario:
    """
    Загружает и проверяет сценарий.

    Args:
        path: TOML-файл сценария; пути внутри него считаются от его папки

    Returns:
        Scenario с применённым вариантом сети
    """
    path = Path(path)
    try:
        data = tomllib.loads(read_text(path))
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{path.name}: {e}") from e
    scenario = parse_scenario(data, path.parent, source=path)
    logger.info(
        f"Scenario {path.name}: variant {scenario.variant}, fleet {scenario.fleet.label}, "
        f"{scenario.horizon} days x {scenario.replications} reps"
    )
    return scenario

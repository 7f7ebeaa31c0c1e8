"""
Разбор журналов поездок системы управления AGV и вывод входных данных модели.

Журнал: CSV с заголовком pickup_ts,dropoff_ts,from,to,cart_type и метками
времени в ISO-8601. Кодировка выгрузки заранее неизвестна.
"""

import io
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from charset_normalizer import from_bytes
from scipy import stats

from config.settings import WEEKDAYS
from .logger import logger
from .stochastics import EmpiricalCdf, TriangularDist

LOG_COLUMNS = ("pickup_ts", "dropoff_ts", "from", "to", "cart_type")
SURGICAL_TAGS = ("surgical", "case_cart", "case")

# Интервалы суток (часы от полуночи), как в сводке по времени суток
DEFAULT_BINS: Tuple[Tuple[int, int], ...] = ((0, 3), (3, 6), (6, 9), (9, 12), (12, 15), (15, 19), (19, 21), (21, 24))

# Направления поездок -> тип тележки
ROUTE_STATES = {
    ("MD", "CCSA"): "clean",
    ("MD", "SCSA"): "clean",
    ("SCSA", "CSSD"): "soiled",
    ("CCSA", "CSSD"): "soiled",
    ("CSSD", "MD"): "washed",
}

_FALLBACK_ENCODINGS = ("utf-8", "windows-1251", "koi8-r", "cp866", "iso-8859-5", "latin-1")
_DAY_START = pd.Timedelta(hours=8)


class IngestError(Exception):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def decode_bytes(raw: bytes, name: str = "") -> str:
    """Текст из байтов: сначала строгий UTF-8, затем определение кодировки, затем перебор."""
    if not raw:
        return ""
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        text = None
        try:
            best = from_bytes(raw).best()
            if best is not None:
                text = str(best)
                logger.info(f"{name or 'input'} decoded as {best.encoding}")
        except Exception:
            text = None
        if text is None:
            for encoding in _FALLBACK_ENCODINGS[1:]:
                try:
                    text = raw.decode(encoding)
                    logger.info(f"Fallback: {name or 'input'} decoded as {encoding}")
                    break
                except UnicodeDecodeError:
                    continue
    if text.startswith("\ufeff"):
        text = text[1:]
    return text


def read_text(path: Path) -> str:
    path = Path(path)
    return decode_bytes(path.read_bytes(), path.name)


@dataclass(frozen=True)
class TripLogRow:
    line: int
    pickup: pd.Timestamp
    dropoff: pd.Timestamp
    origin: str
    destination: str
    cart_type: str

    @property
    def travel_minutes(self) -> float:
        return (self.dropoff - self.pickup).total_seconds() / 60.0

    @property
    def route(self) -> str:
        return f"{self.origin}-{self.destination}"

    @property
    def cart_state(self) -> Optional[str]:
        return ROUTE_STATES.get((self.origin, self.destination))

    @property
    def business_day(self) -> pd.Timestamp:
        """Дата рабочих суток (с 8:00 до 8:00) по времени погрузки."""
        return (self.pickup - _DAY_START).normalize()


@dataclass
class TripLog:
    rows: List[TripLogRow] = field(default_factory=list)
    outliers: int = 0
    filtered: int = 0

    @property
    def total(self) -> int:
        return len(self.rows) + self.outliers + self.filtered

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


def _timestamp(value: str, column: str, line: int) -> pd.Timestamp:
    try:
        stamp = pd.to_datetime(value, format="ISO8601")
    except (ValueError, TypeError) as e:
        raise IngestError(f"malformed {column} timestamp {value!r}", line) from e
    if pd.isna(stamp):
        raise IngestError(f"missing {column} timestamp", line)
    return stamp


def parse_trip_log(text: str, surgical_only: bool = False, max_minutes: Optional[float] = None) -> TripLog:
    """
    Разбирает журнал поездок.

    Args:
        text: содержимое CSV-файла
        surgical_only: оставить только хирургические тележки
        max_minutes: поездки дольше порога тоже считаются выбросами (поломки AGV)

    Returns:
        TripLog: строки, число выбросов и отфильтрованных строк
    """
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise IngestError("empty trip log") from e
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in LOG_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError(f"missing columns {missing}; expected header {','.join(LOG_COLUMNS)}", 1)

    log = TripLog()
    for index, record in enumerate(frame.itertuples(index=False)):
        values = dict(zip(frame.columns, record))
        line = index + 2
        pickup = _timestamp(values["pickup_ts"], "pickup", line)
        dropoff = _timestamp(values["dropoff_ts"], "dropoff", line)
        origin, destination = values["from"].strip(), values["to"].strip()
        if not origin or not destination:
            raise IngestError("empty pickup or drop-off location", line)
        row = TripLogRow(line, pickup, dropoff, origin, destination, values["cart_type"].strip().lower())

        if surgical_only and row.cart_type not in SURGICAL_TAGS:
            log.filtered += 1
            continue
        if row.dropoff < row.pickup or (max_minutes is not None and row.travel_minutes > max_minutes):
            log.outliers += 1
            continue
        log.rows.append(row)

    if log.outliers:
        logger.warning(f"Trip log: {log.outliers} outlier row(s) removed")
    logger.info(f"Trip log parsed: {len(log.rows)} rows kept of {log.total}")
    return log


def _hour_label(hour: int) -> str:
    hour %= 24
    return f"{hour % 12 or 12}{'am' if hour < 12 else 'pm'}"


def interval_label(start: int, end: int) -> str:
    return f"{_hour_label(start)}-{_hour_label(end)}"


def route_time_summary(rows: Sequence[TripLogRow], bins: Sequence[Tuple[int, int]] = DEFAULT_BINS) -> pd.DataFrame:
    """
    Поездки по маршрутам и интервалам суток: число, среднее, СКО, коэффициент вариации.

    Интервал определяется по часу погрузки; СКО одиночной поездки не определено (NaN).
    """
    if not rows:
        raise ValueError("route_time_summary needs at least one row")
    groups: Dict[Tuple[str, int], List[float]] = defaultdict(list)
    for row in rows:
        clock = row.pickup.hour + row.pickup.minute / 60.0 + row.pickup.second / 3600.0
        for index, (start, end) in enumerate(bins):
            if start <= clock < end:
                groups[(row.route, index)].append(row.travel_minutes)
                break

    records = []
    for (route, index), travel in sorted(groups.items()):
        values = np.asarray(travel, dtype=float)
        mean = float(values.mean())
        sd = float(values.std(ddof=1)) if values.size > 1 else float("nan")
        cv = sd / mean if values.size > 1 and mean > 0 else float("nan")
        start, end = bins[index]
        records.append({
            "route": route,
            "interval": interval_label(start, end),
            "n": int(values.size),
            "mean": mean,
            "sd": sd,
            "cv": cv,
        })
    return pd.DataFrame.from_records(records, columns=["route", "interval", "n", "mean", "sd", "cv"])


def fit_triangular(counts: Sequence[float], mode: str = "nearest_mean") -> TriangularDist:
    """
    TRIA по дневным числам операций одного дня недели.

    a и b: минимум и максимум. Мода: наблюдённое значение, ближайшее к
    среднему (при равенстве: меньшее), или mode='mle': наблюдённое
    значение с наибольшим правдоподобием внутренних точек.
    """
    values = np.asarray(counts, dtype=float)
    if values.size < 3:
        raise ValueError(f"fit_triangular needs at least 3 counts, got {values.size}")
    a, b = float(values.min()), float(values.max())
    if a == b:
        raise ValueError("fit_triangular: constant counts give a degenerate distribution")

    candidates = sorted(set(values.tolist()))
    if mode == "nearest_mean":
        mean = float(values.mean())
        m = min(candidates, key=lambda v: (abs(v - mean), v))
    elif mode == "mle":
        inner = values[(values > a) & (values < b)]
        if inner.size == 0:
            return fit_triangular(counts, "nearest_mean")

        def loglik(m: float) -> float:
            return float(stats.triang.logpdf(inner, (m - a) / (b - a), loc=a, scale=b - a).sum())

        m = max(candidates, key=lambda v: (loglik(v), -v))
    else:
        raise ValueError(f"Unknown mode estimator {mode!r}")
    return TriangularDist(a, m, b)


def build_release_cdf(offsets: Iterable[float], bin_minutes: float = 30.0) -> EmpiricalCdf:
    """
    Эмпирическая функция распределения выпуска грязных тележек.

    Точка (p, v): доля тележек, выпущенных раньше v + bin_minutes; значение v это
    начало получасового интервала от 8:00. Точки после достижения 1 отбрасываются.

    Args:
        offsets: минуты от 8:00 (в пределах суток)
        bin_minutes: ширина интервала

    Returns:
        EmpiricalCdf
    """
    values = np.asarray(list(offsets), dtype=float)
    if values.size == 0:
        raise ValueError("build_release_cdf needs at least one release")
    if values.min() < 0 or values.max() >= 1440.0:
        raise ValueError("release offsets must lie in [0, 1440)")
    n_bins = int(np.ceil(1440.0 / bin_minutes))
    counts = np.bincount((values // bin_minutes).astype(int), minlength=n_bins)
    cumulative = np.cumsum(counts)
    points = []
    for index in range(n_bins):
        probability = float(cumulative[index]) / values.size
        points.append((probability, index * bin_minutes))
        if cumulative[index] == values.size:
            break
    points[-1] = (1.0, points[-1][1])
    return EmpiricalCdf(tuple(points))


def release_offsets(rows: Sequence[TripLogRow]) -> Dict[str, List[float]]:
    """Минуты от 8:00 до доставки грязной тележки, по дням недели."""
    result: Dict[str, List[float]] = defaultdict(list)
    for row in rows:
        if row.cart_state != "soiled":
            continue
        day = (row.dropoff - _DAY_START).normalize()
        weekday = WEEKDAYS[day.weekday()] if day.weekday() < len(WEEKDAYS) else None
        if weekday is None:
            continue
        offset = (row.dropoff - day - _DAY_START).total_seconds() / 60.0
        result[weekday].append(offset)
    return dict(result)


def daily_case_counts(rows: Sequence[TripLogRow]) -> Dict[str, List[int]]:
    """Число чистых поездок за рабочие сутки, по дням недели (выходные пропускаются)."""
    per_day: Dict[pd.Timestamp, int] = defaultdict(int)
    for row in rows:
        if row.cart_state == "clean":
            per_day[row.business_day] += 1
    result: Dict[str, List[int]] = defaultdict(list)
    for day in sorted(per_day):
        if day.weekday() < len(WEEKDAYS):
            result[WEEKDAYS[day.weekday()]].append(per_day[day])
    return dict(result)


def fit_inputs(rows: Sequence[TripLogRow], mode: str = "nearest_mean") -> Tuple[Dict[str, TriangularDist], Dict[str, EmpiricalCdf]]:
    """TRIA по дням недели и функции выпуска: всё, что нужно вставить в сценарий."""
    case_counts = {}
    for weekday, counts in daily_case_counts(rows).items():
        try:
            case_counts[weekday] = fit_triangular(counts, mode)
        except ValueError as e:
            logger.warning(f"No TRIA fit for {weekday}: {e}")
    release = {weekday: build_release_cdf(offsets) for weekday, offsets in release_offsets(rows).items()}
    return case_counts, release


def distribution_file(case_counts: Dict[str, TriangularDist], release: Dict[str, EmpiricalCdf]) -> str:
    """Фрагмент сценария с литералами TRIA(...) и DISC(...)."""
    lines = ["[case_counts]"]
    lines += [f'{d} = "{case_counts[d].literal()}"' for d in WEEKDAYS if d in case_counts]
    lines += ["", "[release]"]
    lines += [f'{d} = "{release[d].literal()}"' for d in WEEKDAYS if d in release]
    return "\n".join(lines) + "\n"

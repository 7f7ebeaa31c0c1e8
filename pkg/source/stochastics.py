"""
Случайные величины, потоки ГСЧ и статистические тесты SimOpt.

Распределения записываются в тех же литералах, что и во входных данных:
TRIA(a,m,b) и DISC(p1,v1,p2,v2,...).
"""

import re
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .logger import logger

# Именованные потоки ГСЧ, порядок фиксирован (от него зависит spawn_key)
STREAMS = ("case_count", "release_time", "picking_time", "dispatch_tiebreak")

_LITERAL_RE = re.compile(r"^\s*(TRIA|DISC)\s*\((.*)\)\s*$", re.IGNORECASE | re.DOTALL)


def _fmt(value: float) -> str:
    """Число без лишних нулей: 60.0 -> '60', 0.25 -> '0.25'."""
    return f"{value:g}" if float(value) != int(value) else str(int(value))


@dataclass(frozen=True)
class TriangularDist:
    a: float
    m: float
    b: float

    def __post_init__(self):
        if not (self.a <= self.m <= self.b) or not self.a < self.b:
            raise ValueError(
                f"Invalid TRIA({self.a},{self.m},{self.b}): need a <= m <= b and a < b"
            )

    @property
    def mean(self) -> float:
        return (self.a + self.m + self.b) / 3.0

    def literal(self) -> str:
        return f"TRIA({_fmt(self.a)},{_fmt(self.m)},{_fmt(self.b)})"


@dataclass(frozen=True)
class EmpiricalCdf:
    """
    Дискретное эмпирическое распределение.

    points: упорядоченные пары (накопленная вероятность, значение в минутах от 8:00).
    Повторяющиеся вероятности допустимы (в исходных данных есть пустые интервалы).
    """

    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not self.points:
            raise ValueError("Empirical CDF needs at least one point")
        probs = [p for p, _ in self.points]
        values = [v for _, v in self.points]
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValueError("CDF probabilities must lie in [0, 1]")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise ValueError("CDF probabilities must be non-decreasing")
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError("CDF values must be non-decreasing")
        if abs(probs[-1] - 1.0) > 1e-9:
            raise ValueError(f"CDF must end at probability 1, got {probs[-1]}")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.points], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points], dtype=float)

    def mass(self) -> Dict[float, float]:
        """Вероятность каждого значения (разности накопленных вероятностей)."""
        result: Dict[float, float] = {}
        previous = 0.0
        for p, v in self.points:
            result[v] = result.get(v, 0.0) + (p - previous)
            previous = p
        return result

    def literal(self) -> str:
        body = ",".join(f"{_fmt(p)},{_fmt(v)}" for p, v in self.points)
        return f"DISC({body})"


Distribution = Union[TriangularDist, EmpiricalCdf]


def parse_distribution(text: str) -> Distribution:
    """
    Разбирает литерал распределения.

    Args:
        text: 'TRIA(60,68,75)' или 'DISC(0.004,0,0.05,30,...,1,1410)'

    Returns:
        TriangularDist или EmpiricalCdf
    """
    match = _LITERAL_RE.match(text)
    if not match:
        raise ValueError(f"Unknown distribution literal: {text!r}")
    kind = match.group(1).upper()
    try:
        numbers = [float(x) for x in match.group(2).replace("\n", " ").split(",") if x.strip()]
    except ValueError as e:
        raise ValueError(f"Malformed numbers in {text!r}: {e}") from e

    if kind == "TRIA":
        if len(numbers) != 3:
            raise ValueError(f"TRIA needs 3 parameters, got {len(numbers)}")
        return TriangularDist(*numbers)

    if len(numbers) % 2:
        raise ValueError("DISC needs (probability, value) pairs")
    pairs = tuple(zip(numbers[0::2], numbers[1::2]))
    return EmpiricalCdf(pairs)


def sample_triangular(d: TriangularDist, u: float) -> float:
    """Обратное преобразование для TRIA(a, m, b)."""
    a, m, b = d.a, d.m, d.b
    if u <= (m - a) / (b - a):
        return a + float(np.sqrt(u * (b - a) * (m - a)))
    return b - float(np.sqrt((1.0 - u) * (b - a) * (b - m)))


def sample_triangular_many(d: TriangularDist, u: np.ndarray) -> np.ndarray:
    a, m, b = d.a, d.m, d.b
    u = np.asarray(u, dtype=float)
    left = a + np.sqrt(u * (b - a) * (m - a))
    right = b - np.sqrt((1.0 - u) * (b - a) * (b - m))
    return np.where(u <= (m - a) / (b - a), left, right)


def sample_discrete_cdf(c: EmpiricalCdf, u: float) -> float:
    """Значение первой точки, у которой накопленная вероятность >= u."""
    index = int(np.searchsorted(c.probabilities, u, side="left"))
    return float(c.values[min(index, len(c.points) - 1)])


def sample_discrete_cdf_many(c: EmpiricalCdf, u: np.ndarray) -> np.ndarray:
    index = np.searchsorted(c.probabilities, np.asarray(u, dtype=float), side="left")
    return c.values[np.minimum(index, len(c.points) - 1)]


def sample(dist: Distribution, u: float) -> float:
    if isinstance(dist, TriangularDist):
        return sample_triangular(dist, u)
    return sample_discrete_cdf(dist, u)


class RngPolicy:
    """
    Набор независимых именованных потоков ГСЧ для одной репликации.

    Потоки порождаются из SeedSequence(master_seed, spawn_key=(replication, index)),
    поэтому выборки одного потока не зависят от того, сколько чисел взято из других.
    Это даёт общие случайные числа при сравнении сценариев (разный парк AGV
    не сдвигает число кейсов и времена освобождения).
    """

    def __init__(self, master_seed: int, replication: int = 0):
        if master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        self.master_seed = int(master_seed)
        self.replication = int(replication)
        self.streams: Dict[str, np.random.Generator] = {
            name: np.random.default_rng(
                np.random.SeedSequence(self.master_seed, spawn_key=(self.replication, index))
            )
            for index, name in enumerate(STREAMS)
        }
        logger.debug(f"RNG streams planted: seed={self.master_seed}, rep={self.replication}")

    def uniform(self, name: str) -> float:
        return float(self.streams[name].random())

    def stream(self, name: str) -> np.random.Generator:
        return self.streams[name]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    degrees_of_freedom: Union[float, Tuple[float, float]]
    p_value: float
    confidence_interval: Tuple[float, float]
    level: float = 0.95
    estimate: float = float("nan")

    # pytest не должен собирать этот класс как тест
    __test__ = False

    @property
    def significant(self) -> bool:
        return self.p_value < 1.0 - self.level


def _as_sample(values: Sequence[float], name: str, minimum: int = 2) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != 1 or array.size < minimum:
        raise ValueError(f"{name} needs at least {minimum} observations, got {array.size}")
    return array


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float], level: float = 0.95) -> TestResult:
    """
    Двухвыборочный t-тест Уэлча (двусторонний) и доверительный интервал разности средних.

    Args:
        sample_a: первая выборка (n >= 2)
        sample_b: вторая выборка (n >= 2)
        level: уровень доверия

    Returns:
        TestResult; estimate = mean(a) - mean(b)
    """
    a = _as_sample(sample_a, "sample_a")
    b = _as_sample(sample_b, "sample_b")
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        raise ValueError("Both samples have zero variance")

    result = stats.ttest_ind(a, b, equal_var=False)
    ci = result.confidence_interval(confidence_level=level)
    return TestResult(
        statistic=float(result.statistic),
        degrees_of_freedom=float(result.df),
        p_value=float(result.pvalue),
        confidence_interval=(float(ci.low), float(ci.high)),
        level=level,
        estimate=float(a.mean() - b.mean()),
    )


def variance_ratio_test(
    sample_a: Sequence[float],
    sample_b: Sequence[float],
    level: float = 0.95,
    method: str = "f",
) -> TestResult:
    """
    Сравнение разбросов двух выборок.

    По умолчанию F-тест: статистика = большая дисперсия / меньшая, двустороннее p.
    method='levene': тест Левене (медианный), доверительный интервал тот же (для var_a/var_b).
    """
    a = _as_sample(sample_a, "sample_a")
    b = _as_sample(sample_b, "sample_b")
    var_a, var_b = float(a.var(ddof=1)), float(b.var(ddof=1))
    if var_a <= 0.0 or var_b <= 0.0:
        raise ValueError("Variance ratio test needs positive variance in both samples")

    alpha = 1.0 - level
    ratio = var_a / var_b
    ci = (
        ratio / float(stats.f.ppf(1.0 - alpha / 2.0, a.size - 1, b.size - 1)),
        ratio / float(stats.f.ppf(alpha / 2.0, a.size - 1, b.size - 1)),
    )

    if method == "levene":
        statistic, p_value = stats.levene(a, b, center="median")
        return TestResult(
            statistic=float(statistic),
            degrees_of_freedom=(1.0, float(a.size + b.size - 2)),
            p_value=float(p_value),
            confidence_interval=ci,
            level=level,
            estimate=ratio,
        )
    if method != "f":
        raise ValueError(f"Unknown variance test: {method}")

    if var_a >= var_b:
        statistic, dfn, dfd = var_a / var_b, a.size - 1, b.size - 1
    else:
        statistic, dfn, dfd = var_b / var_a, b.size - 1, a.size - 1
    p_value = float(min(1.0, 2.0 * stats.f.sf(statistic, dfn, dfd)))

    return TestResult(
        statistic=float(statistic),
        degrees_of_freedom=(float(dfn), float(dfd)),
        p_value=p_value,
        confidence_interval=ci,
        level=level,
        estimate=ratio,
    )


def mean_ci(sample: Sequence[float], level: float = 0.95) -> TestResult:
    """Доверительный интервал Стьюдента для среднего (p-value против H0 mean = 0)."""
    x = _as_sample(sample, "sample")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    dof = float(x.size - 1)

    if sd == 0.0:
        return TestResult(
            statistic=mean,
            degrees_of_freedom=dof,
            p_value=1.0 if mean == 0.0 else 0.0,
            confidence_interval=(mean, mean),
            level=level,
            estimate=mean,
        )

    se = sd / float(np.sqrt(x.size))
    t_crit = float(stats.t.ppf(0.5 + level / 2.0, dof))
    p_value = float(min(1.0, 2.0 * stats.t.sf(abs(mean / se), dof)))
    return TestResult(
        statistic=mean,
        degrees_of_freedom=dof,
        p_value=p_value,
        confidence_interval=(mean - t_crit * se, mean + t_crit * se),
        level=level,
        estimate=mean,
    )


def coefficient_of_variation(sample: Sequence[float]) -> float:
    x = _as_sample(sample, "sample")
    mean = float(x.mean())
    if mean == 0.0:
        raise ValueError("Coefficient of variation is undefined for zero mean")
    return float(x.std(ddof=1)) / mean

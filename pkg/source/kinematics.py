"""
Кинематика AGV: трапециевидный (или треугольный) профиль скорости.

Расстояния в футах, время в секундах. Скорость прямолинейного движения
задаётся в футах в минуту, как в таблице параметров модели.
"""

import math
from dataclasses import dataclass

from config.settings import ACCEL_FT_S2, DECEL_FT_S2, TURN_FACTOR, V_STRAIGHT_FT_MIN


@dataclass(frozen=True)
class KinematicsParams:
    v_straight: float = V_STRAIGHT_FT_MIN
    turn_factor: float = TURN_FACTOR
    accel: float = ACCEL_FT_S2
    decel: float = DECEL_FT_S2

    def __post_init__(self):
        for name in ("v_straight", "turn_factor", "accel", "decel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Kinematics parameter {name} must be positive")
        if self.turn_factor > 1.0:
            raise ValueError("turn_factor must not exceed 1")

    def peak_speed(self, turning: bool = False) -> float:
        """Максимальная скорость на участке, фут/с."""
        v = self.v_straight / 60.0
        return v * self.turn_factor if turning else v

    def stop_penalty(self, turning: bool = False) -> float:
        """Потеря времени на торможение до нуля с крейсерской скорости, с."""
        return self.peak_speed(turning) / (2.0 * self.decel)


class MotionProfile:
    """
    Профиль движения на отрезке длиной distance.

    Разгон с v0 до пика, движение с постоянной скоростью, торможение до нуля
    (если stop_at_end). Если пиковая скорость недостижима, профиль треугольный.
    """

    def __init__(
        self,
        distance: float,
        v_peak: float,
        accel: float,
        decel: float,
        v0: float = 0.0,
        stop_at_end: bool = True,
    ):
        if distance <= 0:
            raise ValueError(f"distance must be positive, got {distance}")
        if v0 < 0 or v0 > v_peak:
            raise ValueError("initial speed must lie in [0, v_peak]")

        self.distance = float(distance)
        self.accel = accel
        self.decel = decel
        self.v0 = v0
        self.stop_at_end = stop_at_end

        d_acc = (v_peak ** 2 - v0 ** 2) / (2.0 * accel)
        d_dec = v_peak ** 2 / (2.0 * decel) if stop_at_end else 0.0

        if d_acc + d_dec <= self.distance:
            v_max = v_peak
        elif stop_at_end:
            if v0 ** 2 / (2.0 * decel) > self.distance:
                raise ValueError("cannot stop within the given distance")
            v_max = math.sqrt(
                (self.distance + v0 ** 2 / (2.0 * accel))
                / (1.0 / (2.0 * accel) + 1.0 / (2.0 * decel))
            )
        else:
            v_max = math.sqrt(v0 ** 2 + 2.0 * accel * self.distance)

        self.v_max = v_max
        self.x_acc = (v_max ** 2 - v0 ** 2) / (2.0 * accel)
        self.x_dec = v_max ** 2 / (2.0 * decel) if stop_at_end else 0.0
        self.x_cruise = max(self.distance - self.x_acc - self.x_dec, 0.0)
        self.t_acc = (v_max - v0) / accel
        self.t_cruise = self.x_cruise / v_max if v_max > 0 else 0.0
        self.t_dec = v_max / decel if stop_at_end else 0.0

    @property
    def total(self) -> float:
        return self.t_acc + self.t_cruise + self.t_dec

    def time_at(self, x: float) -> float:
        """Момент прохождения точки x (с начала отрезка)."""
        x = min(max(x, 0.0), self.distance)
        if x <= self.x_acc:
            return (-self.v0 + math.sqrt(self.v0 ** 2 + 2.0 * self.accel * x)) / self.accel
        if x <= self.x_acc + self.x_cruise:
            return self.t_acc + (x - self.x_acc) / self.v_max
        s = x - self.x_acc - self.x_cruise
        tau = (self.v_max - math.sqrt(max(self.v_max ** 2 - 2.0 * self.decel * s, 0.0))) / self.decel
        return self.t_acc + self.t_cruise + tau

    def speed_at(self, x: float) -> float:
        x = min(max(x, 0.0), self.distance)
        if x <= self.x_acc:
            return math.sqrt(self.v0 ** 2 + 2.0 * self.accel * x)
        if x <= self.x_acc + self.x_cruise:
            return self.v_max
        remaining = self.distance - x
        return math.sqrt(max(2.0 * self.decel * remaining, 0.0))


def profile_for(distance: float, k: KinematicsParams, turning: bool = False, stop_at_end: bool = True) -> MotionProfile:
    return MotionProfile(distance, k.peak_speed(turning), k.accel, k.decel, stop_at_end=stop_at_end)


def traverse_time(distance: float, k: KinematicsParams, turning: bool = False, stop_at_end: bool = True) -> float:
    """
    Время прохождения отрезка из состояния покоя, в секундах.

    Args:
        distance: длина в футах (> 0)
        k: параметры кинематики
        turning: участок с поворотом (скорость умножается на turn_factor)
        stop_at_end: торможение до полной остановки в конце

    Returns:
        Время в секундах
    """
    return profile_for(distance, k, turning, stop_at_end).total

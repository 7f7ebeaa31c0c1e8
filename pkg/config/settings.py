# Настройки проекта: значения по умолчанию для модели и пути к встроенным файлам
from pathlib import Path

CONFIG_DIR = Path(__file__).parent

# Встроенная эталонная сеть и сценарии
REFERENCE_LAYOUT = CONFIG_DIR / "reference_layout.toml"
REFERENCE_SCENARIO_M = CONFIG_DIR / "reference_m.toml"
REFERENCE_SCENARIO_S = CONFIG_DIR / "reference_s.toml"
SAMPLE_CASE_VOLUMES = CONFIG_DIR / "case_volume_sample.csv"

# Сеть
ZONE_LENGTH_FT = 3.0
DOOR_DELAY_S = 11.0
ELEVATOR_RIDE_S = 15.0

# Кинематика AGV (скорость в футах в минуту, ускорения в футах в секунду^2)
V_STRAIGHT_FT_MIN = 200.0
TURN_FACTOR = 0.5
ACCEL_FT_S2 = 0.98
DECEL_FT_S2 = 0.98

# Погрузка/выгрузка тележки на AGV
TRANSFER_S = 10.0

# Ресурсы
CART_POOL = 110
LOADING_EMPLOYEES = 4
WASHERS = 3
AGV_POOL = 11

# Расписание дня (минуты от 8:00)
DAY_MINUTES = 1440.0
CLEAN_START_MIN = 420.0
WASH_CYCLE_MIN = 15.0
DRYING_MIN = 30.0
PICKING_TIME = "TRIA(3,4,5)"

# Прогоны
DAYS = 30
REPLICATIONS = 30
CONFIDENCE_LEVEL = 0.95

WEEKDAYS = ("mon", "tue", "wed", "thu", "fri")

import os
import sys
import tempfile
from pathlib import Path

import pytest

# Корень проекта, чтобы импорты source и config работали
sys.path.insert(0, str(Path(__file__).parent.parent))
# Журнал тестов не смешивается с журналом рабочих прогонов
os.environ.setdefault("AGV_SIMOPT_LOG_DIR", str(Path(tempfile.gettempdir()) / "agvsim-tests"))

from config.settings import WEEKDAYS  # noqa: E402
from source.layout import apply_variant, parse_layout  # noqa: E402
from source.scenario import Scenario  # noqa: E402
from source.stochastics import EmpiricalCdf, TriangularDist  # noqa: E402
from source.workflow import FleetPlan  # noqa: E402

# Кольцо N1 -> N2 -> N3 -> N4 -> N5 -> N1, станции на ответвлениях
TINY_LAYOUT = """
zone_length_ft = 3.0
variant = "M"

[[node]]
id = "N1"
[[node]]
id = "N2"
[[node]]
id = "N3"
[[node]]
id = "N4"
[[node]]
id = "N5"
[[node]]
id = "MD"
[[node]]
id = "CCSA"
[[node]]
id = "SCSA"
[[node]]
id = "CSSD"
[[node]]
id = "PARK"

[[link]]
id = "N1-N2"
from = "N1"
to = "N2"
length_ft = 30
kind = "trunk"

[[link]]
id = "N2-N3"
from = "N2"
to = "N3"
length_ft = 30
kind = "trunk"

[[link]]
id = "N3-N4"
from = "N3"
to = "N4"
length_ft = 30
kind = "trunk"

[[link]]
id = "N4-N5"
from = "N4"
to = "N5"
length_ft = 30
kind = "trunk"

[[link]]
id = "N5-N1"
from = "N5"
to = "N1"
length_ft = 30
kind = "trunk"

[[link]]
id = "MD-N1"
from = "MD"
to = "N1"
length_ft = 9
kind = "spur"

[[link]]
id = "N2-CCSA"
from = "N2"
to = "CCSA"
length_ft = 9
kind = "spur"
turning = true

[[link]]
id = "N3-SCSA"
from = "N3"
to = "SCSA"
length_ft = 9
kind = "spur"

[[link]]
id = "N4-CSSD"
from = "N4"
to = "CSSD"
length_ft = 9
kind = "spur"

[[link]]
id = "N5-PARK"
from = "N5"
to = "PARK"
length_ft = 6
kind = "spur"

[[station]]
id = "MD"
node = "MD"
kind = "MD"
detents = 2

[[station]]
id = "CCSA"
node = "CCSA"
kind = "CCSA"
detents = 2

[[station]]
id = "SCSA"
node = "SCSA"
kind = "SCSA"
detents = 2

[[station]]
id = "CSSD"
node = "CSSD"
kind = "CSSD"
detents = 2

[[station]]
id = "PARK"
node = "PARK"
kind = "PARKING"
detents = 0

[[route]]
cart_state = "clean"
variant = "M"
links = ["MD-N1", "N1-N2", "N2-CCSA"]
lookahead = "N1-N2:5"

[[route]]
cart_state = "soiled"
variant = "M"
links = ["N3-SCSA", "N3-N4", "N4-CSSD"]

[[route]]
cart_state = "washed"
variant = "M"
links = ["N4-CSSD", "N4-N5", "N5-N1", "MD-N1"]

[[route]]
cart_state = "clean"
variant = "S"
links = ["MD-N1", "N1-N2", "N2-N3", "N3-SCSA"]

[[route]]
cart_state = "soiled"
variant = "S"
links = ["N2-CCSA", "N2-N3", "N3-N4", "N4-CSSD"]

[[route]]
cart_state = "washed"
variant = "S"
links = ["N4-CSSD", "N4-N5", "N5-N1", "MD-N1"]
"""

TINY_RELEASE = "DISC(0.5,60,1,120)"

TINY_SCENARIO = f"""
layout = "tiny_layout.toml"
variant = "M"
fleet = 2
pool_size = 3
days = 2
replications = 2
seed = 7
cart_pool = 20

[case_counts]
mon = "TRIA(3,4,5)"
tue = "TRIA(3,4,5)"
wed = "TRIA(3,4,5)"
thu = "TRIA(3,4,5)"
fri = "TRIA(3,4,5)"

[release]
mon = "{TINY_RELEASE}"
tue = "{TINY_RELEASE}"
wed = "{TINY_RELEASE}"
thu = "{TINY_RELEASE}"
fri = "{TINY_RELEASE}"
"""


@pytest.fixture
def tiny_layout_text() -> str:
    return TINY_LAYOUT


@pytest.fixture
def tiny_spec():
    return parse_layout(TINY_LAYOUT)


def make_scenario(variant: str = "M", fleet: int = 2, pool_size: int = 3, days: int = 2, replications: int = 2) -> Scenario:
    spec = apply_variant(parse_layout(TINY_LAYOUT), variant)
    release = EmpiricalCdf(((0.5, 60.0), (1.0, 120.0)))
    return Scenario(
        network=spec,
        fleet=FleetPlan.constant(fleet, pool_size),
        case_counts={d: TriangularDist(3, 4, 5) for d in WEEKDAYS},
        release={d: release for d in WEEKDAYS},
        days=days,
        replications=replications,
        seed=7,
        cart_pool=20,
    )


@pytest.fixture
def tiny_scenario() -> Scenario:
    return make_scenario()


@pytest.fixture
def scenario_dir(tmp_path) -> Path:
    """Папка с сетью и сценарием для команд CLI и загрузчика."""
    (tmp_path / "tiny_layout.toml").write_text(TINY_LAYOUT, encoding="utf-8")
    (tmp_path / "tiny.toml").write_text(TINY_SCENARIO, encoding="utf-8")
    return tmp_path


@pytest.fixture
def scenario_factory():
    return make_scenario

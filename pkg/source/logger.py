import logging
import os
import sys
from pathlib import Path

# Создаём папку для логов, если её нет
log_dir = Path(os.getenv("AGV_SIMOPT_LOG_DIR", "logs"))
log_dir.mkdir(parents=True, exist_ok=True)

# Настройка логирования
log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
date_format = "%Y-%m-%d %H:%M:%S"
log_level = os.getenv("AGV_SIMOPT_LOG_LEVEL", "INFO").upper()

logging.basicConfig(
    level=getattr(logging, log_level, logging.INFO),
    format=log_format,
    datefmt=date_format,
    handlers=[
        logging.FileHandler(log_dir / "agvsim.log", encoding="utf-8"),
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger("agvsim")

from app.utils.logger import logger
from app.utils.config import (
    WORKDIR,
    CACHE_DIR,
    SAMPLE_RATE,
    EMOTIONS,
)

from app.utils.logger import logger
from app.utils.errors import EvsvError

# config/settings.py
"""
Application Settings

Loads configuration from environment variables.
"""

import os
import logging
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# LOGGING

LOG_LEVEL = os.getenv('LAB_LOG_LEVEL', 'INFO').upper()

logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%d-%b-%y %H:%M:%S'
)

logger = logging.getLogger(__name__)

# OUTPUT ROOT

OUTPUT_ROOT = Path(os.getenv('LAB_OUTPUT_ROOT', 'runs'))

# DATABASE CONFIGURATION

DATABASE_URL = os.getenv('LAB_DATABASE_URL')

if DATABASE_URL:
    logger.debug("✅ Using LAB_DATABASE_URL")


def database_url_for(root: Path) -> str:
    """Registry URL for an output root (env override wins)"""
    if DATABASE_URL:
        return DATABASE_URL
    return f"sqlite:///{Path(root).resolve() / 'registry.sqlite'}"


# WORKERS

try:
    WORKERS = max(1, int(os.getenv('LAB_WORKERS', 1)))
except ValueError:
    logger.warning("⚠️  LAB_WORKERS is not an integer, falling back to 1")
    WORKERS = 1

logger.debug(f"Output root: {OUTPUT_ROOT}, workers: {WORKERS}, log level: {LOG_LEVEL}")

# database/connection.py
"""
Database Connection Management

Provides registry connection utilities using SQLAlchemy. One engine is
kept per database URL so tests and CLI calls can point at different
registries in the same process.
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Generator, Optional

from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine, make_url
from sqlalchemy.exc import OperationalError
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import NullPool

from config import settings
from database.models import Base

logger = logging.getLogger(__name__)

_engines: Dict[str, Engine] = {}

# ENGINE

def get_engine(url: Optional[str] = None) -> Engine:
    """Engine for a URL (default: registry under the output root)"""
    url = url or settings.database_url_for(settings.OUTPUT_ROOT)
    if url not in _engines:
        parsed = make_url(url)
        if parsed.get_backend_name() == 'sqlite' and parsed.database:
            Path(parsed.database).parent.mkdir(parents=True, exist_ok=True)
        _engines[url] = create_engine(url, poolclass=NullPool, echo=False)
        logger.debug(f"✅ Database engine created for {parsed.get_backend_name()}")
    return _engines[url]


def init_registry(url: Optional[str] = None) -> Engine:
    """Create any missing registry tables"""
    engine = get_engine(url)
    Base.metadata.create_all(bind=engine)
    return engine

# SESSION CONTEXT MANAGER

@contextmanager
def get_session(url: Optional[str] = None) -> Generator[Session, None, None]:
    """
    Context manager for database sessions

    Automatically handles commit/rollback and cleanup.
    """
    session = sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))()
    try:
        yield session
        session.commit()
        logger.debug("✅ Session committed")
    except Exception as e:
        session.rollback()
        logger.error(f"❌ Session rolled back: {e}")
        raise
    finally:
        session.close()

# CONNECTION TEST

def test_connection(url: Optional[str] = None) -> bool:
    """
    Test database connection

    Returns:
        bool: True if connected, False otherwise
    """
    try:
        with get_engine(url).connect() as connection:
            connection.execute(text("SELECT 1")).fetchone()
        logger.debug("✅ Database connection successful")
        return True

    except OperationalError as e:
        logger.error(f"❌ Database connection failed: {e}")
        return False

# CLEANUP

def dispose_engine(url: Optional[str] = None):
    """Dispose one engine, or all of them when url is None"""
    urls = [url] if url else list(_engines)
    for key in urls:
        engine = _engines.pop(key, None)
        if engine is not None:
            engine.dispose()
    logger.debug("✅ Database engine(s) disposed")

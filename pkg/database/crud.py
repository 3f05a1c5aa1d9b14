# database/crud.py
"""
CRUD Operations for the Run Registry

The registry is advisory: every operation logs and swallows database
errors so a broken registry never aborts an experiment.
"""

import logging
from datetime import datetime
from typing import Iterable, List, Optional

from sqlalchemy import desc
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session

from database.models import LevelResult, QuadrantResult, Run, RUN_STATUSES

logger = logging.getLogger(__name__)

# RUN CRUD

def get_run_by_dir(session: Session, run_dir: str) -> Optional[Run]:
    """Get run by its directory"""
    try:
        return session.query(Run).filter(Run.run_dir == str(run_dir)).first()
    except Exception as e:
        logger.error(f"Error getting run {run_dir}: {e}")
        return None


def register_run(
        session: Session,
        name: str,
        run_dir: str,
        scheme: str,
        criterion: str,
        seed: int,
        config_yaml: Optional[str] = None
) -> Optional[Run]:
    """Create a run row, or reset an existing one (resumed run) to 'running'"""
    try:
        run = get_run_by_dir(session, run_dir)
        if run:
            logger.info(f"Run {name} already registered, marking as running")
            run.status = 'running'
            run.error = None
            run.finished_at = None
            run.config_yaml = config_yaml or run.config_yaml
        else:
            run = Run(
                name=name,
                run_dir=str(run_dir),
                scheme=scheme,
                criterion=criterion,
                seed=seed,
                status='running',
                config_yaml=config_yaml,
                created_at=datetime.utcnow()
            )
            session.add(run)

        session.commit()
        session.refresh(run)
        logger.info(f"✅ Registered run: {name}")
        return run

    except Exception as e:
        session.rollback()
        logger.error(f"Error registering run: {e}")
        return None


def mark_run_status(session: Session, run_id: int, status: str, error: Optional[str] = None) -> bool:
    """Set run status ('running', 'finished' or 'failed')"""
    if status not in RUN_STATUSES:
        logger.error(f"Unknown run status: {status}")
        return False
    try:
        run = session.query(Run).filter(Run.id == run_id).first()
        if not run:
            return False
        run.status = status
        run.error = error
        if status != 'running':
            run.finished_at = datetime.utcnow()
        session.commit()
        return True

    except Exception as e:
        session.rollback()
        logger.error(f"Error updating run status: {e}")
        return False


def list_runs(session: Session, status: Optional[str] = None, limit: int = 500) -> List[Run]:
    """Most recent runs first"""
    try:
        query = session.query(Run)
        if status:
            query = query.filter(Run.status == status)
        return query.order_by(desc(Run.created_at)).limit(limit).all()
    except Exception as e:
        logger.error(f"Error listing runs: {e}")
        return []

# LEVEL RESULTS

def add_level_result(
        session: Session,
        run_id: int,
        level: int,
        sparsity: float,
        **metrics
) -> Optional[LevelResult]:
    """Insert or overwrite the metrics of one level"""
    try:
        row = session.query(LevelResult).filter(
            LevelResult.run_id == run_id,
            LevelResult.level == level
        ).first()

        if row is None:
            row = LevelResult(run_id=run_id, level=level, sparsity=sparsity)
            session.add(row)

        row.sparsity = sparsity
        row.train_loss = metrics.get('train_loss')
        row.test_loss = metrics.get('test_loss')
        row.test_acc = metrics.get('test_acc')

        session.commit()
        return row

    except IntegrityError:
        session.rollback()
        logger.warning(f"Level {level} of run {run_id} was written concurrently")
        return None

    except Exception as e:
        session.rollback()
        logger.error(f"Error adding level result: {e}")
        return None


def get_level_results(session: Session, run_id: int) -> List[LevelResult]:
    try:
        return session.query(LevelResult).filter(
            LevelResult.run_id == run_id
        ).order_by(LevelResult.level).all()
    except Exception as e:
        logger.error(f"Error getting level results: {e}")
        return []

# QUADRANT RESULTS

def add_quadrant_results(session: Session, experiment: str, d: int, rows: Iterable[dict]) -> int:
    """Store rows shaped like QuadrantRun.as_row(); returns how many were written"""
    try:
        results = [
            QuadrantResult(
                experiment=experiment,
                d=d,
                seed=row['seed'],
                quadrant=row['quadrant'],
                scheme=row['scheme'],
                final_loss=row['final_loss'],
                outcome=row['outcome'],
                a_final=row.get('a_final'),
                w1_final=row.get('w1_final'),
                created_at=datetime.utcnow()
            )
            for row in rows
        ]
        session.add_all(results)
        session.commit()
        logger.info(f"✅ Stored {len(results)} quadrant results for {experiment}")
        return len(results)

    except Exception as e:
        session.rollback()
        logger.error(f"Error adding quadrant results: {e}")
        return 0


def get_quadrant_results(session: Session, experiment: str) -> List[QuadrantResult]:
    try:
        return session.query(QuadrantResult).filter(
            QuadrantResult.experiment == experiment
        ).order_by(QuadrantResult.d, QuadrantResult.seed).all()
    except Exception as e:
        logger.error(f"Error getting quadrant results: {e}")
        return []

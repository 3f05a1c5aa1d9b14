# database/models.py
"""
Database Models for the Run Registry

SQLAlchemy ORM models recording which experiments ran and what they found.

Tables:
- runs: One pruning run (scheme x criterion x seed) and its status
- level_results: Per-level metrics of a run
- quadrant_results: One row per (seed, quadrant, scheme) of a single-neuron experiment
"""

from datetime import datetime

from sqlalchemy import (
    Column, Integer, String, DateTime, Float,
    ForeignKey, Text, Index, UniqueConstraint
)
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()

RUN_STATUSES = ('running', 'finished', 'failed')

# RUN MODEL

class Run(Base):
    """
    A single iterative pruning run.

    Mirrors one run directory on disk; the directory stays the source of truth.
    """
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)

    name = Column(String(255), nullable=False, comment='Run directory name')
    run_dir = Column(String(1024), unique=True, nullable=False)
    scheme = Column(String(50), nullable=False, comment='imp, lrr, lrr_rewind_bn or imp_keep_signs')
    criterion = Column(String(50), nullable=False)
    seed = Column(Integer, nullable=False)

    status = Column(String(20), default='running', nullable=False)
    error = Column(Text, nullable=True)
    config_yaml = Column(Text, nullable=True, comment='Resolved config snapshot')

    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    finished_at = Column(DateTime, nullable=True)

    levels = relationship(
        'LevelResult',
        back_populates='run',
        cascade='all, delete-orphan',
        order_by='LevelResult.level'
    )

    __table_args__ = (
        Index('idx_run_scheme_seed', 'scheme', 'seed'),
    )

    def __repr__(self):
        return f"<Run(id={self.id}, name='{self.name}', status='{self.status}')>"

# LEVEL RESULT MODEL

class LevelResult(Base):
    """Metrics of one pruning level"""
    __tablename__ = 'level_results'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(
        Integer,
        ForeignKey('runs.id', ondelete='CASCADE'),
        nullable=False,
        index=True
    )

    level = Column(Integer, nullable=False)
    sparsity = Column(Float, nullable=False)
    train_loss = Column(Float, nullable=True)
    test_loss = Column(Float, nullable=True)
    test_acc = Column(Float, nullable=True)

    run = relationship('Run', back_populates='levels')

    __table_args__ = (
        UniqueConstraint('run_id', 'level', name='uq_run_level'),
    )

    def __repr__(self):
        return f"<LevelResult(run_id={self.run_id}, level={self.level}, test_acc={self.test_acc})>"

# QUADRANT RESULT MODEL

class QuadrantResult(Base):
    """
    Outcome of one single-neuron pruning run

    Grouped by `experiment`, a free-form tag chosen by the caller.
    """
    __tablename__ = 'quadrant_results'

    id = Column(Integer, primary_key=True, autoincrement=True)
    experiment = Column(String(255), nullable=False, index=True)

    d = Column(Integer, nullable=False, comment='Input dimension')
    seed = Column(Integer, nullable=False)
    quadrant = Column(String(10), nullable=False, comment='PosPos, PosNeg, NegPos or NegNeg')
    scheme = Column(String(10), nullable=False)
    final_loss = Column(Float, nullable=False)
    outcome = Column(String(20), nullable=False)
    a_final = Column(Float, nullable=True)
    w1_final = Column(Float, nullable=True)

    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    def __repr__(self):
        return f"<QuadrantResult(d={self.d}, seed={self.seed}, quadrant='{self.quadrant}', outcome='{self.outcome}')>"

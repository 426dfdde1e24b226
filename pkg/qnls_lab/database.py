"""
This module sets up the database connection and session management
for the optional sweep store.
"""

import logging
from typing import Iterable

from sqlalchemy import create_engine, select
from sqlalchemy.engine import Engine
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session, sessionmaker

from qnls_lab import models
from qnls_lab.schemas import ScanRecord, Statistic

logger = logging.getLogger(__name__)

DEFAULT_STORE = "sqlite+pysqlite:///./qnls_lab.db"


def make_engine(url: str = DEFAULT_STORE) -> Engine:
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


def make_session_factory(url: str = DEFAULT_STORE) -> sessionmaker[Session]:
    """
    Engine plus a configured Session class; tables are created on first use.
    Args:
        url (str): SQLAlchemy database URL.
    Returns:
        sessionmaker: factory producing sessions bound to the engine.
    """
    engine = make_engine(url)
    models.Base.metadata.create_all(bind=engine)
    return sessionmaker(bind=engine, autoflush=False, autocommit=False)


# Database context manager
class DataBaseContextManager:
    def __init__(self, session_factory: sessionmaker[Session]):
        self.db = session_factory()

    def __enter__(self) -> Session:
        return self.db

    def __exit__(self, exc_type, exc_value, traceback):
        self.db.close()


def _to_row(record: ScanRecord) -> models.ScanRow:
    data = record.model_dump()
    data["statistic"] = record.statistic.value
    data["seed"] = str(record.seed)
    return models.ScanRow(**data)


def store_records(
    session_factory: sessionmaker[Session], records: Iterable[ScanRecord]
) -> tuple[int, int]:
    """
    Insert sweep records, skipping keys already present.
    Returns:
        tuple: (inserted, duplicates).
    """
    inserted = duplicates = 0
    with DataBaseContextManager(session_factory) as session:
        for record in records:
            session.add(_to_row(record))
            try:
                session.commit()
                inserted += 1
            except IntegrityError:
                session.rollback()
                duplicates += 1
    if duplicates:
        logger.info("Skipped %d records already in the store.", duplicates)
    return inserted, duplicates


def load_records(
    session_factory: sessionmaker[Session], statistic: Statistic | None = None
) -> list[ScanRecord]:
    stmt = select(models.ScanRow).order_by(
        models.ScanRow.statistic, models.ScanRow.alpha, models.ScanRow.N, models.ScanRow.id
    )
    if statistic is not None:
        stmt = stmt.where(models.ScanRow.statistic == Statistic(statistic).value)
    with DataBaseContextManager(session_factory) as session:
        rows = session.execute(stmt).scalars().all()
        return [
            ScanRecord(
                alpha=row.alpha,
                N=row.N,
                t=row.t,
                n1=row.n1,
                n2=row.n2,
                statistic=row.statistic,
                value=row.value,
                samples=row.samples,
                seed=int(row.seed),
            )
            for row in rows
        ]

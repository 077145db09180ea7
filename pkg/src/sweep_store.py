import logging
import os
import sqlite3
from datetime import datetime

import pandas as pd
from sqlalchemy import Boolean, Column, DateTime, Enum, Float, Integer, String, create_engine, text
from sqlalchemy.orm import declarative_base, sessionmaker

logger = logging.getLogger(__name__)

# --- Schema Version ---
# Version 1: Initial schema.
SCHEMA_VERSION = 1

CELL_STATUSES = ('pending', 'running', 'completed', 'failed')

Base = declarative_base()


class SweepCell(Base):
    """One (target, strategy, n, seed, k, mode) training run of a sweep."""
    __tablename__ = 'sweep_cells'

    id = Column(Integer, primary_key=True)
    cell_key = Column(String, unique=True, nullable=False)
    settings_hash = Column(String, nullable=False)
    target = Column(String, nullable=False)
    strategy = Column(String, nullable=False)
    n = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    k = Column(Float, nullable=False)
    mode = Column(Enum('laperm', 'free'), default='laperm', nullable=False)
    status = Column(Enum(*CELL_STATUSES), default='pending', nullable=False)
    sup_error = Column(Float, nullable=True)
    l2_error = Column(Float, nullable=True)
    final_loss = Column(Float, nullable=True)
    multiset_ok = Column(Boolean, nullable=True)
    moved_total = Column(Integer, nullable=True)
    wall_time = Column(Float, nullable=True)
    error_message = Column(String, nullable=True)
    updated_at = Column(DateTime, default=datetime.now, onupdate=datetime.now)

    def __repr__(self):
        return f"<SweepCell(cell_key='{self.cell_key}', status='{self.status}')>"


RESULT_COLUMNS = ['target', 'strategy', 'n', 'seed', 'k', 'mode', 'sup_error', 'l2_error',
                  'final_loss', 'multiset_ok', 'moved_total']


class SweepStore:
    """Progress database for sweeps, with schema versioning and automatic rebuilds."""
    def __init__(self, db_path='data/sweep_progress/sweeps.db'):
        self.db_path = db_path
        self.was_rebuilt = False
        directory = os.path.dirname(db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        self._check_schema_version()

        self.engine = create_engine(
            f'sqlite:///{self.db_path}',
            connect_args={'check_same_thread': False},
            pool_pre_ping=True
        )

        # WAL lets the status report read while a sweep writes
        with self.engine.connect() as conn:
            conn.execute(text("PRAGMA journal_mode=WAL"))
            conn.commit()

        Base.metadata.create_all(self.engine)

        if self.was_rebuilt:
            self._stamp_schema_version()

        self.Session = sessionmaker(bind=self.engine)

    def _stored_schema_version(self) -> int | None:
        """Version stamped in an existing database file, or None when it cannot be read."""
        con = sqlite3.connect(self.db_path)
        try:
            row = con.execute("SELECT MAX(version) FROM schema_version").fetchone()
            return None if row is None or row[0] is None else int(row[0])
        except sqlite3.DatabaseError:
            return None
        finally:
            con.close()

    def _check_schema_version(self):
        """Removes a database whose stamped schema is older than SCHEMA_VERSION or missing."""
        if not os.path.exists(self.db_path):
            logger.info(f"No sweep database at {self.db_path}; creating one.")
            self.was_rebuilt = True
            return

        stored = self._stored_schema_version()
        if stored is None:
            logger.warning("Sweep database has no readable schema version. Rebuilding.")
            self.was_rebuilt = True
        elif stored < SCHEMA_VERSION:
            logger.warning(f"Sweep database schema v{stored} is older than v{SCHEMA_VERSION}. Rebuilding.")
            self.was_rebuilt = True
        else:
            logger.debug(f"Sweep database schema v{stored} is current.")

        if self.was_rebuilt:
            for suffix in ('', '-wal', '-shm'):
                if os.path.exists(self.db_path + suffix):
                    os.remove(self.db_path + suffix)

    def _stamp_schema_version(self):
        con = sqlite3.connect(self.db_path)
        try:
            con.execute("CREATE TABLE IF NOT EXISTS schema_version (version INTEGER)")
            con.execute("DELETE FROM schema_version")
            con.execute("INSERT INTO schema_version (version) VALUES (?)", (SCHEMA_VERSION,))
            con.commit()
        finally:
            con.close()
        logger.info(f"Stamped sweep database with schema v{SCHEMA_VERSION}.")

    def get_session(self):
        return self.Session()

    def register(self, cells, settings_hash: str) -> int:
        """Adds cells that are not in the database yet as 'pending'. Returns how many were added."""
        session = self.get_session()
        try:
            existing = {key for (key,) in session.query(SweepCell.cell_key).all()}
            added = 0
            for cell in cells:
                if cell.key in existing:
                    continue
                session.add(SweepCell(
                    cell_key=cell.key, settings_hash=settings_hash, target=cell.target,
                    strategy=cell.strategy, n=cell.n, seed=cell.seed, k=cell.k, mode=cell.mode,
                ))
                added += 1
            session.commit()
            return added
        finally:
            session.close()

    def completed_keys(self, keys) -> set[str]:
        session = self.get_session()
        try:
            rows = session.query(SweepCell.cell_key).filter(
                SweepCell.cell_key.in_(list(keys)), SweepCell.status == 'completed'
            ).all()
            return {key for (key,) in rows}
        finally:
            session.close()

    def _update(self, key: str, **values) -> None:
        session = self.get_session()
        try:
            cell = session.query(SweepCell).filter(SweepCell.cell_key == key).one()
            for name, value in values.items():
                setattr(cell, name, value)
            session.commit()
        except Exception:
            session.rollback()
            raise
        finally:
            session.close()

    def mark_running(self, key: str) -> None:
        self._update(key, status='running')

    def record_result(self, key: str, row: dict) -> None:
        self._update(
            key, status='completed', error_message=None,
            sup_error=row['sup_error'], l2_error=row['l2_error'], final_loss=row['final_loss'],
            multiset_ok=bool(row['multiset_ok']), moved_total=int(row['moved_total']),
            wall_time=row.get('wall_time'),
        )

    def record_failure(self, key: str, message: str) -> None:
        self._update(key, status='failed', error_message=message[:2000])

    def results_frame(self, keys=None) -> pd.DataFrame:
        """Completed cells as a frame with RESULT_COLUMNS, sorted for deterministic output."""
        session = self.get_session()
        try:
            query = session.query(SweepCell).filter(SweepCell.status == 'completed')
            if keys is not None:
                query = query.filter(SweepCell.cell_key.in_(list(keys)))
            rows = [{column: getattr(cell, column) for column in RESULT_COLUMNS} for cell in query.all()]
        finally:
            session.close()
        frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
        return frame.sort_values(['target', 'strategy', 'mode', 'k', 'n', 'seed'], ignore_index=True)

    def status_counts(self) -> dict[str, int]:
        session = self.get_session()
        try:
            counts = {status: 0 for status in CELL_STATUSES}
            for (status,) in session.query(SweepCell.status).all():
                counts[status] += 1
            return counts
        finally:
            session.close()

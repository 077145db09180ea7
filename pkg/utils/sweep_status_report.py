import sys
import os
import logging
import argparse
from sqlalchemy import func

# pylint: disable=not-callable
# SQLAlchemy func calls are dynamic and confuse static analyzers

# Add the project root to the Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.sweep_store import SweepCell, SweepStore
from utils.logger import setup_logger


def generate_status_report(db_path='data/sweep_progress/sweeps.db'):
    """
    Connects to the sweep database and prints cell counts per status and per target.
    """
    setup_logger(level=logging.WARNING)  # Keep console clean
    logger = logging.getLogger(__name__)

    store = SweepStore(db_path)
    session = store.get_session()

    try:
        status_counts = session.query(
            SweepCell.status, func.count(SweepCell.status)
        ).group_by(SweepCell.status).all()

        print("\n--- Sweep Cell Status ---")
        if not status_counts:
            print("No cells found in the database.")
            return

        total = 0
        print(f"{'Status':<25} | {'Count':<10}")
        print("-" * 38)
        for status, count in status_counts:
            print(f"{status:<25} | {count:<10}")
            total += count
        print("-" * 38)
        print(f"{'Total Cells':<25} | {total:<10}\n")

        # --- Per-target progress ---
        rows = session.query(
            SweepCell.target, SweepCell.strategy, SweepCell.status, func.count(SweepCell.id)
        ).group_by(SweepCell.target, SweepCell.strategy, SweepCell.status).all()

        print("--- Progress by Target / Strategy ---")
        print(f"{'Target':<20} | {'Strategy':<20} | {'Status':<10} | {'Count':<6}")
        print("-" * 64)
        for target, strategy, status, count in rows:
            print(f"{target:<20} | {strategy:<20} | {status:<10} | {count:<6}")

        failed = session.query(SweepCell).filter(SweepCell.status == 'failed').limit(10).all()
        if failed:
            print("\n--- Recent Failures (up to 10) ---")
            for cell in failed:
                print(f"{cell.cell_key}: {cell.error_message}")

    except Exception as e:
        logger.error("An error occurred while generating the report: %s", e)
    finally:
        session.close()


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Report the progress of parameter sweeps.")
    parser.add_argument('--db-path', default=os.getenv('PERMNET_DB_PATH', 'data/sweep_progress/sweeps.db'))
    generate_status_report(parser.parse_args().db_path)

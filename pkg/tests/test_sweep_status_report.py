import logging

import pytest

from src.experiment_harness import CellSpec
from src.sweep_store import SweepStore
from utils.sweep_status_report import generate_status_report


@pytest.fixture(autouse=True)
def restore_logging(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)
    logging.captureWarnings(False)


def test_report_lists_statuses_and_failures(tmp_path, capsys):
    path = str(tmp_path / "sweeps.db")
    store = SweepStore(path)
    cells = [CellSpec(target="neg_sin2pi", strategy="equidistant", n=n, seed=2022, k=5.0) for n in (4, 8, 16)]
    store.register(cells, "abc")
    store.record_failure(cells[0].key, "RuntimeError: diverged")

    generate_status_report(path)
    text = capsys.readouterr().out
    assert "Sweep Cell Status" in text
    assert "Total Cells" in text and "| 3" in text
    assert "neg_sin2pi" in text
    assert f"{cells[0].key}: RuntimeError: diverged" in text


def test_report_on_empty_database(tmp_path, capsys):
    generate_status_report(str(tmp_path / "empty.db"))
    assert "No cells found" in capsys.readouterr().out

import logging
import sys
from collections.abc import Iterator
from pathlib import Path

import pytest

import subspace_uq.logs
from subspace_uq.logs import RedactHomeDirFormatter, setup_application_logging


@pytest.fixture
def logs_dir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Iterator[Path]:
    monkeypatch.setattr(subspace_uq.logs, "LOGS_DIR", tmp_path)
    monkeypatch.setattr(sys, "excepthook", sys.excepthook)
    root_logger = logging.getLogger()
    level = root_logger.level
    yield tmp_path
    for handler in subspace_uq.logs._installed_handlers:
        root_logger.removeHandler(handler)
        handler.close()
    subspace_uq.logs._installed_handlers.clear()
    root_logger.setLevel(level)


def test_setup_replaces_previous_handlers(logs_dir: Path) -> None:
    root_logger = logging.getLogger()
    setup_application_logging()
    first = list(subspace_uq.logs._installed_handlers)
    setup_application_logging(verbose=True)
    assert not any(handler in root_logger.handlers for handler in first)
    assert len(subspace_uq.logs._installed_handlers) == 2
    stream_handler = subspace_uq.logs._installed_handlers[0]
    assert stream_handler.level == logging.DEBUG


def test_file_log(logs_dir: Path) -> None:
    setup_application_logging()
    logging.getLogger("subspace_uq.test").info("Wrote %s", Path.home() / "results")
    for handler in subspace_uq.logs._installed_handlers:
        handler.flush()
    text = (logs_dir / subspace_uq.logs.MAIN_LOG_FILE_NAME).read_text(encoding="UTF-8")
    assert "Logging started" in text
    assert "numpy" in text
    assert "Wrote <HOME>" in text


def test_redact_home_dir() -> None:
    record = logging.LogRecord(
        "name", logging.INFO, __file__, 1, f"{Path.home()}/study.toml", None, None
    )
    assert RedactHomeDirFormatter("%(message)s").format(record) == "<HOME>/study.toml"

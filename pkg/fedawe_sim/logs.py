"""Logging setup and plain-text event logs"""
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_FILE_NAME = 'fedawe_sim.log'

_HANDLER_TAG = '_fedawe_sim_handler'


def setup_logging(level: Union[str, int] = 'INFO', log_dir: Optional[Path] = None) -> logging.Logger:
    """Configure the root logger with a console handler and, optionally, a log file.

    Handlers installed by an earlier call are replaced, so calling this once per
    CLI invocation (or once per test) never duplicates output.
    """
    root = logging.getLogger()
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    root.setLevel(level)

    for handler in list(root.handlers):
        if getattr(handler, _HANDLER_TAG, False):
            root.removeHandler(handler)
            handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    handlers = [logging.StreamHandler()]
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / LOG_FILE_NAME, encoding='utf-8'))

    for handler in handlers:
        handler.setFormatter(formatter)
        setattr(handler, _HANDLER_TAG, True)
        root.addHandler(handler)
    return root


def write_event(log_dir: Path, kind: str, message: str, level: str = 'INFO') -> None:
    """Append one timestamped line to ``<log_dir>/<kind>.log``"""
    try:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime('%Y-%m-%d %H:%M:%S')
        with (log_dir / f"{kind}.log").open('a', encoding='utf-8') as f:
            f.write(f"[{timestamp}] [{level}] {message}\n")
    except OSError as e:
        logging.getLogger(__name__).warning(f"Could not write {kind} event log: {e}")

"""cavityflow logging on top of dd-logging.

Modules take a child of the ``cavityflow`` root at import time:

    from cavityflow.logging import get_logger
    _log = get_logger("trajectory")   # → cavityflow.trajectory

A run logs into its own output directory.  The CLI opens the log before the
pipeline starts and closes it on exit, whatever the exit code:

    log_path = setup_logging("trajectory", out_dir, verbose=True)
    ...
    disable_logging()

Python warnings raised while the log is open (degenerate ground states,
closure breakdown, regime flags) are written to the same file under
``py.warnings``.

Log hierarchy
-------------
    cavityflow              ← root (FileHandler attached by setup_logging)
    ├── cavityflow.fock / hubbard / optics / observables
    ├── cavityflow.trajectory / sme / meanfield / records
    ├── cavityflow.model / pipeline
    ├── cavityflow.flow / node / store
    └── cavityflow.cli
"""

from __future__ import annotations

import logging
from pathlib import Path

from dd_logging import (
    disable_logging as _disable,
    get_logger as _get,
    setup_logging as _setup,
)

_ROOT = "cavityflow"
_WARNINGS = "py.warnings"


def get_logger(name: str) -> logging.Logger:
    """``cavityflow.<name>`` logger, e.g. ``get_logger("sme")``."""
    return _get(name, _ROOT)


def setup_logging(mode: str, out_dir: str | Path, *, verbose: bool = False) -> Path:
    """Open the run log for *mode* inside *out_dir* and return its path.

    Parameters
    ----------
    mode :
        Run mode; it prefixes the timestamped log filename.
    out_dir :
        Run output directory, created if missing.
    verbose :
        DEBUG level and a console handler (the CLI's ``--verbose``);
        otherwise INFO to the file only.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = _setup(
        mode,
        root_name=_ROOT,
        log_level="debug" if verbose else "info",
        log_dir=out_dir,
        console=verbose,
    )
    logging.captureWarnings(True)
    sink = logging.getLogger(_WARNINGS)
    for handler in logging.getLogger(_ROOT).handlers:
        if handler not in sink.handlers:
            sink.addHandler(handler)
    return path


def disable_logging() -> None:
    """Detach the run log from the cavityflow root and from captured warnings."""
    root_handlers = list(logging.getLogger(_ROOT).handlers)
    sink = logging.getLogger(_WARNINGS)
    for handler in root_handlers:
        sink.removeHandler(handler)
    logging.captureWarnings(False)
    _disable(_ROOT)

"""Run state shared by the pipeline nodes.

Design
------
Store is a dict-like container with three additions:
  • schema    — key → type(s); writes are type-checked, ``validate()`` reports
                missing required keys
  • observers — ``callback(key, old, new)`` fired after every write
  • snapshot  — JSON dump of everything that has a JSON form; numpy scalars
                and small arrays are converted, operators and states are
                summarised as ``<ClassName>``

Heavy objects (bases, sparse operators, trajectory records) live in the store
by reference; nodes never copy them.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from cavityflow.logging import get_logger

_log = get_logger("store")

Observer = Callable[[str, Any, Any], None]

# arrays above this size are summarised instead of dumped
_MAX_ARRAY_DUMP = 4096


def to_jsonable(value: Any) -> Any:
    """Best-effort conversion to plain JSON types; raises TypeError if impossible."""
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if isinstance(value, np.ndarray):
        if value.size > _MAX_ARRAY_DUMP:
            raise TypeError(f"array of size {value.size} is too large to snapshot")
        if np.iscomplexobj(value):
            return {"re": value.real.tolist(), "im": value.imag.tolist()}
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    raise TypeError(f"{type(value).__name__} has no JSON form")


class Store:
    """Shared state for one cavityflow run.

    Parameters
    ----------
    data :
        Initial key-value pairs.
    schema :
        Optional mapping key → type (or tuple of types).  Listed keys are
        required by ``validate()`` and type-checked on every write.
    name :
        Label used in log messages and snapshots.
    """

    def __init__(
        self,
        data: dict[str, Any] | None = None,
        schema: dict[str, type | tuple] | None = None,
        name: str = "run",
    ):
        self._data: dict[str, Any] = dict(data or {})
        self._schema: dict[str, type | tuple] = dict(schema or {})
        self.name = name
        self._observers: list[Observer] = []
        for key, value in self._data.items():
            self._check_type(key, value)

    # ── dict-like access ──────────────────────────────────────────────────────

    def _check_type(self, key: str, value: Any) -> None:
        expected = self._schema.get(key)
        if expected is not None and not isinstance(value, expected):
            raise TypeError(
                f"Store[{self.name}]: key '{key}' expects {expected}, "
                f"got {type(value).__name__}"
            )

    def __getitem__(self, key: str) -> Any:
        try:
            return self._data[key]
        except KeyError:
            raise KeyError(f"Store[{self.name}] has no key '{key}'") from None

    def __setitem__(self, key: str, value: Any) -> None:
        self._check_type(key, value)
        old = self._data.get(key)
        self._data[key] = value
        for observer in list(self._observers):
            try:
                observer(key, old, value)
            except Exception as exc:
                _log.warning("Store observer failed on key '%s': %s", key, exc)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def get(self, key: str, default: Any = None) -> Any:
        return self._data.get(key, default)

    def update(self, mapping: Mapping[str, Any]) -> None:
        for key, value in mapping.items():
            self[key] = value

    def keys(self):
        return self._data.keys()

    def items(self):
        return self._data.items()

    def __repr__(self) -> str:
        return f"Store(name={self.name!r}, keys={sorted(self._data)})"

    def validate(self) -> None:
        """Raise KeyError naming every schema key not yet written."""
        missing = [k for k in self._schema if k not in self._data]
        if missing:
            raise KeyError(f"Store[{self.name}]: required key(s) missing: {missing}")

    # ── observers ─────────────────────────────────────────────────────────────

    def add_observer(self, callback: Observer) -> None:
        self._observers.append(callback)

    def remove_observer(self, callback: Observer) -> None:
        self._observers = [o for o in self._observers if o is not callback]

    # ── snapshot ──────────────────────────────────────────────────────────────

    def to_jsonable(self) -> dict[str, Any]:
        safe: dict[str, Any] = {}
        for key, value in self._data.items():
            try:
                safe[key] = to_jsonable(value)
            except TypeError:
                safe[key] = f"<{type(value).__name__}>"
        return safe

    def snapshot(self, path: str | Path) -> Path:
        """Write ``{"name": ..., "data": {...}}`` to *path* and return it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"name": self.name, "data": self.to_jsonable()}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        _log.debug("Store snapshot → %s", path)
        return path

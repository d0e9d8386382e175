"""Pipeline nodes: one prep | exec | post unit per run stage.

Design
------
    prep(store)              read the inputs the stage needs
    exec(prep_result)        compute; never touches the store
    post(store, prep, exec)  write results back, return the next action

Edges are explicit:

    node.then("trajectory", ensemble_node)
    node.then("*", fallback_node)        # any action without a named edge

AsyncNode overrides ``exec_async``; ``exec`` drives it with ``asyncio.run`` so
the Flow stays synchronous.  Ensemble nodes use it to ``asyncio.gather``
trajectory futures from a process pool.

Retry
-----
``max_retries > 1`` re-runs ``exec`` (not ``prep``) when it raises one of
``retry_on``.  Numerical failures are deterministic for a given seed, so the
default is no retry.
"""

from __future__ import annotations

import asyncio
import time
from abc import ABC, abstractmethod
from typing import Any

from cavityflow.logging import get_logger

_log = get_logger("node")

DEFAULT_ACTION = "default"
WILDCARD_ACTION = "*"


class Node(ABC):
    """Synchronous pipeline stage.  Subclasses implement at least ``exec``."""

    max_retries: int = 1
    retry_delay: float = 0.0
    retry_on: tuple[type[BaseException], ...] = (Exception,)

    def __init__(self, name: str | None = None):
        self._successors: dict[str, Node] = {}
        self.name = name or self.__class__.__name__

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(name={self.name!r}, edges={sorted(self._successors)})"

    # ── Wiring ────────────────────────────────────────────────────────────────

    def then(self, action: str, node: "Node") -> "Node":
        """Route *action* to *node*; returns self so edges can be chained."""
        if action in self._successors:
            _log.warning("Node '%s': replacing edge '%s'", self.name, action)
        self._successors[action] = node
        return self

    def next_node(self, action: str) -> "Node | None":
        node = self._successors.get(action)
        if node is None:
            node = self._successors.get(WILDCARD_ACTION)
        if node is None and self._successors:
            _log.debug("Node '%s': no edge for action '%s' (have %s)",
                       self.name, action, sorted(self._successors))
        return node

    # ── Lifecycle ─────────────────────────────────────────────────────────────

    def prep(self, store: Any) -> Any:
        return None

    @abstractmethod
    def exec(self, prep_result: Any) -> Any:
        """Do the stage's work.  Must not write to the store."""

    def post(self, store: Any, prep_result: Any, exec_result: Any) -> str:
        return DEFAULT_ACTION

    def _run(self, store: Any) -> str:
        t0 = time.perf_counter()
        _log.info("→ %s", self.name)
        prep_result = self.prep(store)

        attempt = 1
        while True:
            try:
                exec_result = self.exec(prep_result)
                break
            except self.retry_on as exc:
                if attempt >= self.max_retries:
                    _log.error("%s failed after %d attempt(s): %s", self.name, attempt, exc)
                    raise
                _log.warning("%s attempt %d/%d failed: %s", self.name, attempt,
                             self.max_retries, exc)
                attempt += 1
                if self.retry_delay > 0:
                    time.sleep(self.retry_delay)

        action = self.post(store, prep_result, exec_result)
        _log.info("← %s  action=%s  %.2fs", self.name, action, time.perf_counter() - t0)
        return action


class AsyncNode(Node, ABC):
    """Stage whose work is a coroutine; implement ``exec_async``."""

    @abstractmethod
    async def exec_async(self, prep_result: Any) -> Any:
        ...

    def exec(self, prep_result: Any) -> Any:
        return asyncio.run(self.exec_async(prep_result))

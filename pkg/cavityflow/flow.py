"""Flow: walk a graph of Nodes against one Store.

    action = node._run(store)  →  node = node.next_node(action)  →  ...

until a node has no successor for its action.

Hooks
-----
    flow.on("node_start", lambda name, store: ...)
    flow.on("node_end",   lambda name, action, elapsed, store: ...)
    flow.on("node_error", lambda name, exc, store: ...)
    flow.on("flow_end",   lambda steps, store: ...)

Hook failures are logged and swallowed; node failures propagate after the
``node_error`` hooks have run.
"""

from __future__ import annotations

import time
from typing import Any, Callable

from cavityflow.logging import get_logger
from cavityflow.node import Node
from cavityflow.store import Store

_log = get_logger("flow")

HOOK_EVENTS = ("node_start", "node_end", "node_error", "flow_end")


class Flow:
    """Directed graph runner.

    Parameters
    ----------
    start :
        First node.
    max_steps :
        Upper bound on executed nodes; exceeding it raises RuntimeError.
    name :
        Label for log messages.
    """

    def __init__(self, start: Node, max_steps: int = 32, name: str | None = None):
        self.start = start
        self.max_steps = max_steps
        self.name = name or start.name
        self._hooks: dict[str, list[Callable[..., Any]]] = {e: [] for e in HOOK_EVENTS}

    def on(self, event: str, callback: Callable[..., Any]) -> "Flow":
        if event not in self._hooks:
            raise ValueError(f"unknown hook event '{event}', expected one of {HOOK_EVENTS}")
        self._hooks[event].append(callback)
        return self

    def _fire(self, event: str, *args: Any) -> None:
        for callback in self._hooks[event]:
            try:
                callback(*args)
            except Exception as exc:
                _log.warning("hook '%s' raised: %s", event, exc)

    def run(self, store: Store | dict) -> Store:
        """Run to completion and return the store (wrapped if a dict was given)."""
        if isinstance(store, dict):
            store = Store(data=store)

        current: Node | None = self.start
        steps = 0
        t0 = time.perf_counter()
        _log.info("Flow '%s' starting at %s", self.name, current.name)

        while current is not None:
            if steps >= self.max_steps:
                raise RuntimeError(f"Flow '{self.name}' exceeded max_steps={self.max_steps}")
            self._fire("node_start", current.name, store)
            node_t0 = time.perf_counter()
            try:
                action = current._run(store)
            except Exception as exc:
                self._fire("node_error", current.name, exc, store)
                _log.error("Flow '%s' aborted in %s: %s", self.name, current.name, exc)
                raise
            self._fire("node_end", current.name, action, time.perf_counter() - node_t0, store)
            steps += 1
            current = current.next_node(action)

        _log.info("Flow '%s' complete  steps=%d  %.2fs", self.name, steps,
                  time.perf_counter() - t0)
        self._fire("flow_end", steps, store)
        return store

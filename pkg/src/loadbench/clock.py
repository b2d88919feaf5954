"""Monotonic clocks: the real one and a virtual one for fast deterministic runs."""

from __future__ import annotations

import time


class RealClock:
    virtual = False

    def now_ns(self) -> int:
        return time.perf_counter_ns()

    def sleep_ns(self, ns: int) -> None:
        if ns > 0:
            time.sleep(ns / 1e9)


class VirtualClock:
    """Clock that only moves when told to. Not thread-safe."""

    virtual = True

    def __init__(self, start_ns: int = 0):
        self._now = start_ns

    def now_ns(self) -> int:
        return self._now

    def advance_to(self, t_ns: int) -> None:
        if t_ns > self._now:
            self._now = t_ns

    def sleep_ns(self, ns: int) -> None:
        if ns > 0:
            self._now += ns

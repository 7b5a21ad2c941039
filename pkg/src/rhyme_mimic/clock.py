"""Clocks and the single-threaded event loop the whole runtime hangs off.

Every timeout, ack latency and replay delay in the system is scheduled
through an :class:`EventLoop`, so swapping :class:`RealClock` for
:class:`VirtualClock` makes a full game session run in milliseconds while
producing the same ordering of callbacks.
"""
from __future__ import annotations

import heapq
import itertools
import threading
import time
from collections import deque
from typing import Callable


class RealClock:
    """Monotonic wall clock, in integer milliseconds since construction."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)


class VirtualClock:
    """Clock that only moves when the event loop advances it."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> None:
        if t_ms < self._now:
            raise ValueError(f"cannot move virtual clock backwards: {t_ms} < {self._now}")
        self._now = int(t_ms)


class Timer:
    """Handle for a scheduled callback; cancel() is safe from any thread."""

    __slots__ = ("due_ms", "fn", "cancelled")

    def __init__(self, due_ms: int, fn: Callable[[], None]) -> None:
        self.due_ms = due_ms
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    """Single-threaded timer/callback scheduler.

    All callbacks execute on the thread that calls :meth:`run`, so node
    handlers never need their own locking.  Other threads (TCP readers,
    websocket connections) hand work over with :meth:`call_threadsafe`.

    Under a virtual clock the loop jumps straight to the next due timer;
    under a real clock it sleeps.  Ties are broken by scheduling order,
    which keeps virtual runs fully deterministic.
    """

    def __init__(self, clock) -> None:
        self.clock = clock
        self._heap: list[tuple[int, int, Timer]] = []
        self._tie = itertools.count()
        self._injected: deque[Callable[[], None]] = deque()
        self._cond = threading.Condition()
        self._stopped = False

    # -- scheduling ------------------------------------------------------

    def call_at(self, due_ms: int, fn: Callable[[], None]) -> Timer:
        timer = Timer(int(due_ms), fn)
        with self._cond:
            heapq.heappush(self._heap, (timer.due_ms, next(self._tie), timer))
            self._cond.notify()
        return timer

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> Timer:
        return self.call_at(self.clock.now_ms() + int(delay_ms), fn)

    def call_soon(self, fn: Callable[[], None]) -> Timer:
        return self.call_at(self.clock.now_ms(), fn)

    def call_threadsafe(self, fn: Callable[[], None]) -> None:
        """Queue fn from any thread; it runs before pending timers."""
        with self._cond:
            self._injected.append(fn)
            self._cond.notify()

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()

    # -- running ---------------------------------------------------------

    def run(self, until_idle: bool = True) -> None:
        """Process callbacks until stopped (or idle, when until_idle).

        With a virtual clock, "idle" means no timers and no injected work
        remain.  With a real clock and until_idle=False the loop blocks
        waiting for new work until :meth:`stop` is called (serve mode).
        """
        while True:
            fn = self._next_ready(until_idle)
            if fn is None:
                return
            fn()

    def run_until(self, predicate: Callable[[], bool], until_idle: bool = True) -> None:
        """Like run(), but also returns once predicate() goes true."""
        while not predicate():
            fn = self._next_ready(until_idle)
            if fn is None:
                return
            fn()

    def _next_ready(self, until_idle: bool):
        virtual = isinstance(self.clock, VirtualClock)
        with self._cond:
            while True:
                if self._stopped:
                    return None
                if self._injected:
                    return self._injected.popleft()
                while self._heap and self._heap[0][2].cancelled:
                    heapq.heappop(self._heap)
                if not self._heap:
                    if until_idle:
                        return None
                    self._cond.wait()
                    continue
                due = self._heap[0][0]
                if virtual:
                    self.clock.advance_to(max(due, self.clock.now_ms()))
                    return heapq.heappop(self._heap)[2].fn
                now = self.clock.now_ms()
                if due <= now:
                    return heapq.heappop(self._heap)[2].fn
                self._cond.wait(timeout=(due - now) / 1000.0)

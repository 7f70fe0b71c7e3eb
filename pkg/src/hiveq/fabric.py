"""Worker fabric: bounded channels, the shared request signal, and a
deterministic single-process scheduler.

The production runtime connects workers with multiprocessing queues and
threads; the deterministic runtime drives the same role objects one tick at
a time on a logical clock, which makes interleaving tests and resume
determinism possible. Channels share a tiny non-blocking interface so role
code is identical in both modes.
"""

from __future__ import annotations

import queue as _queue
import threading
import time
from collections import deque
from typing import Any, Callable

import numpy as np


class ChannelFull(Exception):
    pass


class ChannelEmpty(Exception):
    pass


class LocalChannel:
    """In-process bounded FIFO (deterministic mode and intra-process use)."""

    def __init__(self, capacity: int = 0):
        self.capacity = capacity
        self._items: deque = deque()

    def put_nowait(self, item) -> None:
        if self.capacity and len(self._items) >= self.capacity:
            raise ChannelFull
        self._items.append(item)

    def get_nowait(self):
        if not self._items:
            raise ChannelEmpty
        return self._items.popleft()

    def __len__(self) -> int:
        return len(self._items)


class MpChannel:
    """Wrapper presenting the same non-blocking interface over a
    multiprocessing queue."""

    def __init__(self, mp_queue):
        self.raw = mp_queue

    def put_nowait(self, item) -> None:
        try:
            self.raw.put_nowait(item)
        except _queue.Full:
            raise ChannelFull from None

    def get_nowait(self):
        try:
            return self.raw.get_nowait()
        except _queue.Empty:
            raise ChannelEmpty from None


class ThreadChannel:
    """Thread-safe bounded FIFO for workers inside one process."""

    def __init__(self, capacity: int = 0):
        self.raw = _queue.Queue(maxsize=capacity)

    def put_nowait(self, item) -> None:
        try:
            self.raw.put_nowait(item)
        except _queue.Full:
            raise ChannelFull from None

    def get_nowait(self):
        try:
            return self.raw.get_nowait()
        except _queue.Empty:
            raise ChannelEmpty from None

    def __len__(self) -> int:
        return self.raw.qsize()


class SharedSignal:
    """The request flag between the buffer manager (writer) and the
    multi-queue manager (reader)."""

    def __init__(self):
        self._event = threading.Event()

    def set(self) -> None:
        self._event.set()

    def clear(self) -> None:
        self._event.clear()

    def is_set(self) -> bool:
        return self._event.is_set()


class Clock:
    """Wall clock by default; the deterministic scheduler substitutes a
    logical clock."""

    def now(self) -> float:
        return time.monotonic()


class LogicalClock(Clock):
    def __init__(self):
        self.t = 0.0

    def now(self) -> float:
        return self.t

    def advance(self, dt: float) -> None:
        self.t += dt


class DeterministicScheduler:
    """Runs registered workers one tick at a time in a seeded random order
    on a logical clock. A tick is a callable returning True when it did
    work; the clock advances a fixed quantum per tick either way."""

    def __init__(self, seed: int = 0, quantum: float = 1e-3):
        self.rng = np.random.default_rng(seed)
        self.clock = LogicalClock()
        self.quantum = quantum
        self.workers: list[tuple[str, Callable[[], Any]]] = []

    def add(self, name: str, tick: Callable[[], Any]) -> None:
        self.workers.append((name, tick))

    def step(self) -> None:
        idx = int(self.rng.integers(len(self.workers)))
        self.workers[idx][1]()
        self.clock.advance(self.quantum)

    def run(
        self,
        max_ticks: int = 1_000_000,
        until: Callable[[], bool] | None = None,
    ) -> int:
        ticks = 0
        while ticks < max_ticks:
            if until is not None and until():
                break
            self.step()
            ticks += 1
        return ticks


class RateLimiter:
    """min_interval seconds between permitted events on the given clock;
    an interval of 0 always permits."""

    def __init__(self, clock: Clock, min_interval: float):
        self.clock = clock
        self.min_interval = min_interval
        self._last = -np.inf

    def ready(self) -> bool:
        return self.clock.now() - self._last >= self.min_interval

    def fire(self) -> None:
        self._last = self.clock.now()


class BoundedPipe:
    """Producer-side staging in front of a bounded channel.

    ``push`` never blocks: items that cannot enter the channel wait in a
    local pending deque, and once that exceeds its capacity the oldest
    pending item is dropped (counted, never silently)."""

    def __init__(self, out_channel, pending_capacity: int, clock: Clock | None = None,
                 latency: "LatencyTracker | None" = None):
        self.out = out_channel
        self.pending: deque = deque()
        self.pending_capacity = pending_capacity
        self.clock = clock
        self.latency = latency
        self.pushed = 0
        self.dropped = 0

    def push(self, item) -> None:
        self.pending.append(item)
        self.pushed += 1
        self.flush()

    def flush(self) -> None:
        while self.pending:
            t0 = self.clock.now() if self.clock else None
            try:
                self.out.put_nowait(self.pending[0])
            except ChannelFull:
                if t0 is not None and self.latency is not None:
                    self.latency.record(self.clock.now() - t0)
                break
            if t0 is not None and self.latency is not None:
                self.latency.record(self.clock.now() - t0)
            self.pending.popleft()
        while len(self.pending) > self.pending_capacity:
            self.pending.popleft()
            self.dropped += 1


class LatencyTracker:
    """Fixed-size reservoir of latency samples with quantile queries."""

    def __init__(self, capacity: int = 100_000):
        self.samples: list[float] = []
        self.capacity = capacity
        self.count = 0

    def record(self, seconds: float) -> None:
        self.count += 1
        if len(self.samples) < self.capacity:
            self.samples.append(seconds)
        else:  # reservoir replacement keeps quantiles unbiased
            j = np.random.randint(self.count)
            if j < self.capacity:
                self.samples[j] = seconds

    def quantile(self, q: float) -> float:
        if not self.samples:
            return 0.0
        return float(np.quantile(np.array(self.samples), q))

    def merged(self, other: "LatencyTracker") -> "LatencyTracker":
        out = LatencyTracker(self.capacity)
        out.samples = self.samples + other.samples
        out.count = self.count + other.count
        return out

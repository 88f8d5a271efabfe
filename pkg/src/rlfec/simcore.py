"""Event loop, integer-millisecond clock and named RNG streams."""

from __future__ import annotations

import heapq
import itertools
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

STREAM_NAMES = ("loss-model", "agent-exploration", "network-init", "minibatch-sampling")


class SimulationError(RuntimeError):
    """An event action failed; carries the simulated time and event kind."""

    def __init__(self, message: str, time_ms: int | None = None, kind: str | None = None):
        self.time_ms = time_ms
        self.kind = kind
        where = f" at t={time_ms} ms in {kind!r}" if time_ms is not None else ""
        super().__init__(f"{message}{where}")


@dataclass(order=True)
class Event:
    time: int
    seq: int
    action: Callable[..., Any] = field(compare=False)
    args: tuple = field(compare=False, default=())
    kind: str = field(compare=False, default="event")
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-threaded event loop.

    Events fire in (time, insertion sequence) order, so two runs that
    schedule the same events in the same order execute identically.
    """

    def __init__(self, trace: bool = False):
        self.now = 0
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._stopped = False
        self.trace: list[tuple[int, str]] | None = [] if trace else None

    def schedule(self, delay: int, action: Callable[..., Any], *args, kind: str = "event") -> Event:
        if delay < 0:
            raise ValueError(f"cannot schedule into the past (delay={delay})")
        return self.schedule_at(self.now + int(delay), action, *args, kind=kind)

    def schedule_at(self, time: int, action: Callable[..., Any], *args, kind: str = "event") -> Event:
        time = int(time)
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} < now={self.now}")
        ev = Event(time, next(self._seq), action, args, kind)
        heapq.heappush(self._queue, ev)
        return ev

    def stop(self) -> None:
        """Make run_until return after the current event."""
        self._stopped = True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, limit: int | None = None) -> int:
        """Execute events with fire time <= limit (or until the queue drains).

        When a limit is given and no event stops the loop early, the clock
        ends at the limit.
        """
        self._stopped = False
        q = self._queue
        while q and not self._stopped:
            ev = q[0]
            if limit is not None and ev.time > limit:
                break
            heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = ev.time
            if self.trace is not None:
                self.trace.append((ev.time, ev.kind))
            try:
                ev.action(*ev.args)
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(f"{type(exc).__name__}: {exc}", ev.time, ev.kind) from exc
        if limit is not None and not self._stopped and self.now < limit:
            self.now = limit
        return self.now


class RngStreams:
    """Independent numpy generators derived from one master seed.

    Each stream is seeded with SeedSequence([master, crc32(name)]), so
    adding a stream never perturbs the others.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._cache: dict[str, np.random.Generator] = {}

    def seed_sequence(self, name: str) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, zlib.crc32(name.encode())])

    def get(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = np.random.default_rng(self.seed_sequence(name))
        return self._cache[name]

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.get(name)


def round_seed(master_seed: int, round_index: int) -> int:
    """Per-round seed; identical across policies for the same master seed."""
    ss = np.random.SeedSequence([int(master_seed), int(round_index), 0x52D])
    return int(ss.generate_state(1, dtype=np.uint32)[0])

"""Asymmetric long-delay link and the downlink erasure-probability models."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

UNIFORM_PE_VALUES = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35)
MARKOV_PE_VALUES = (0.05, 0.15, 0.20, 0.25, 0.30, 0.35)

# birth-death chain with holding states over MARKOV_PE_VALUES
MARKOV_P = np.array(
    [
        [0.4, 0.6, 0.0, 0.0, 0.0, 0.0],
        [0.4, 0.2, 0.4, 0.0, 0.0, 0.0],
        [0.0, 0.4, 0.2, 0.4, 0.0, 0.0],
        [0.0, 0.0, 0.4, 0.2, 0.4, 0.0],
        [0.0, 0.0, 0.0, 0.4, 0.2, 0.4],
        [0.0, 0.0, 0.0, 0.0, 0.6, 0.4],
    ]
)


@dataclass(frozen=True)
class LinkConfig:
    down_rate: int = 10_000_000  # bit/s
    up_rate: int = 100_000  # bit/s
    one_way_delay: int = 1000  # ms
    symbol_size: int = 1026  # bytes on the downlink wire

    def __post_init__(self):
        for name in ("down_rate", "up_rate"):
            rate = getattr(self, name)
            if rate <= 0 or rate % 1000:
                raise ValueError(f"{name} must be a positive multiple of 1000 bit/s, got {rate}")
        if self.one_way_delay < 0:
            raise ValueError("one_way_delay must be >= 0")
        if self.symbol_size <= 0:
            raise ValueError("symbol_size must be > 0")

    @property
    def rtt(self) -> int:
        return 2 * self.one_way_delay


def birth_death_matrix(n_states: int) -> np.ndarray:
    """Tridiagonal chain: interior rows (0.4, 0.2, 0.4), edge rows hold 0.4 and step in 0.6.

    For six states this is exactly MARKOV_P.
    """
    if n_states < 2:
        raise ValueError("need at least two states")
    P = np.zeros((n_states, n_states))
    P[0, 0], P[0, 1] = 0.4, 0.6
    P[-1, -1], P[-1, -2] = 0.4, 0.6
    for i in range(1, n_states - 1):
        P[i, i - 1], P[i, i], P[i, i + 1] = 0.4, 0.2, 0.4
    return P


def check_transition_matrix(P: np.ndarray) -> None:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("transition matrix rows must be non-negative and sum to 1")
    i, j = np.nonzero(P)
    if np.any(np.abs(i - j) > 1):
        raise ValueError("transition matrix must be tridiagonal (adjacent moves only)")


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left eigenvector of P for eigenvalue 1, normalised."""
    w, v = np.linalg.eig(np.asarray(P, dtype=float).T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


class Serializer:
    """One FIFO transmitter per direction.

    Time on the wire is kept in integer bit-times (1 / rate seconds), which
    is exact for any packet size; it is rounded to whole milliseconds only
    when a departure or arrival is reported.
    """

    def __init__(self, rate_bps: int):
        self.rate = int(rate_bps)
        self.bits_per_ms = self.rate // 1000
        self.free_bits = 0  # wire busy until this bit-time

    def busy_until_ms(self) -> int:
        return -(-self.free_bits // self.bits_per_ms)

    def idle_at(self, now_ms: int) -> bool:
        return self.free_bits <= now_ms * self.bits_per_ms

    def send(self, now_ms: int, size_bytes: int, count: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Queue `count` equal packets; returns (start_ms floor, end_ms ceil) per packet."""
        b = int(size_bytes) * 8
        s0 = max(self.free_bits, int(now_ms) * self.bits_per_ms)
        k = np.arange(count, dtype=np.int64)
        start_bits = s0 + k * b
        end_bits = start_bits + b
        self.free_bits = int(s0 + count * b)
        return start_bits // self.bits_per_ms, -(-end_bits // self.bits_per_ms)


class LossModel:
    """Piecewise-constant downlink erasure probability.

    The whole schedule is a function of the schedule RNG alone, so every
    policy run with the same seed sees the same (time, p_e) changes.
    Changes are generated lazily as later times are queried.
    """

    kind = "base"

    def __init__(self):
        self.change_times: list[int] = []
        self.values: list[float] = []

    def _extend(self) -> None:
        raise NotImplementedError

    def _ensure(self, t: int) -> None:
        while not self.change_times or self._next_change() <= t:
            self._extend()

    def _next_change(self) -> int:
        raise NotImplementedError

    def pe_at(self, t: int) -> float:
        self._ensure(int(t))
        k = np.searchsorted(self.change_times, t, side="right") - 1
        return self.values[k]

    def pe_at_many(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times)
        if times.size == 0:
            return np.zeros(0)
        self._ensure(int(times.max()))
        k = np.searchsorted(self.change_times, times, side="right") - 1
        return np.asarray(self.values)[k]

    def trace_rows(self, until: int | None = None) -> list[tuple[int, float]]:
        rows = list(zip(self.change_times, self.values))
        if until is not None:
            rows = [r for r in rows if r[0] <= until]
        return rows

    def write_trace(self, path, until: int | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "pe"])
            for t, pe in self.trace_rows(until):
                w.writerow([t, f"{pe:.4f}"])


class FixedLoss(LossModel):
    kind = "fixed"

    def __init__(self, pe: float):
        super().__init__()
        if not 0.0 <= pe <= 1.0:
            raise ValueError("pe must lie in [0, 1]")
        self.change_times = [0]
        self.values = [float(pe)]

    def _ensure(self, t: int) -> None:
        pass


class UniformLoss(LossModel):
    """p_e redrawn uniformly from a finite set every `interval` ms, first draw at t=0."""

    kind = "discrete-uniform"

    def __init__(self, rng: np.random.Generator, interval: int, values: Sequence[float] = UNIFORM_PE_VALUES):
        super().__init__()
        if interval <= 0:
            raise ValueError("interval must be > 0")
        self.rng = rng
        self.interval = int(interval)
        self.set = tuple(float(v) for v in values)
        self.current_pe = self.uniform_step()
        self.change_times.append(0)
        self.values.append(self.current_pe)

    def uniform_step(self) -> float:
        self.current_pe = self.set[int(self.rng.integers(len(self.set)))]
        return self.current_pe

    def _next_change(self) -> int:
        return self.change_times[-1] + self.interval

    def _extend(self) -> None:
        t = self._next_change()
        self.change_times.append(t)
        self.values.append(self.uniform_step())


def holding_time_sample(rng: np.random.Generator, mean: float) -> int:
    return max(1, int(round(rng.exponential(mean))))


class MarkovLoss(LossModel):
    """Birth-death chain over p_e levels with exponential holding times.

    The initial level is drawn from the chain's stationary distribution at
    t=0; every subsequent transition (including self-transitions) is logged.
    """

    kind = "markov"

    def __init__(
        self,
        rng: np.random.Generator,
        mean_interval: float,
        values: Sequence[float] = MARKOV_PE_VALUES,
        P: np.ndarray | None = None,
    ):
        super().__init__()
        self.rng = rng
        self.mean_interval = float(mean_interval)
        self.set = tuple(float(v) for v in values)
        if P is None:
            P = MARKOV_P if len(self.set) == 6 else birth_death_matrix(len(self.set))
        self.P = np.array(P, dtype=float)
        check_transition_matrix(self.P)
        if self.P.shape[0] != len(self.set):
            raise ValueError("transition matrix size does not match the p_e set")
        self._cdf = np.cumsum(self.P, axis=1)
        pi = stationary_distribution(self.P)
        self.markov_index = int(np.searchsorted(np.cumsum(pi), rng.random(), side="right"))
        self.markov_index = min(self.markov_index, len(self.set) - 1)
        self.current_pe = self.set[self.markov_index]
        self.change_times.append(0)
        self.values.append(self.current_pe)
        self.next_change_at = holding_time_sample(rng, self.mean_interval)

    def markov_step(self) -> int:
        row = self._cdf[self.markov_index]
        nxt = int(np.searchsorted(row, self.rng.random(), side="right"))
        nxt = min(nxt, len(self.set) - 1)
        assert abs(nxt - self.markov_index) <= 1
        self.markov_index = nxt
        self.current_pe = self.set[nxt]
        return nxt

    def _next_change(self) -> int:
        return self.next_change_at

    def _extend(self) -> None:
        t = self.next_change_at
        self.markov_step()
        self.change_times.append(t)
        self.values.append(self.current_pe)
        self.next_change_at = t + holding_time_sample(self.rng, self.mean_interval)


class Link:
    """Downlink with erasures, lossless uplink, fixed propagation delay."""

    def __init__(self, cfg: LinkConfig, loss: LossModel, erasure_rng: np.random.Generator):
        self.cfg = cfg
        self.loss = loss
        self.erasure_rng = erasure_rng
        self.down = Serializer(cfg.down_rate)
        self.up = Serializer(cfg.up_rate)
        self.down_sent = 0
        self.down_dropped = 0

    def transmit_down(self, now: int, count: int, size_bytes: int | None = None):
        """Serialize `count` symbols; returns (depart_ms, arrive_ms, received mask).

        Each symbol is erased with the p_e in force when it starts leaving
        the sender.
        """
        size = self.cfg.symbol_size if size_bytes is None else size_bytes
        start, end = self.down.send(now, size, count)
        pe = self.loss.pe_at_many(start)
        received = self.erasure_rng.random(count) >= pe
        self.down_sent += count
        self.down_dropped += int(count - received.sum())
        return start, end + self.cfg.one_way_delay, received

    def transmit_up(self, now: int, size_bytes: int) -> int:
        _, end = self.up.send(now, size_bytes, 1)
        return int(end[0]) + self.cfg.one_way_delay

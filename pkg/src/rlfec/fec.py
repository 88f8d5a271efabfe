"""Packet-level erasure coding beneath LTP.

The sender packs queued LTP segments into coding matrices of up to K_max
information symbols, adds redundancy for the code rate in force, and puts
all N symbols on the downlink. The receiver decodes each matrix with an
ideal erasure-code rule and returns one feedback per matrix on the uplink.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .policies import FAILED, NOT_DECODED, RC_MAX, SUCCESS, RateDecision

log = logging.getLogger(__name__)

K_MAX = 512
N_MAX = 768
RC_FLOOR = 0.66  # lowest rate in the RL action set; N_MAX caps it at 2/3 in effect
FEEDBACK_BYTES = 40


@dataclass(eq=False)
class CodingMatrix:
    matrix_id: int
    action_id: int
    segments: list
    rc_used: float
    N: int
    seal_time: int
    depart: np.ndarray | None = None
    arrive: np.ndarray | None = None
    received: np.ndarray | None = None
    status: str | None = None
    received_count: int | None = None

    @property
    def I(self) -> int:
        return len(self.segments)


@dataclass
class MatrixFeedback:
    matrix_id: int
    codec_status: str
    total_segments: int
    received_segments: int

    def __post_init__(self):
        if self.received_segments > self.total_segments:
            raise ValueError("received_segments exceeds total_segments")


@dataclass
class MatrixInfoRecord:
    matrix_id: int
    action_id: int
    I: int
    K: int
    N: int
    tx_time: int | None = None
    status: str | None = None
    total: int | None = None
    received: int | None = None


def redundancy_size(I: int, rc: float, n_max: int = N_MAX) -> int:
    """Codeword length for I information symbols at rate rc, capped at n_max."""
    # the tolerance keeps exact quotients such as 512 / (2/3) from rounding up
    return min(math.ceil(I / rc - 1e-9), n_max)


def decode_matrix(received: np.ndarray, I: int, overhead: int = 0) -> tuple[str, np.ndarray]:
    """Ideal erasure decoding of one matrix.

    `received` is the per-symbol arrival mask with the I information symbols
    first. Returns the codec status and the indices of information symbols
    handed up.
    """
    received = np.asarray(received, dtype=bool)
    info = received[:I]
    if info.all():
        return NOT_DECODED, np.arange(I)
    if int(received.sum()) >= I + overhead:
        return SUCCESS, np.arange(I)
    return FAILED, np.flatnonzero(info)


def binomial_failure_probability(I: int, N: int, p: float, overhead: int = 0) -> float:
    """P(Binomial(N, 1-p) < I + overhead), summed term by term in log space."""
    need = I + overhead
    q = 1.0 - p
    if need <= 0:
        return 0.0
    if q == 0.0:
        return 1.0
    if p == 0.0:
        return 0.0 if N >= need else 1.0
    total = 0.0
    for k in range(0, min(need, N + 1)):
        lg = math.lgamma(N + 1) - math.lgamma(k + 1) - math.lgamma(N - k + 1)
        total += math.exp(lg + k * math.log(q) + (N - k) * math.log(p))
    return min(total, 1.0)


class MatrixInfoBuffer:
    """Sender-side record per sealed matrix, purged FIFO as feedback arrives."""

    def __init__(self):
        self.records: OrderedDict[int, MatrixInfoRecord] = OrderedDict()
        self.dropped = 0
        self.max_occupancy = 0

    def add(self, rec: MatrixInfoRecord) -> None:
        self.records[rec.matrix_id] = rec
        self.max_occupancy = max(self.max_occupancy, len(self.records))

    def __len__(self):
        return len(self.records)

    def lookup_and_cleanup(self, fb: MatrixFeedback) -> MatrixInfoRecord | None:
        rec = self.records.get(fb.matrix_id)
        if rec is None:
            self.dropped += 1
            log.debug("feedback for unknown matrix %d dropped", fb.matrix_id)
            return None
        rec.status = fb.codec_status
        rec.total = fb.total_segments
        rec.received = fb.received_segments
        while self.records and next(iter(self.records)) < fb.matrix_id:
            self.records.popitem(last=False)
        return rec


@dataclass
class FecConfig:
    k_max: int = K_MAX
    n_max: int = N_MAX
    aggregation_ms: int = 50
    decode_overhead: int = 0
    feedback_bytes: int = FEEDBACK_BYTES

    @property
    def gap_timeout_ms(self) -> int:
        return 2 * self.aggregation_ms


class FecReceiver:
    """Concludes matrices in id order, hands segments to LTP, returns feedback."""

    def __init__(self, sim, cfg: FecConfig, deliver: Callable[[list], None],
                 send_feedback: Callable[[MatrixFeedback], None]):
        self.sim = sim
        self.cfg = cfg
        self.deliver = deliver
        self.send_feedback = send_feedback
        self.pending: OrderedDict[int, CodingMatrix] = OrderedDict()
        self.failures = 0
        self.concluded = 0

    def expect(self, m: CodingMatrix) -> None:
        """Register a matrix put on the wire and schedule its conclusion.

        The receiver knows a matrix has ended when its last symbol arrives,
        when a later matrix starts arriving, or after a gap timeout.
        """
        rec_idx = np.flatnonzero(m.received)
        if m.received[-1]:
            t_end = int(m.arrive[-1])
        elif rec_idx.size:
            t_end = int(m.arrive[rec_idx[-1]]) + self.cfg.gap_timeout_ms
        else:
            t_end = int(m.arrive[-1]) + self.cfg.gap_timeout_ms
        self.pending[m.matrix_id] = m
        if rec_idx.size:
            t_first = int(m.arrive[rec_idx[0]])
            if any(p.matrix_id < m.matrix_id for p in self.pending.values()):
                self.sim.schedule_at(t_first, self.flush_before, m.matrix_id, kind="fec_gap_detect")
        self.sim.schedule_at(t_end, self.conclude, m.matrix_id, kind="fec_conclude")

    def flush_before(self, matrix_id: int) -> None:
        for mid in [k for k in self.pending if k < matrix_id]:
            self._conclude_one(self.pending.pop(mid))

    def conclude(self, matrix_id: int) -> None:
        if matrix_id not in self.pending:
            return
        self.flush_before(matrix_id)
        self._conclude_one(self.pending.pop(matrix_id))

    def _conclude_one(self, m: CodingMatrix) -> None:
        status, idx = decode_matrix(m.received, m.I, self.cfg.decode_overhead)
        m.status = status
        m.received_count = int(m.received.sum())
        self.concluded += 1
        if status == FAILED:
            self.failures += 1
        self.deliver([m.segments[i] for i in idx])
        self.send_feedback(MatrixFeedback(m.matrix_id, status, m.N, m.received_count))


class FecSender:
    """Fills matrices from the LTP queue while the downlink is free.

    A matrix is opened only when the wire has finished the previous one, so
    the rate applied at sealing is the freshest decision available. It seals
    when K_max segments are in or the aggregation timer fires.
    """

    def __init__(self, sim, link, cfg: FecConfig, receiver: FecReceiver,
                 on_departure: Callable | None = None):
        self.sim = sim
        self.link = link
        self.cfg = cfg
        self.receiver = receiver
        self.on_departure = on_departure
        self.queue: deque = deque()
        self.open: list | None = None
        self._agg_timer = None
        self._wire_timer = None
        self.decision: RateDecision | None = None
        self.waiting_for_decision = False
        self.next_matrix_id = 0
        self.info = MatrixInfoBuffer()
        self.matrices: list[CodingMatrix] = []
        self.on_record: Callable | None = None
        self.clamp_warnings = 0

    def set_decision(self, d: RateDecision) -> None:
        self.decision = d
        if self.waiting_for_decision:
            self.waiting_for_decision = False
            self._pump()

    def enqueue_segment(self, seg) -> None:
        self.queue.append(seg)
        self._pump()

    def _wire_free(self) -> bool:
        return self.link.down.idle_at(self.sim.now)

    def _pump(self) -> None:
        if self.open is None:
            if not self.queue or not self._wire_free():
                return
            if self.decision is None:
                self.waiting_for_decision = True
                return
            self.open = []
        while self.queue and len(self.open) < self.cfg.k_max:
            self.open.append(self.queue.popleft())
        if len(self.open) >= self.cfg.k_max:
            self.seal_matrix()
        elif self._agg_timer is None:
            self._agg_timer = self.sim.schedule(self.cfg.aggregation_ms, self._on_agg_timer, kind="fec_agg_timer")

    def _on_agg_timer(self) -> None:
        self._agg_timer = None
        if self.open:
            self.seal_matrix()

    def _on_wire_free(self) -> None:
        self._wire_timer = None
        self._pump()

    def seal_matrix(self) -> CodingMatrix:
        if self._agg_timer is not None:
            self._agg_timer.cancel()
            self._agg_timer = None
        segs, self.open = self.open, None
        if not segs:
            raise ValueError("cannot seal an empty matrix")
        d = self.decision
        rc = d.rc
        if not RC_FLOOR - 1e-12 <= rc <= RC_MAX + 1e-12:
            self.clamp_warnings += 1
            log.warning("code rate %.4f outside [%.2f, %.4f], clamped", rc, RC_FLOOR, RC_MAX)
            rc = min(max(rc, RC_FLOOR), RC_MAX)
        I = len(segs)
        N = redundancy_size(I, rc, self.cfg.n_max)
        m = CodingMatrix(self.next_matrix_id, d.action_id, segs, rc, N, self.sim.now)
        self.next_matrix_id += 1
        m.depart, m.arrive, m.received = self.link.transmit_down(self.sim.now, N)
        self.matrices.append(m)
        self.info.add(MatrixInfoRecord(m.matrix_id, m.action_id, I, self.cfg.k_max, N,
                                       tx_time=int(m.depart[-1])))
        if self.on_departure is not None:
            for seg, t in zip(segs, m.depart[:I]):
                self.on_departure(seg, int(t))
        self.receiver.expect(m)
        self._wire_timer = self.sim.schedule_at(self.link.down.busy_until_ms(), self._on_wire_free,
                                                kind="wire_free")
        return m

    def on_feedback(self, fb: MatrixFeedback) -> MatrixInfoRecord | None:
        rec = self.info.lookup_and_cleanup(fb)
        if rec is not None and self.on_record is not None:
            self.on_record(rec)
        return rec

    def write_matrix_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seal_time_ms", "matrix_id", "action_id", "I", "N", "rc", "status", "received", "total"])
            for m in self.matrices:
                w.writerow([m.seal_time, m.matrix_id, m.action_id, m.I, m.N, f"{m.rc_used:.4f}",
                            m.status or "", "" if m.received_count is None else m.received_count, m.N])

"""LTP sender/receiver: block segmentation, checkpoint/report ARQ, sessions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .simcore import SimulationError

log = logging.getLogger(__name__)

SEGMENT_SIZE = 1024
BLOCK_SIZE = 600_000
REPORT_HEADER_BYTES = 24
REPORT_CLAIM_BYTES = 8


@dataclass(eq=False)
class Segment:
    block_id: int
    index: int
    size: int
    block_segments: int
    is_checkpoint: bool = False
    retransmission: bool = False
    cp_serial: int = 0


@dataclass
class ReportSegment:
    block_id: int
    report_serial: int
    cp_serial: int
    claims: list[tuple[int, int]]  # inclusive, sorted, disjoint
    segment_count: int

    @property
    def complete(self) -> bool:
        return self.claims == [(0, self.segment_count - 1)]

    @property
    def size(self) -> int:
        return REPORT_HEADER_BYTES + REPORT_CLAIM_BYTES * len(self.claims)


def segment_block(block_id: int, payload_size: int, segment_size: int = SEGMENT_SIZE) -> list[Segment]:
    if payload_size <= 0:
        raise ValueError("block payload must be > 0 bytes")
    n = math.ceil(payload_size / segment_size)
    segs = [Segment(block_id, i, segment_size, n) for i in range(n)]
    segs[-1].size = payload_size - (n - 1) * segment_size
    segs[-1].is_checkpoint = True
    return segs


def file_blocks(file_size: int, block_size: int = BLOCK_SIZE) -> list[int]:
    full, rest = divmod(file_size, block_size)
    return [block_size] * full + ([rest] if rest else [])


def claims_from_mask(mask: np.ndarray) -> list[tuple[int, int]]:
    """Received-index ranges of a boolean mask, as inclusive (start, end) pairs."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    d = np.diff(m.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def missing_from_claims(claims: list[tuple[int, int]], count: int) -> list[int]:
    got = np.zeros(count, dtype=bool)
    for s, e in claims:
        got[s:e + 1] = True
    return np.flatnonzero(~got).tolist()


@dataclass
class Session:
    block_id: int
    segments: list[Segment]
    state: str = "sending"  # sending | awaiting_report | retransmitting | closed
    cp_serial: int = 0
    cp_timer: object = None
    rounds: int = 0
    opened_at: int = 0
    closed_at: int | None = None

    @property
    def segment_count(self) -> int:
        return len(self.segments)


class LtpSender:
    """Opens one session per block, up to max_sessions at a time.

    Segments go to `emit` (the FEC layer). The checkpoint timer starts when
    the checkpoint actually leaves the sender's wire.
    """

    def __init__(
        self,
        sim,
        blocks: list[int],
        emit: Callable[[Segment], None],
        max_sessions: int,
        cp_timer_ms: int,
        max_rounds: int = 50,
        segment_size: int = SEGMENT_SIZE,
        trace: list | None = None,
    ):
        self.sim = sim
        self.blocks = blocks
        self.emit = emit
        self.max_sessions = max_sessions
        self.cp_timer_ms = cp_timer_ms
        self.max_rounds = max_rounds
        self.segment_size = segment_size
        self.sessions: dict[int, Session] = {}
        self.next_block = 0
        self.open_count = 0
        self.max_open_seen = 0
        self.retx_rounds = 0
        self.cp_expiries = 0
        self.sent_segments = 0
        self.resent_segments = 0
        self.trace = trace

    def _log(self, block_id: int, event: str) -> None:
        if self.trace is not None:
            self.trace.append((self.sim.now, block_id, event))

    def start(self) -> None:
        self._open_sessions()

    def _open_sessions(self) -> None:
        while self.open_count < self.max_sessions and self.next_block < len(self.blocks):
            bid = self.next_block
            self.next_block += 1
            segs = segment_block(bid, self.blocks[bid], self.segment_size)
            s = Session(bid, segs, opened_at=self.sim.now)
            self.sessions[bid] = s
            self.open_count += 1
            self.max_open_seen = max(self.max_open_seen, self.open_count)
            self._log(bid, "open")
            for seg in segs:
                self.emit(seg)
            self.sent_segments += len(segs)

    def on_departure(self, seg: Segment, depart_ms: int) -> None:
        """Called by the FEC layer with each segment's wire departure time."""
        if not seg.is_checkpoint:
            return
        s = self.sessions.get(seg.block_id)
        if s is None or s.state == "closed" or seg.cp_serial != s.cp_serial:
            return
        if s.cp_timer is not None:
            s.cp_timer.cancel()
        s.state = "awaiting_report"
        s.cp_timer = self.sim.schedule_at(
            max(depart_ms + self.cp_timer_ms, self.sim.now), self.cp_timer_expiry, s, kind="cp_timer")

    def _bump_rounds(self, s: Session) -> None:
        s.rounds += 1
        if s.rounds > self.max_rounds:
            raise SimulationError(
                f"block {s.block_id} exceeded {self.max_rounds} retransmission rounds", self.sim.now, "ltp")

    def cp_timer_expiry(self, s: Session) -> None:
        if s.state == "closed":
            return
        s.cp_timer = None
        self.cp_expiries += 1
        self._bump_rounds(s)
        s.cp_serial += 1
        last = s.segments[-1]
        cp = Segment(s.block_id, last.index, last.size, s.segment_count,
                     is_checkpoint=True, retransmission=True, cp_serial=s.cp_serial)
        self._log(s.block_id, f"cp_timeout:{s.rounds}")
        self.emit(cp)
        self.resent_segments += 1

    def on_report(self, rs: ReportSegment) -> None:
        s = self.sessions.get(rs.block_id)
        if s is None or s.state == "closed":
            return
        if rs.complete:
            self._close(s)
            return
        if rs.cp_serial != s.cp_serial:
            return  # answers a superseded checkpoint
        missing = missing_from_claims(rs.claims, s.segment_count)
        self.retransmit_missing(s, missing)

    def retransmit_missing(self, s: Session, missing: list[int]) -> list[Segment]:
        if not missing:
            return []
        self._bump_rounds(s)
        self.retx_rounds += 1
        if s.cp_timer is not None:
            s.cp_timer.cancel()
            s.cp_timer = None
        s.cp_serial += 1
        s.state = "retransmitting"
        out = []
        for k, i in enumerate(missing):
            orig = s.segments[i]
            out.append(Segment(s.block_id, i, orig.size, s.segment_count,
                               is_checkpoint=(k == len(missing) - 1), retransmission=True,
                               cp_serial=s.cp_serial))
        self._log(s.block_id, f"retransmit:{len(out)}")
        for seg in out:
            self.emit(seg)
        self.resent_segments += len(out)
        return out

    def _close(self, s: Session) -> None:
        if s.cp_timer is not None:
            s.cp_timer.cancel()
            s.cp_timer = None
        s.state = "closed"
        s.closed_at = self.sim.now
        self.open_count -= 1
        self._log(s.block_id, "close")
        self._open_sessions()

    @property
    def all_closed(self) -> bool:
        return self.next_block >= len(self.blocks) and self.open_count == 0


@dataclass
class _RxBlock:
    received: np.ndarray
    bytes_received: int = 0
    delivered_at: int | None = None
    report_serial: int = 0


class LtpReceiver:
    """Tracks received segments per block and answers checkpoints with reports."""

    def __init__(self, sim, send_report: Callable[[ReportSegment], None],
                 on_block_delivered: Callable[[int, int], None] | None = None):
        self.sim = sim
        self.send_report = send_report
        self.on_block_delivered = on_block_delivered
        self.blocks: dict[int, _RxBlock] = {}
        self.delivered_bytes = 0
        self.duplicate_segments = 0

    def _block(self, seg: Segment) -> _RxBlock:
        b = self.blocks.get(seg.block_id)
        if b is None:
            b = _RxBlock(np.zeros(seg.block_segments, dtype=bool))
            self.blocks[seg.block_id] = b
        return b

    def deliver(self, segments: list[Segment]) -> None:
        """Segments handed up by the FEC receiver from one matrix."""
        checkpoints = []
        for seg in segments:
            b = self._block(seg)
            if b.received[seg.index]:
                self.duplicate_segments += 1
            else:
                b.received[seg.index] = True
                b.bytes_received += seg.size
            if seg.is_checkpoint:
                checkpoints.append(seg)
        for seg in segments:
            b = self.blocks[seg.block_id]
            if b.delivered_at is None and b.received.all():
                b.delivered_at = self.sim.now
                self.delivered_bytes += b.bytes_received
                if self.on_block_delivered is not None:
                    self.on_block_delivered(seg.block_id, self.sim.now)
        for cp in checkpoints:
            self.on_checkpoint_received(cp)

    def on_checkpoint_received(self, cp: Segment) -> ReportSegment:
        b = self.blocks[cp.block_id]
        rs = ReportSegment(cp.block_id, b.report_serial, cp.cp_serial,
                           claims_from_mask(b.received), len(b.received))
        b.report_serial += 1
        self.send_report(rs)
        return rs

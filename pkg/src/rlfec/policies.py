"""Code-rate policies: fixed rate and the receiver-feedback adaptive rule.

A policy hands the FEC sender a RateDecision at the start of a transfer
and may replace it whenever a matrix feedback reaches the sender. The FEC
sender stamps every sealed matrix with the action id of the decision in
force.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

log = logging.getLogger(__name__)

RC_MIN = 2 / 3
RC_MAX = 8 / 9

SUCCESS = "Success"
FAILED = "Failed"
NOT_DECODED = "NotDecoded"
STATUSES = (SUCCESS, FAILED, NOT_DECODED)


def clamp_rate(rc: float, lo: float = RC_MIN, hi: float = RC_MAX) -> float:
    return min(max(rc, lo), hi)


@dataclass(frozen=True)
class RateDecision:
    rc: float
    action_id: int
    issued_at: int


class RatePolicy:
    name = "base"

    def start(self, now: int) -> RateDecision:
        raise NotImplementedError

    def on_feedback(self, record, now: int) -> RateDecision | None:
        return None


class FixedPolicy(RatePolicy):
    """Constant code rate; with rc0 = 1 - 1.15 * p_e it is the known-loss oracle."""

    name = "fixed"

    def __init__(self, rc0: float):
        rc = clamp_rate(rc0)
        if rc != rc0:
            log.warning("fixed rate %.4f clamped to %.4f", rc0, rc)
        self.rc0 = rc

    def start(self, now: int) -> RateDecision:
        return RateDecision(self.rc0, 0, now)


def compute_ps(received: int, total: int) -> float:
    if total <= 0:
        raise ValueError("total must be >= 1")
    if not 0 <= received <= total:
        raise ValueError("received must lie in [0, total]")
    return received / total


def compute_weight(status: str, total: int) -> float:
    if status == FAILED:
        return 1.0
    if status not in STATUSES:
        raise ValueError(f"unknown codec status {status!r}")
    return 0.5 if total > 50 else 0.5 * total / 50


class FeedbackPolicy(RatePolicy):
    """Loss-rate estimate smoothed over per-matrix feedback, rate = 1 - mu * p_e."""

    name = "feedback"

    def __init__(self, mu: float = 1.15, pe_init: float = 0.0):
        self.mu = mu
        self.pe_init = pe_init
        self.p_e_est = pe_init
        self._next_id = 0

    def _decide(self, now: int) -> RateDecision:
        d = RateDecision(clamp_rate(1.0 - self.p_e_est * self.mu), self._next_id, now)
        self._next_id += 1
        return d

    def start(self, now: int) -> RateDecision:
        self.p_e_est = self.pe_init
        self._next_id = 0
        return self._decide(now)

    def feedback_update(self, status: str, received: int, total: int, now: int) -> RateDecision:
        ps = compute_ps(received, total)
        w = compute_weight(status, total)
        self.p_e_est = w * (1.0 - ps) + (1.0 - w) * self.p_e_est
        return self._decide(now)

    def on_feedback(self, record, now: int) -> RateDecision:
        return self.feedback_update(record.status, record.received, record.total, now)

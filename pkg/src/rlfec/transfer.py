"""One end-to-end file transfer: LTP over the FEC layer over the simulated link."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import Link
from .config import ScenarioConfig
from .fec import FecReceiver, FecSender
from .ltp import LtpReceiver, LtpSender, file_blocks
from .policies import RatePolicy
from .simcore import RngStreams, SimulationError, Simulator

log = logging.getLogger(__name__)


@dataclass
class RoundResult:
    round: int
    policy: str
    scenario: str
    seed: int
    goodput_mbps: float
    delay_s: float
    decoding_failures: int
    retx_rounds: int

    CSV_FIELDS = ("round", "policy", "scenario", "seed", "goodput_mbps", "delay_s",
                  "decoding_failures", "retx_rounds")

    def csv_row(self) -> list:
        return [self.round, self.policy, self.scenario, self.seed, f"{self.goodput_mbps:.6f}",
                f"{self.delay_s:.3f}", self.decoding_failures, self.retx_rounds]


@dataclass
class TransferRun:
    """Everything a finished round leaves behind, for metrics and traces."""

    result: RoundResult
    sim: Simulator
    link: Link
    fec: FecSender
    fec_rx: FecReceiver
    ltp: LtpSender
    ltp_rx: LtpReceiver
    decisions: list = field(default_factory=list)
    session_trace: list | None = None

    def write_decision_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "action_id", "policy", "rc", "p_e_est"])
            for row in self.decisions:
                t, aid, pol, rc, pe = row
                w.writerow([t, aid, pol, f"{rc:.4f}", f"{pe:.4f}"])

    def write_session_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "block_id", "event"])
            w.writerows(self.session_trace or [])


def loss_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Schedule and erasure generators, both children of the loss-model stream."""
    ss = RngStreams(seed).seed_sequence("loss-model")
    sched, erase = ss.spawn(2)
    return np.random.default_rng(sched), np.random.default_rng(erase)


def goodput_mbps(file_bytes: int, delay_s: float) -> float:
    return file_bytes * 8 / 1e6 / delay_s


def run_transfer(cfg: ScenarioConfig, policy: RatePolicy, seed: int, round_index: int = 0,
                 trace: bool = False, drain: bool = False) -> TransferRun:
    """Simulate one file transfer.

    Delay runs from the first segment handed to the FEC layer (t=0) until
    the last block is complete at the receiving LTP; the loop stops there
    unless `drain` asks for in-flight matrices and feedback to settle.
    """
    sim = Simulator(trace=trace)
    sched_rng, erase_rng = loss_streams(seed)
    loss = cfg.make_loss_model(sched_rng)
    link = Link(cfg.link_config(), loss, erase_rng)
    blocks = file_blocks(cfg.scenario.file_size, cfg.ltp.block_size)
    session_trace = [] if trace else None
    delivered = {"n": 0, "at": None}

    def on_block_delivered(block_id: int, now: int) -> None:
        delivered["n"] += 1
        if delivered["n"] == len(blocks):
            delivered["at"] = now
            if not drain:
                sim.stop()

    def send_report(rs) -> None:
        sim.schedule_at(link.transmit_up(sim.now, rs.size), ltp.on_report, rs, kind="report_arrival")

    def send_feedback(fb) -> None:
        sim.schedule_at(link.transmit_up(sim.now, cfg.fec.feedback_bytes), fec.on_feedback, fb,
                        kind="feedback_arrival")

    ltp_rx = LtpReceiver(sim, send_report, on_block_delivered)
    fec_rx = FecReceiver(sim, cfg.fec, ltp_rx.deliver, send_feedback)
    fec = FecSender(sim, link, cfg.fec, fec_rx)
    ltp = LtpSender(sim, blocks, fec.enqueue_segment, cfg.max_sessions, cfg.cp_timer_ms,
                    cfg.ltp.max_rounds, cfg.ltp.segment_size, trace=session_trace)
    fec.on_departure = ltp.on_departure
    decisions = []

    def apply(decision) -> None:
        if decision is None:
            return
        decisions.append((sim.now, decision.action_id, policy.name, decision.rc,
                          float(getattr(policy, "p_e_est", float("nan")))))
        fec.set_decision(decision)

    def on_record(rec) -> None:
        apply(policy.on_feedback(rec, sim.now))

    fec.on_record = on_record
    apply(policy.start(sim.now))
    ltp.start()
    try:
        sim.run_until()
    except SimulationError as exc:
        raise SimulationError(f"round {round_index} (seed {seed}): {exc}") from exc
    if delivered["at"] is None:
        raise SimulationError(f"round {round_index}: event queue drained before the file was delivered",
                              sim.now, "transfer")
    delay_s = delivered["at"] / 1000.0
    result = RoundResult(
        round=round_index,
        policy=policy.name,
        scenario=cfg.scenario.name,
        seed=seed,
        goodput_mbps=goodput_mbps(cfg.scenario.file_size, delay_s),
        delay_s=delay_s,
        decoding_failures=fec_rx.failures,
        retx_rounds=ltp.retx_rounds + ltp.cp_expiries,
    )
    return TransferRun(result, sim, link, fec, fec_rx, ltp, ltp_rx, decisions, session_trace)

"""Training and evaluation campaigns, summary statistics and report tables."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import RLAgent, RLPolicy
from .config import ScenarioConfig
from .policies import FeedbackPolicy, FixedPolicy, RatePolicy
from .simcore import RngStreams, round_seed
from .transfer import RoundResult, run_transfer

log = logging.getLogger(__name__)

METRICS = ("goodput_mbps", "delay_s", "decoding_failures")


@dataclass
class SummaryStats:
    policy: str
    scenario: str
    rounds: int
    mean: dict
    min: dict
    max: dict
    std: dict

    @classmethod
    def from_results(cls, results: list[RoundResult]) -> "SummaryStats":
        if not results:
            raise ValueError("no rounds to summarise")
        cols = {m: np.array([getattr(r, m) for r in results], dtype=float) for m in METRICS}
        return cls(results[0].policy, results[0].scenario, len(results),
                   {m: float(v.mean()) for m, v in cols.items()},
                   {m: float(v.min()) for m, v in cols.items()},
                   {m: float(v.max()) for m, v in cols.items()},
                   {m: float(v.std(ddof=0)) for m, v in cols.items()})


def make_agent(cfg: ScenarioConfig, seed: int, training: bool) -> RLAgent:
    return RLAgent(RngStreams(seed), cfg.rtt, cfg.agent, training=training)


def make_policy(cfg: ScenarioConfig, agent: RLAgent | None = None) -> RatePolicy:
    kind = cfg.scenario.policy
    if kind == "fixed":
        return FixedPolicy(cfg.policy.fixed_rc)
    if kind == "feedback":
        return FeedbackPolicy(cfg.policy.mu, cfg.policy.pe_init)
    if agent is None:
        raise ValueError("the rl policy needs a trained agent (checkpoint)")
    return RLPolicy(agent)


@dataclass
class TrainingOutcome:
    agent: RLAgent
    results: list[RoundResult]
    converged: bool
    rounds_run: int


def run_training(cfg: ScenarioConfig, rounds: int | None = None, seed: int | None = None,
                 policy: RatePolicy | None = None) -> TrainingOutcome:
    """Train the agent over successive transfers.

    Runs the full round cap unless `stop_on_convergence` is set, in which
    case training ends at the first round where the reward moving average
    is flagged stable and exploration has reached its floor.
    """
    seed = cfg.scenario.train_seed if seed is None else seed
    rounds = cfg.scenario.train_rounds if rounds is None else rounds
    agent = make_agent(cfg, seed, training=True)
    pol = policy or RLPolicy(agent)
    results = []
    for k in range(rounds):
        run = run_transfer(cfg, pol, round_seed(seed, k), k)
        results.append(run.result)
        log.info("train round %d: %.3f Mbps, %.1f s, %d failures, eps=%.3f", k,
                 run.result.goodput_mbps, run.result.delay_s, run.result.decoding_failures, agent.epsilon)
        if (cfg.scenario.stop_on_convergence and agent.accounting.converged
                and agent.epsilon <= agent.cfg.eps_floor):
            break
    return TrainingOutcome(agent, results, agent.accounting.converged, len(results))


def run_eval(cfg: ScenarioConfig, agent: RLAgent | None = None, rounds: int | None = None,
             seed: int | None = None, policy: RatePolicy | None = None, out_dir=None,
             traces: bool = False) -> tuple[list[RoundResult], SummaryStats]:
    """Evaluate one policy over rounds whose seeds depend only on the master seed."""
    seed = cfg.scenario.seed if seed is None else seed
    rounds = cfg.scenario.rounds if rounds is None else rounds
    if agent is not None:
        agent.training = False
    pol = policy or make_policy(cfg, agent)
    results = []
    out = Path(out_dir) if out_dir is not None else None
    for k in range(rounds):
        run = run_transfer(cfg, pol, round_seed(seed, k), k, trace=traces)
        results.append(run.result)
        if out is not None and traces:
            stem = f"{pol.name}_r{k:03d}"
            run.fec.write_matrix_trace(out / f"{stem}_matrices.csv")
            run.write_decision_trace(out / f"{stem}_decisions.csv")
            run.write_session_trace(out / f"{stem}_sessions.csv")
            run.link.loss.write_trace(out / f"{stem}_loss.csv", until=run.sim.now)
    return results, SummaryStats.from_results(results)


def write_round_csv(path, results: list[RoundResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RoundResult.CSV_FIELDS)
        for r in results:
            w.writerow(r.csv_row())


def read_round_csv(path) -> list[RoundResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(RoundResult(int(row["round"]), row["policy"], row["scenario"], int(row["seed"]),
                                   float(row["goodput_mbps"]), float(row["delay_s"]),
                                   int(row["decoding_failures"]), int(row["retx_rounds"])))
    return out


def write_reward_curve(path, agent: RLAgent) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean_reward", "moving_avg_10"])
        for i, (m, ma) in enumerate(zip(agent.accounting.episode_means, agent.accounting.moving_avg)):
            w.writerow([i, f"{m:.6f}", f"{ma:.6f}"])


POLICY_LABELS = {"rl": "RL-Based", "feedback": "Feedback-Based", "fixed": "Fixed p_e"}


def format_summary_table(summaries: list[SummaryStats]) -> str:
    """Average goodput, delay and failures per scenario and policy."""
    lines = []
    header = f"{'Scenario':<28} {'Scheme':<16} {'Goodput (Mbps)':>15} {'Delay (s)':>11} {'Failures':>9} {'Rounds':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for s in summaries:
        lines.append(f"{s.scenario:<28} {POLICY_LABELS.get(s.policy, s.policy):<16} "
                     f"{s.mean['goodput_mbps']:>15.3f} {s.mean['delay_s']:>11.3f} "
                     f"{s.mean['decoding_failures']:>9.3f} {s.rounds:>7d}")
    return "\n".join(lines) + "\n"

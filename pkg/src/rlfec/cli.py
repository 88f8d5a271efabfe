"""Command line: train, eval, dump-config, report, agent-serve."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from importlib import resources
from pathlib import Path

from .campaign import (SummaryStats, format_summary_table, make_agent, read_round_csv, run_eval,
                       run_training, write_reward_curve, write_round_csv)
from .config import POLICIES, ScenarioConfig, dump_config, load_config, parse_config_text
from .ipc import DEFAULT_TIMEOUT_S, AgentServer, EchoAgent, IpcPolicy, RLAgentHandler, connect

log = logging.getLogger("rlfec")


def stock_scenarios() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("rlfec").joinpath("scenarios").iterdir()
                  if p.name.endswith(".cfg"))


def resolve_scenario(spec: str | None) -> ScenarioConfig:
    """A path to a .cfg file, or the name of a bundled scenario such as moon_markov5."""
    if spec is None:
        return ScenarioConfig()
    path = Path(spec)
    if path.is_file():
        return load_config(path)
    stock = resources.files("rlfec").joinpath("scenarios", f"{path.stem}.cfg")
    if stock.is_file():
        return parse_config_text(stock.read_text())
    raise SystemExit(f"scenario {spec!r} not found; bundled: {', '.join(stock_scenarios())}")


def _overrides(cfg: ScenarioConfig, args, seed_key: str = "scenario.seed") -> ScenarioConfig:
    over = {}
    if getattr(args, "policy", None):
        over["scenario.policy"] = args.policy
    if args.seed is not None:
        over[seed_key] = args.seed
    if args.rounds is not None:
        over["scenario.rounds" if seed_key == "scenario.seed" else "scenario.train_rounds"] = args.rounds
    return cfg.replace(**over) if over else cfg


def _stem(cfg: ScenarioConfig) -> str:
    return f"{cfg.scenario.name}_{cfg.scenario.policy}"


def cmd_train(args) -> int:
    cfg = _overrides(resolve_scenario(args.scenario), args, "scenario.train_seed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.npz"
    name = cfg.scenario.name
    if args.ipc:
        # the external agent learns and keeps its own checkpoint
        pol = IpcPolicy(connect(args.ipc, args.ipc_timeout), training=True)
        try:
            outcome = run_training(cfg, policy=pol)
        finally:
            pol.close()
        write_round_csv(out / f"{name}_train_rounds.csv", outcome.results)
        print(f"trained {outcome.rounds_run} rounds through {args.ipc}")
        return 0
    outcome = run_training(cfg)
    outcome.agent.save(ckpt)
    write_round_csv(out / f"{name}_train_rounds.csv", outcome.results)
    write_reward_curve(out / f"{name}_reward_curve.csv", outcome.agent)
    (out / f"{name}_train_status.txt").write_text(
        f"rounds={outcome.rounds_run}\nconverged={str(outcome.converged).lower()}\n"
        f"epoch={outcome.agent.epoch}\nepsilon={outcome.agent.epsilon:.6f}\n")
    if not outcome.converged:
        log.warning("reward moving average did not settle within %d rounds", outcome.rounds_run)
    print(f"trained {outcome.rounds_run} rounds, converged={outcome.converged}, checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _overrides(resolve_scenario(args.scenario), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agent, policy = None, None
    if args.ipc:
        policy = IpcPolicy(connect(args.ipc, args.ipc_timeout), name=cfg.scenario.policy)
    elif cfg.scenario.policy == "rl":
        if not args.checkpoint:
            raise SystemExit("eval with --policy rl needs --checkpoint (or --ipc)")
        agent = make_agent(cfg, cfg.scenario.seed, training=False)
        agent.load(args.checkpoint)
    trace_dir = out / "traces" if args.traces else None
    if trace_dir is not None:
        trace_dir.mkdir(exist_ok=True)
    try:
        results, summary = run_eval(cfg, agent, policy=policy, out_dir=trace_dir, traces=args.traces)
    finally:
        if policy is not None:
            policy.close()
    write_round_csv(out / f"{_stem(cfg)}_rounds.csv", results)
    table = format_summary_table([summary])
    (out / f"{_stem(cfg)}_summary.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_dump_config(args) -> int:
    sys.stdout.write(dump_config(resolve_scenario(args.scenario)))
    return 0


def cmd_report(args) -> int:
    groups: dict[tuple[str, str], list] = {}
    for d in args.inp:
        files = sorted(Path(d).glob("*_rounds.csv"))
        for f in files:
            if f.name.endswith("_train_rounds.csv"):
                continue
            for r in read_round_csv(f):
                groups.setdefault((r.scenario, r.policy), []).append(r)
    if not groups:
        raise SystemExit("no round CSVs found")
    order = {p: i for i, p in enumerate(("rl", "feedback", "fixed"))}
    summaries = [SummaryStats.from_results(groups[k])
                 for k in sorted(groups, key=lambda k: (k[0], order.get(k[1], 9), k[1]))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = format_summary_table(summaries)
    (out / "summary.txt").write_text(table)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "policy", "rounds", "metric", "mean", "min", "max", "std"])
        for s in summaries:
            for m in s.mean:
                w.writerow([s.scenario, s.policy, s.rounds, m, f"{s.mean[m]:.6f}", f"{s.min[m]:.6f}",
                            f"{s.max[m]:.6f}", f"{s.std[m]:.6f}"])
    sys.stdout.write(table)
    return 0


def cmd_agent_serve(args) -> int:
    if args.echo is not None:
        handler = EchoAgent(args.echo)
    else:
        cfg = resolve_scenario(args.scenario)
        seed = cfg.scenario.train_seed if args.seed is None else args.seed
        agent = make_agent(cfg, seed, training=False)
        if args.checkpoint and Path(args.checkpoint).is_file():
            agent.load(args.checkpoint)
        handler = RLAgentHandler(agent)
    server = AgentServer(args.ipc, handler, args.ipc_timeout)
    print(f"agent listening on {server.bound_address}", flush=True)
    try:
        for _ in range(args.sessions):
            server.serve_one()
            if args.save and args.echo is None:
                handler.agent.save(args.save)
    finally:
        server.close()
    return 1 if server.errors else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlfec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=True):
        sp.add_argument("--scenario", help="scenario .cfg path or bundled name (e.g. moon_markov5)")
        if policy:
            sp.add_argument("--policy", choices=POLICIES)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--rounds", type=int)
        sp.add_argument("--out", required=True)
        sp.add_argument("--checkpoint")
        sp.add_argument("--ipc", help="external agent at unix:/path or tcp:host:port")
        sp.add_argument("--ipc-timeout", type=float, default=DEFAULT_TIMEOUT_S)

    sp = sub.add_parser("train", help="train the RL agent and write a checkpoint")
    common(sp, policy=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="run evaluation rounds for one policy")
    common(sp)
    sp.add_argument("--traces", action="store_true", help="write per-round matrix/decision/loss traces")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("dump-config", help="print every setting with its default")
    sp.add_argument("--scenario")
    sp.set_defaults(func=cmd_dump_config)

    sp = sub.add_parser("report", help="merge round CSVs into summary tables")
    sp.add_argument("--in", dest="inp", action="append", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("agent-serve", help="host an agent behind the IPC protocol")
    sp.add_argument("--ipc", required=True)
    sp.add_argument("--scenario")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--checkpoint", help="load weights from this file if it exists")
    sp.add_argument("--save", help="write the agent checkpoint here after each session")
    sp.add_argument("--echo", type=float, help="reply with this fixed rate instead of an agent")
    sp.add_argument("--sessions", type=int, default=1)
    sp.add_argument("--ipc-timeout", type=float, default=None)
    sp.set_defaults(func=cmd_agent_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

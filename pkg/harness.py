#!/usr/bin/env python3
"""
Command-line entry point for training, evaluation, baselines, comparisons and
oracle cross-checks.

    python3 harness.py train    --config scenario.conf --seed 1 --out runs/train-1
    python3 harness.py evaluate --config scenario.conf --checkpoint runs/train-1/checkpoints/ep2000.ckpt --out runs/eval-1
    python3 harness.py baseline --config scenario.conf --policy nearest --out runs/nearest-1
    python3 harness.py compare  --config scenario.conf --checkpoint ... --out runs/compare-1 --jobs 4
    python3 harness.py oracle   --config scenario.conf --seed 3 --out runs/oracle-3

The config file holds every scenario key and every ppo_ key (see scenario.conf).
Without --config the built-in defaults are used. Any key can be overridden with
an UAVSIM_<KEY> environment variable; --seed overrides rng_seed.

Every command writes into a fresh --out directory and finishes by writing
manifest.json there; a directory that already has one is refused. Results go to
stdout as JSON, progress and problems to stderr with [info]/[warn]/[error]/
[stats]/[summary] prefixes, and the log file <out>/run-errors.log.

Exit status is 0 on success, 1 on a configuration or run error (with a JSON
object {"error", "message", "field"} on stderr) and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import subprocess
import sys
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from baselines import HeuristicPolicy, PolicyKind, policy_config
from environment import EpisodeSummary, Environment, run_episode
from objective import OUTCOME_CSV_HEADER, outcome_rows
from oracle import cross_check
from persistence import (
    Manifest,
    OutputLayout,
    config_hash,
    load_checkpoint,
    manifest_timestamp,
    save_checkpoint,
    write_csv,
    write_json,
    write_manifest,
    write_training_log,
)
from ppo_agent import PpoAgent, PpoHyperparams, StatsTracker, greedy_chooser, train
from scenario import (
    RESOURCE_TIERS,
    ConfigError,
    ScenarioConfig,
    apply_env_overrides,
    build_from_table,
    config_field_names,
    config_to_table,
    draw_radio_units,
    read_config_table,
    topology_rng,
    with_resource_tier,
)

PPO_PREFIX = "ppo_"
EVALUATION_INSTANCE = 1000
SATISFACTION_TARGET = 95.0
DEFAULT_TRACES = 10
DEFAULT_COMPARE_EPISODES = 100
DEFAULT_EVALUATION_EPISODES = 1000
GU_SWEEP = (10, 15, 20)
GRID_SWEEP = (100.0, 200.0, 400.0)
VERSION_FALLBACK = "0.1.0+unknown"

logger = logging.getLogger("uav_relay_sim")


def eprint(message: str) -> None:
    print(message, file=sys.stderr)


def configure_logger(log_path: Path, verbose: bool = False) -> logging.Logger:
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    for old in list(logger.handlers):
        logger.removeHandler(old)
        old.close()
    handler = logging.FileHandler(log_path, encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger.addHandler(handler)
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(logging.INFO if verbose else logging.WARNING)
    stream.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))
    stream.addFilter(lambda record: not getattr(record, "file_only", False))
    logger.addHandler(stream)
    return logger


def version_string() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            check=True,
        )
    except (OSError, subprocess.CalledProcessError):
        return VERSION_FALLBACK
    return result.stdout.strip() or VERSION_FALLBACK


def load_config(
    path: Optional[Path], environ: Optional[Mapping[str, str]] = None
) -> Tuple[ScenarioConfig, PpoHyperparams]:
    scenario_keys = config_field_names(ScenarioConfig)
    ppo_keys = config_field_names(PpoHyperparams, PPO_PREFIX)
    known = scenario_keys + ppo_keys
    table = read_config_table(path) if path is not None else {}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(unknown[0], f"unknown configuration key (line {table[unknown[0]][1]})")
    table = apply_env_overrides(table, known, environ)
    require_all = path is not None
    scenario = build_from_table(ScenarioConfig, table, require_all=require_all)
    hp = build_from_table(PpoHyperparams, table, PPO_PREFIX, require_all=require_all)
    return scenario, hp


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Simulate UAV-relay assisted O-RAN uplinks; train and compare association/key/trajectory policies."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=Path,
        help="Config file with one '<key> <value>' per line (default: built-in defaults).",
    )
    common.add_argument("--seed", type=int, help="Master seed; overrides rng_seed from the config.")
    common.add_argument("--out", type=Path, required=True, help="Fresh output directory for this run.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr as well.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="Train the PPO agent.")
    p_train.add_argument("--episodes", type=int, help="Training episodes (default: ppo_episodes).")
    p_train.add_argument("--uavs", type=int, help="Number of UAV relays (overrides num_uavs).")
    p_train.add_argument("--stats", action="store_true", help="Print training throughput every 60 seconds.")

    p_eval = sub.add_parser("evaluate", parents=[common], help="Evaluate a checkpoint greedily.")
    p_eval.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint written by train.")
    p_eval.add_argument(
        "--episodes", type=int, default=DEFAULT_EVALUATION_EPISODES, help="Evaluation episodes (default: 1000)."
    )
    p_eval.add_argument("--traces", type=int, default=DEFAULT_TRACES, help="Episodes to write traces for (default: 10).")

    p_base = sub.add_parser("baseline", parents=[common], help="Evaluate a heuristic policy.")
    p_base.add_argument(
        "--policy",
        choices=[kind.value for kind in PolicyKind],
        default=PolicyKind.NEAREST.value,
        help="Heuristic to run (default: nearest).",
    )
    p_base.add_argument(
        "--episodes", type=int, default=DEFAULT_EVALUATION_EPISODES, help="Evaluation episodes (default: 1000)."
    )
    p_base.add_argument("--traces", type=int, default=DEFAULT_TRACES, help="Episodes to write traces for (default: 10).")
    p_base.add_argument("--shuffle", action="store_true", help="Seeded random GU contention order.")

    p_cmp = sub.add_parser("compare", parents=[common], help="RL vs heuristics over sweeps.")
    p_cmp.add_argument("--checkpoint", type=Path, help="Checkpoint reused in cells whose shapes match it.")
    p_cmp.add_argument(
        "--episodes", type=int, default=DEFAULT_COMPARE_EPISODES, help="Evaluation episodes per cell (default: 100)."
    )
    p_cmp.add_argument("--train-episodes", type=int, help="Episodes for cells trained from scratch (default: ppo_episodes).")
    p_cmp.add_argument(
        "--sweeps",
        nargs="+",
        choices=("gus", "tiers", "grid", "uavs"),
        default=["gus", "tiers", "grid"],
        help="Sweep axes to run (default: gus tiers grid).",
    )
    p_cmp.add_argument("--uavs", type=int, nargs="+", default=[3, 4, 5, 6], help="UAV counts for the uavs sweep.")
    p_cmp.add_argument("--jobs", type=int, default=1, help="Sweep cells run in parallel (default: 1).")

    p_oracle = sub.add_parser("oracle", parents=[common], help="Cross-check the evaluator against brute force.")
    p_oracle.add_argument("--instances", type=int, default=50, help="Random tiny instances (default: 50).")
    p_oracle.add_argument("--gae-episodes", type=int, default=100, help="Random GAE episodes (default: 100).")
    return parser.parse_args(argv)


# Metrics


def aggregate(summaries: Sequence[EpisodeSummary]) -> Dict[str, object]:
    returns = np.asarray([s.episode_return for s in summaries], dtype=np.float64)
    violations: Dict[str, int] = {}
    violating: Dict[str, int] = {}
    opportunities: Dict[str, int] = {}
    for summary in summaries:
        for family, count in summary.violations.items():
            violations[family] = violations.get(family, 0) + count
        for family, count in summary.violating.items():
            violating[family] = violating.get(family, 0) + count
        for family, count in summary.opportunities.items():
            opportunities[family] = opportunities.get(family, 0) + count
    satisfaction = [
        {
            "constraint": family,
            "satisfaction_pct": 100.0 * (1.0 - violating[family] / total) if total else 100.0,
            "target_pct": SATISFACTION_TARGET,
            "opportunities": total,
        }
        for family, total in opportunities.items()
    ]

    def mean(values: Iterable[float]) -> float:
        values = list(values)
        return float(np.mean(values)) if values else 0.0

    result: Dict[str, object] = {
        "episodes": len(summaries),
        "steps": sum(s.steps for s in summaries),
        "mean_latency_norm": mean(s.mean_latency_norm for s in summaries),
        "mean_security_norm": mean(s.mean_security_norm for s in summaries),
        "mean_energy_norm": mean(s.mean_energy_norm for s in summaries),
        "mean_objective": mean(s.objective for s in summaries),
        "mean_disconnected": mean(s.disconnected for s in summaries),
        "violations": violations,
        "satisfaction": satisfaction,
        "mean_satisfaction_pct": mean(row["satisfaction_pct"] for row in satisfaction),
    }
    if len(returns):
        result["return"] = {
            "mean": float(returns.mean()),
            "std": float(returns.std()),
            "min": float(returns.min()),
            "p5": float(np.percentile(returns, 5)),
            "median": float(np.median(returns)),
            "p95": float(np.percentile(returns, 95)),
            "max": float(returns.max()),
        }
    return result


def evaluate_policy(
    env: Environment,
    choose,
    policy: str,
    seed: int,
    episodes: int,
    layout: Optional[OutputLayout],
    cfg_hash: str,
    traces: int = 0,
) -> List[EpisodeSummary]:
    summaries: List[EpisodeSummary] = []
    for episode in range(episodes):
        transitions, summary = run_episode(env, choose, policy, seed=seed, episode=episode)
        summaries.append(summary)
        if layout is not None and episode < traces:
            rows = (row for t in transitions for row in outcome_rows(episode, t.outcome))
            write_csv(layout.trace(episode, policy), OUTCOME_CSV_HEADER, rows, cfg_hash, seed, policy=policy)
            episode_summary = dict(summary.as_dict(), config_hash=cfg_hash, seed=seed)
            write_json(layout.trace(episode, policy, ".json"), episode_summary)
    return summaries


# Subcommands


@dataclass
class RunContext:
    args: argparse.Namespace
    config: ScenarioConfig
    hp: PpoHyperparams
    seed: int
    layout: OutputLayout
    cfg_hash: str

    def finish(self, subcommand: str, summary: Dict[str, object]) -> None:
        summary = dict(summary, config_hash=self.cfg_hash, seed=self.seed)
        write_json(self.layout.summary, summary)
        snapshot = config_to_table(self.config)
        snapshot.update({PPO_PREFIX + k: v for k, v in config_to_table(self.hp).items()})
        write_manifest(
            self.layout.root,
            Manifest(
                subcommand=subcommand,
                config=snapshot,
                config_hash=self.cfg_hash,
                seed=self.seed,
                version=version_string(),
                timestamp=manifest_timestamp(),
            ),
        )
        print(json.dumps(summary, sort_keys=True, indent=2))


def cmd_train(ctx: RunContext) -> int:
    config, hp = ctx.config, ctx.hp
    stats = StatsTracker(ctx.args.stats)

    def sink(episode: int, agent: PpoAgent) -> None:
        save_checkpoint(ctx.layout.checkpoint(episode), agent.export_parameters(), ctx.cfg_hash)

    agent, log = train(lambda index: Environment(config, index), hp, ctx.seed, sink, stats)
    write_training_log(ctx.layout.training_log, log, ctx.cfg_hash, ctx.seed)
    window = max(1, len(log) // 10)
    rewards = [r.cum_reward for r in log]
    penalties = [r.cum_penalty for r in log]
    summary = {
        "episodes": len(log),
        "first_window_reward": float(np.mean(rewards[:window])) if log else 0.0,
        "final_window_reward": float(np.mean(rewards[-window:])) if log else 0.0,
        "first_window_penalty": float(np.mean(penalties[:window])) if log else 0.0,
        "final_window_penalty": float(np.mean(penalties[-window:])) if log else 0.0,
        "final_checkpoint": ctx.layout.checkpoint(agent.episodes_trained).relative_to(ctx.layout.root).as_posix(),
    }
    eprint(
        f"[summary] {len(log)} episodes; reward {summary['first_window_reward']:.4f} -> "
        f"{summary['final_window_reward']:.4f}; penalty {summary['first_window_penalty']:.4f} -> "
        f"{summary['final_window_penalty']:.4f}"
    )
    ctx.finish("train", summary)
    return 0


def cmd_evaluate(ctx: RunContext) -> int:
    env = Environment(ctx.config, EVALUATION_INSTANCE)
    params = load_checkpoint(ctx.args.checkpoint, env.spec)
    agent = PpoAgent.from_parameters(params, env.spec)
    summaries = evaluate_policy(
        env, greedy_chooser(agent), "rl", ctx.seed, ctx.args.episodes, ctx.layout, ctx.cfg_hash, ctx.args.traces
    )
    metrics = aggregate(summaries)
    metrics["checkpoint_episodes"] = params.episodes
    _report_satisfaction(metrics)
    ctx.finish("evaluate", metrics)
    return 0


def cmd_baseline(ctx: RunContext) -> int:
    kind = PolicyKind(ctx.args.policy)
    config = policy_config(kind, ctx.config)
    policy = HeuristicPolicy.create(kind.value, ctx.seed, ctx.args.shuffle)
    env = Environment(config, EVALUATION_INSTANCE)
    summaries = evaluate_policy(
        env, policy.chooser(), kind.value, ctx.seed, ctx.args.episodes, ctx.layout, ctx.cfg_hash, ctx.args.traces
    )
    metrics = aggregate(summaries)
    metrics["policy"] = kind.value
    _report_satisfaction(metrics)
    ctx.finish("baseline", metrics)
    return 0


def _report_satisfaction(metrics: Mapping[str, object]) -> None:
    for row in metrics["satisfaction"]:
        eprint(
            f"[summary] {row['constraint']}: {row['satisfaction_pct']:.2f}% satisfied "
            f"(target {row['target_pct']:.0f}%)"
        )


@dataclass(frozen=True)
class CompareCell:
    axis: str
    value: str
    config: ScenarioConfig
    hp: PpoHyperparams
    seed: int
    episodes: int
    checkpoint: Optional[Path]
    cell_dir: Path
    fixed_orus: Optional[tuple] = None


def compare_cells(ctx: RunContext) -> List[CompareCell]:
    args, config = ctx.args, ctx.config
    hp = ctx.hp
    if args.train_episodes is not None:
        hp = dataclasses.replace(hp, episodes=args.train_episodes)
    cells: List[CompareCell] = []

    def cell(axis: str, value: object, cfg: ScenarioConfig, orus: Optional[tuple] = None) -> None:
        cells.append(
            CompareCell(
                axis, str(value), cfg, hp, ctx.seed, args.episodes, args.checkpoint,
                ctx.layout.root / "cells" / f"{axis}-{value}", orus,
            )
        )

    if "gus" in args.sweeps:
        for count in GU_SWEEP:
            cell("gus", count, config.replace(num_gus=count))
    if "tiers" in args.sweeps:
        for tier in RESOURCE_TIERS:
            cell("tiers", tier, with_resource_tier(config, tier))
    if "grid" in args.sweeps:
        orus = tuple(draw_radio_units(config, topology_rng(config.rng_seed)))
        for side in GRID_SWEEP:
            cell("grid", int(side), config.replace(grid_width=side, grid_height=side), orus)
    if "uavs" in args.sweeps:
        for count in args.uavs:
            cell("uavs", count, config.replace(num_uavs=count))
    return cells


def run_compare_cell(cell: CompareCell) -> List[Dict[str, object]]:
    """One isolated (config, seed) job; returns one row per policy."""
    cell.cell_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(cell.config, cell.hp)
    rows: List[Dict[str, object]] = []
    for kind in (PolicyKind.NEAREST, PolicyKind.NO_UAV):
        cfg = policy_config(kind, cell.config)
        env = Environment(cfg, EVALUATION_INSTANCE, cell.fixed_orus)
        policy = HeuristicPolicy.create(kind.value, cell.seed)
        summaries = evaluate_policy(env, policy.chooser(), kind.value, cell.seed, cell.episodes, None, cfg_hash)
        rows.append(dict(aggregate(summaries), policy=kind.value))

    env = Environment(cell.config, EVALUATION_INSTANCE, cell.fixed_orus)
    agent: Optional[PpoAgent] = None
    source = "trained"
    if cell.checkpoint is not None:
        params = load_checkpoint(cell.checkpoint)
        if params.head_sizes == env.spec.head_sizes():
            agent = PpoAgent.from_parameters(params, env.spec)
            source = "checkpoint"
    if agent is None:
        agent, log = train(
            lambda index: Environment(cell.config, index, cell.fixed_orus), cell.hp, cell.seed
        )
        write_training_log(cell.cell_dir / "training_log.csv", log, cfg_hash, cell.seed)
    summaries = evaluate_policy(env, greedy_chooser(agent), "rl", cell.seed, cell.episodes, None, cfg_hash)
    rows.append(dict(aggregate(summaries), policy="rl", rl_source=source))
    for row in rows:
        row.update(axis=cell.axis, value=cell.value, config_hash=cfg_hash, seed=cell.seed)
    write_json(cell.cell_dir / "metrics.json", rows)
    return rows


COMPARE_HEADER = (
    "axis", "value", "policy", "mean_latency_norm", "mean_security_norm", "mean_energy_norm",
    "mean_return", "mean_disconnected", "mean_satisfaction_pct",
)


def cmd_compare(ctx: RunContext) -> int:
    cells = compare_cells(ctx)
    if ctx.args.jobs > 1:
        with Pool(ctx.args.jobs) as pool:
            results = pool.map(run_compare_cell, cells)
    else:
        results = [run_compare_cell(cell) for cell in cells]
    tables: Dict[str, List[Tuple[object, ...]]] = {}
    for rows in results:
        for row in rows:
            tables.setdefault(row["axis"], []).append(
                (
                    row["axis"], row["value"], row["policy"], row["mean_latency_norm"],
                    row["mean_security_norm"], row["mean_energy_norm"],
                    row.get("return", {}).get("mean", math.nan), row["mean_disconnected"],
                    row["mean_satisfaction_pct"],
                )
            )
    for axis, rows in tables.items():
        write_csv(ctx.layout.metrics(f"compare_{axis}.csv"), COMPARE_HEADER, rows, ctx.cfg_hash, ctx.seed)
        for row in rows:
            eprint(
                f"[summary] {axis}={row[1]} {row[2]}: latency {row[3]:.4f} security {row[4]:.4f} "
                f"disconnected {row[7]:.2f}"
            )
    ctx.finish("compare", {"cells": [row for rows in results for row in rows]})
    return 0


def cmd_oracle(ctx: RunContext) -> int:
    report = cross_check(ctx.config, ctx.seed, ctx.args.instances, ctx.args.gae_episodes)
    for result in report.invariants:
        status = "PASS" if result.passed else "FAIL"
        eprint(f"[info] {status} {result.name} ({result.checked} checked)")
        for failure in result.failures:
            eprint(f"[error] {result.name}: {failure}")
    write_json(ctx.layout.metrics("oracle_report.json"), dict(report.as_dict(), config_hash=ctx.cfg_hash, seed=ctx.seed))
    ctx.finish("oracle", {"passed": report.passed, "invariants": [r.as_dict() for r in report.invariants]})
    return 0 if report.passed else 1


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
}


def error_json(exc: BaseException) -> str:
    return json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "field": getattr(exc, "field", None)},
        sort_keys=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        config, hp = load_config(args.config)
        if args.seed is not None:
            config = config.replace(rng_seed=args.seed)
        if args.command == "train":
            if args.uavs is not None:
                config = config.replace(num_uavs=args.uavs)
            if args.episodes is not None:
                hp = dataclasses.replace(hp, episodes=args.episodes)
        layout = OutputLayout(args.out)
        layout.prepare()
        configure_logger(layout.log, args.verbose)
        ctx = RunContext(args, config, hp, config.rng_seed, layout, config_hash(config, hp))
        logger.info("%s: seed %d, config hash %s", args.command, ctx.seed, ctx.cfg_hash)
        return COMMANDS[args.command](ctx)
    except (ValueError, RuntimeError, OSError) as exc:
        if logger.handlers:
            logger.error("%s failed: %s", args.command, exc, extra={"file_only": True})
        eprint(error_json(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())

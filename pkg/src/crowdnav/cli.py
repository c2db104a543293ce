"""Command-line entry point: ``crowdnav <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Errors also print a
single JSON line ``{"error": ..., "kind": ...}`` on standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from crowdnav.env import CurriculumState, EnvConfig, TaskKind, random_scenario
from crowdnav.evaluation import ScenarioGenerator, run_batch, run_episode, vip_series
from crowdnav.export import (
    save_record,
    load_record,
    write_curve_csv,
    write_episodes_csv,
    write_series_csv,
    write_summary_csv,
    write_svg,
)
from crowdnav.learner import NetworkSpec, TrainConfig, save_checkpoint, train
from crowdnav.observation import OBS_DIM, AgentVariant, obs_layout
from crowdnav.policies import make_policy
from crowdnav.reward import RewardConfig
from crowdnav.scenario_io import load_scenario, save_scenario

log = logging.getLogger("crowdnav")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_seeds(text: str, n: int) -> list[int]:
    """``"5"`` (start, n consecutive), ``"0..9"`` (inclusive range) or ``"1,4,9"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(t) for t in text.split("..", 1))
        seeds = list(range(lo, hi + 1))
    elif "," in text:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    else:
        seeds = list(range(int(text), int(text) + n))
    if len(seeds) != n:
        raise UsageError(f"--seeds gives {len(seeds)} seeds for {n} episodes")
    return seeds


def _env_config(variant: str, timeout: float | None = None) -> EnvConfig:
    cfg = EnvConfig(variant=AgentVariant(variant))
    if timeout is not None:
        steps = int(round(timeout / cfg.dt))
        cfg = dataclasses.replace(cfg, reward=dataclasses.replace(cfg.reward, step_max=steps))
    return cfg


def _variant_for(policy, requested):
    """The policy's own variant wins unless one was asked for explicitly."""
    if requested is not None:
        return requested
    own = getattr(policy, "variant", None)
    return own.value if own is not None else AgentVariant.COMPLETE.value


# --- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> dict:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    policy = make_policy(args.policy)
    env_config = _env_config(_variant_for(policy, args.variant), args.timeout)
    record = run_episode(scenario, policy, env_config)
    out = {
        "outcome": record.outcome,
        "steps": record.steps,
        "sim_time": record.wall_time,
        "path_length": record.path_length,
        "return": float(record.rewards.sum()),
    }
    if args.record:
        d = Path(args.record)
        save_record(d / f"episode_{scenario.seed}.json", record)
        write_svg(d / f"episode_{scenario.seed}.svg", record)
        if scenario.task_kind is not TaskKind.POINT:
            write_series_csv(d / f"episode_{scenario.seed}_vip.csv", vip_series(record), record.flags)
    return out


def cmd_eval(args) -> dict:
    gen = ScenarioGenerator.parse(args.scenario_gen)
    seeds = parse_seeds(args.seeds, args.episodes)
    policy = make_policy(args.policy)
    env_config = _env_config(_variant_for(policy, args.variant), args.timeout)
    t0 = time.perf_counter()
    # names are rebuilt in each worker; checkpoints and baselines alike
    records, summary = run_batch(gen, args.policy, args.episodes, seeds, env_config, workers=args.workers)
    elapsed = time.perf_counter() - t0
    out_dir = Path(args.out)
    write_summary_csv(out_dir / "summary.csv", {getattr(policy, "name", args.policy): summary})
    write_episodes_csv(out_dir / "episodes.csv", records)
    for r in records[: args.svg]:
        write_svg(out_dir / f"episode_{r.seed}.svg", r)
    return {**summary.as_row(), "elapsed_s": elapsed}


def _load_train_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    known = {"seed", "variant", "scenario", "curriculum", "network", "train", "timeout"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return raw


class _TrainScenarios:
    """``(n_obstacles, seed) -> Scenario``; a fixed count unless curriculum is on."""

    def __init__(self, gen: ScenarioGenerator, curriculum: bool):
        self.gen = gen
        self.curriculum = curriculum

    def __call__(self, n_obstacles, seed):
        n = n_obstacles if self.curriculum else self.gen.obstacles
        g = self.gen
        return random_scenario(n, TaskKind(g.task), seed, width=g.width, height=g.height, n_static=g.n_static, profile=g.profile)


def cmd_train(args) -> dict:
    raw = _load_train_config(args.config)
    gen = ScenarioGenerator(**raw.get("scenario", {}))
    spec = NetworkSpec(**raw.get("network", {}))
    cfg = TrainConfig(**raw.get("train", {}))
    variant = AgentVariant(raw.get("variant", "complete"))
    env_config = _env_config(variant.value, raw.get("timeout"))
    cur = raw.get("curriculum", False)
    curriculum = CurriculumState(**cur) if isinstance(cur, dict) else CurriculumState()
    t0 = time.perf_counter()
    result = train(_TrainScenarios(gen, bool(cur)), spec, cfg, int(raw.get("seed", 0)), env_config, curriculum)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "policy.ckpt", spec, result.best_params, variant)
    save_checkpoint(out / "last.ckpt", spec, result.params, variant)
    write_curve_csv(out / "curve.csv", result.curve)
    return {
        "episodes": len(result.curve),
        "best_success_rate": result.best_success_rate,
        "checkpoint": str(out / "policy.ckpt"),
        "elapsed_s": time.perf_counter() - t0,
    }


def cmd_gen_scenario(args) -> dict:
    s = random_scenario(
        args.obstacles, TaskKind(args.task), args.seed, width=args.width, height=args.height,
        n_static=args.static, profile=args.profile,
    )
    save_scenario(s, args.out)
    return {"scenario": args.out, "pedestrians": len(s.pedestrians)}


def cmd_obs_layout(args) -> None:
    rows = obs_layout()
    w = max(len(r[0]) for r in rows)
    print(f"{'field':<{w}}  offset  length")
    for name, off, n in rows:
        print(f"{name:<{w}}  {off:>6}  {n:>6}")
    print(f"{'total':<{w}}  {'':>6}  {sum(r[2] for r in rows):>6}")
    assert sum(r[2] for r in rows) == OBS_DIM


def cmd_replay(args) -> dict:
    record = load_record(args.record)
    write_svg(args.out, record)
    return {"svg": args.out, "outcome": record.outcome}


# --- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crowdnav", description="Crowd navigation simulator, learner and evaluation harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    variants = [v.value for v in AgentVariant]

    s = sub.add_parser("simulate", help="run one episode and print its outcome")
    s.add_argument("--scenario", required=True)
    s.add_argument("--policy", default="greedy-goal")
    s.add_argument("--seed", type=int)
    s.add_argument("--record", metavar="DIR")
    s.add_argument("--variant", choices=variants)
    s.add_argument("--timeout", type=float, help="episode cap in simulated seconds")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a policy from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, metavar="DIR")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="batch evaluation with summary CSV")
    e.add_argument("--scenario-gen", default="obstacles=20,task=point,profile=random")
    e.add_argument("--policy", default="greedy-goal")
    e.add_argument("--episodes", type=int, default=500)
    e.add_argument("--seeds", default="0", help="start seed, A..B or a comma list")
    e.add_argument("--out", default="eval_out", metavar="DIR")
    e.add_argument("--svg", type=int, default=0, metavar="N", help="write SVGs for the first N episodes")
    e.add_argument("--workers", type=int)
    e.add_argument("--variant", choices=variants)
    e.add_argument("--timeout", type=float, default=180.0, help="episode cap in simulated seconds")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-scenario", help="write a random scenario file")
    g.add_argument("--obstacles", type=int, required=True)
    g.add_argument("--task", choices=[k.value for k in TaskKind], default="point")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=float, default=20.0)
    g.add_argument("--height", type=float, default=20.0)
    g.add_argument("--static", type=int, default=0)
    g.add_argument("--profile", choices=["random", "crowd", "running"], default="random")
    g.set_defaults(func=cmd_gen_scenario)

    o = sub.add_parser("obs-layout", help="print the observation layout table")
    o.set_defaults(func=cmd_obs_layout)

    r = sub.add_parser("replay", help="render a recorded episode to SVG")
    r.add_argument("--record", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_replay)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": message, "kind": kind}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 1)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result = args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 1)
    except (OSError, ValueError, RuntimeError, KeyError, TypeError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    if result is not None:
        print(json.dumps(result))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

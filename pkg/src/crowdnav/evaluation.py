"""Episode recording, batch evaluation and summary metrics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from crowdnav.env import CrowdNavEnv, EnvConfig, Scenario, TaskKind, random_scenario
from crowdnav.policies import check_variant, make_policy

OUTCOMES = ("success", "collision", "timeout")


@dataclass(eq=False)
class EpisodeRecord:
    """Everything needed to plot or re-score one episode.

    Per-state arrays have ``steps + 1`` rows (row 0 is the reset state);
    per-transition arrays (rewards, reward terms) have ``steps`` rows.
    """

    seed: int
    task_kind: str
    dt: float
    outcome: str
    times: np.ndarray
    robot_pose: np.ndarray
    robot_velocity: np.ndarray
    flags: np.ndarray
    goal_none: np.ndarray
    vip_position: np.ndarray
    vip_velocity: np.ndarray
    d_rp: np.ndarray
    rewards: np.ndarray
    reward_terms: np.ndarray
    ped_ids: np.ndarray
    ped_positions: np.ndarray
    end_goal: tuple
    bounds: tuple
    walls: np.ndarray
    circles: np.ndarray
    wall_time: float = 0.0
    path_length: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class MetricsSummary:
    episodes: int
    success_rate: float
    collision_rate: float
    timeout_rate: float
    mean_time_to_goal: float  # successes only; nan without successes
    mean_path_length: float  # successes only

    def as_row(self) -> dict:
        return {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "collision_rate": self.collision_rate,
            "timeout_rate": self.timeout_rate,
            "mean_time_to_goal": self.mean_time_to_goal,
            "mean_path_length": self.mean_path_length,
        }


def path_length(positions: np.ndarray) -> float:
    d = np.diff(np.asarray(positions, dtype=float), axis=0)
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def run_episode(scenario: Scenario, policy, env_config: EnvConfig = EnvConfig(), max_steps: Optional[int] = None):
    """Roll one episode out and record it."""
    check_variant(policy, env_config.variant)
    env = CrowdNavEnv(env_config)
    obs = env.reset(scenario)
    policy.reset(scenario.seed)
    ids = np.array([p.id for p in env.peds], dtype=int)

    poses, vels, flags, none, vip_p, vip_v, drp, peds = [], [], [], [], [], [], [], []
    rewards, terms = [], []

    def snapshot(d_rp):
        r = env.robot
        poses.append(r.pose)
        vels.append((r.linear_velocity, r.angular_velocity))
        flags.append(env.assignment.flag)
        none.append(env.assignment.goal is None)
        vip = env.vip
        vip_p.append(tuple(vip.position) if vip is not None else (math.nan, math.nan))
        vip_v.append(tuple(vip.velocity) if vip is not None else (math.nan, math.nan))
        if d_rp is None and vip is not None:
            d_rp = float(np.hypot(*(vip.position - r.position)))
        drp.append(math.nan if d_rp is None else d_rp)
        peds.append([p.position for p in env.peds] if env.peds else np.zeros((0, 2)))

    snapshot(None)
    outcome = "timeout"
    while True:
        res = env.step(policy(obs))
        obs = res.observation
        rewards.append(res.reward)
        terms.append(res.terms.as_tuple())
        snapshot(res.info["d_rp"])
        if res.done or (max_steps is not None and env.step_count >= max_steps):
            outcome = res.done_reason if res.done else "timeout"
            break

    n = len(rewards)
    pose = np.array(poses)
    return EpisodeRecord(
        seed=int(scenario.seed),
        task_kind=scenario.task_kind.value,
        dt=env_config.dt,
        outcome=outcome,
        times=np.arange(n + 1) * env_config.dt,
        robot_pose=pose,
        robot_velocity=np.array(vels),
        flags=np.array(flags, dtype=int),
        goal_none=np.array(none, dtype=bool),
        vip_position=np.array(vip_p),
        vip_velocity=np.array(vip_v),
        d_rp=np.array(drp),
        rewards=np.array(rewards),
        reward_terms=np.array(terms).reshape(n, 5),
        ped_ids=ids,
        ped_positions=np.array(peds).reshape(n + 1, len(ids), 2),
        end_goal=tuple(scenario.end_goal),
        bounds=tuple(scenario.map.bounds),
        walls=scenario.map.walls.copy(),
        circles=scenario.map.static_obstacles.copy(),
        wall_time=n * env_config.dt,
        path_length=path_length(pose[:, :2]),
    )


def summarize(records: Sequence) -> MetricsSummary:
    """Rates over all episodes; time and path length averaged over successes only.

    Accepts anything with ``outcome``, ``wall_time`` and ``path_length``.
    """
    n = len(records)
    if n == 0:
        raise ValueError("no episodes to summarise")
    counts = {k: 0 for k in OUTCOMES}
    for r in records:
        if r.outcome not in counts:
            raise ValueError(f"unknown outcome {r.outcome!r}")
        counts[r.outcome] += 1
    wins = [r for r in records if r.outcome == "success"]
    return MetricsSummary(
        episodes=n,
        success_rate=counts["success"] / n,
        collision_rate=counts["collision"] / n,
        timeout_rate=counts["timeout"] / n,
        mean_time_to_goal=math.fsum(r.wall_time for r in wins) / len(wins) if wins else math.nan,
        mean_path_length=math.fsum(r.path_length for r in wins) / len(wins) if wins else math.nan,
    )


@dataclass(frozen=True)
class ScenarioGenerator:
    """Picklable ``seed -> Scenario`` factory around :func:`random_scenario`."""

    obstacles: int = 20
    task: str = "point"
    profile: str = "random"
    width: float = 20.0
    height: float = 20.0
    n_static: int = 0

    @classmethod
    def parse(cls, text: str) -> "ScenarioGenerator":
        """Parse ``key=value`` pairs, e.g. ``"obstacles=20,task=point,profile=crowd"``."""
        kwargs = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = part.partition("=")
            if not sep or key not in cls.__dataclass_fields__:
                raise ValueError(f"bad scenario generator field {part!r}")
            typ = cls.__dataclass_fields__[key].type
            kwargs[key] = {"int": int, "float": float}.get(typ, str)(value)
        return cls(**kwargs)

    def __call__(self, seed: int) -> Scenario:
        return random_scenario(
            self.obstacles, TaskKind(self.task), seed, width=self.width, height=self.height,
            n_static=self.n_static, profile=self.profile,
        )


def _worker(args):
    scenario_gen, policy, env_config, seed, max_steps = args
    if isinstance(policy, str):
        policy = make_policy(policy)
    return run_episode(scenario_gen(seed), policy, env_config, max_steps)


def default_workers() -> int:
    cap = os.environ.get("CROWDNAV_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def run_batch(
    scenario_gen: Callable[[int], Scenario],
    policy,
    n_episodes: int,
    seeds: Optional[Sequence[int]] = None,
    env_config: EnvConfig = EnvConfig(),
    workers: Optional[int] = None,
    max_steps: Optional[int] = None,
):
    """Run ``n_episodes`` episodes and return ``(records, summary)`` in seed order.

    ``policy`` is a policy object or a name understood by
    :func:`crowdnav.policies.make_policy`; names are rebuilt in each worker.
    ``CROWDNAV_THREADS`` caps the worker count.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = list(range(n_episodes)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != n_episodes:
        raise ValueError(f"{len(seeds)} seeds for {n_episodes} episodes")
    check_variant(make_policy(policy) if isinstance(policy, str) else policy, env_config.variant)
    workers = default_workers() if workers is None else workers
    cap = os.environ.get("CROWDNAV_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    jobs = [(scenario_gen, policy, env_config, s, max_steps) for s in seeds]
    if workers <= 1:
        records = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return records, summarize(records)


@dataclass
class VipSeries:
    time: np.ndarray
    d_rp: np.ndarray
    v_robot: np.ndarray
    v_vip: np.ndarray
    task2_onset: Optional[float] = None
    flag_changes: list = field(default_factory=list)  # (time, new flag)


def vip_series(record: EpisodeRecord) -> VipSeries:
    """Robot/VIP distance and speeds over time, with task-stage markers."""
    if record.task_kind == TaskKind.POINT.value or np.all(np.isnan(record.d_rp)):
        raise ValueError("record has no VIP (point-to-point episode)")
    flags = record.flags
    onset = np.flatnonzero(np.isin(flags, (2, 4)))
    changes = [(float(record.times[i]), int(flags[i])) for i in range(1, len(flags)) if flags[i] != flags[i - 1]]
    vv = record.vip_velocity
    return VipSeries(
        time=record.times.copy(),
        d_rp=record.d_rp.copy(),
        v_robot=record.robot_velocity[:, 0].copy(),
        v_vip=np.hypot(vv[:, 0], vv[:, 1]),
        task2_onset=float(record.times[onset[0]]) if len(onset) else None,
        flag_changes=changes,
    )

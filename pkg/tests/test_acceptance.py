"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured numbers
and then asserts. Criteria 8 and 10 take several minutes each.
"""

import dataclasses
import json
import math
import os
import time

import numpy as np
import pytest

from crowdnav.cli import main as cli_main
from crowdnav.env import Action, CrowdNavEnv, EnvConfig, Scenario, TaskKind, random_scenario
from crowdnav.evaluation import run_batch, run_episode
from crowdnav.export import record_to_dict
from crowdnav.learner import NetworkSpec, TrainConfig, td_loss_and_grads, train
from crowdnav.observation import (
    FRAME_DIM,
    LIDAR_DIM,
    N_FRAMES,
    OBS_DIM,
    PED_INDEX,
    SAFETY_INDEX,
    STATE_INDEX,
    VIP_INDEX,
    AgentVariant,
    apply_variant_mask,
)
from crowdnav.pedsim import (
    Pedestrian,
    ScriptEntry,
    SocialState,
    StateScript,
    TimeTrigger,
    social_forces,
    step_pedestrians,
)
from crowdnav.policies import GreedyGoalPolicy, RandomPolicy
from crowdnav.tasks import select_goal_following, select_goal_guiding
from crowdnav.world import LidarConfig, RobotState, WorldMap, raycast, wrap_angle
from oracles import STATE_NAMES, human_following_alg, lidar_oracle, robot_following_alg
from test_learner import numeric_grads, rand_batch, rand_params
from test_observation import _rot, angle_fields, build_obs
from test_reward import CASES, FUNCS, ctx


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


def with_step_max(cfg: EnvConfig, steps: int) -> EnvConfig:
    return dataclasses.replace(cfg, reward=dataclasses.replace(cfg.reward, step_max=steps))


# 1 -----------------------------------------------------------------------------


def test_c1_reward_conformance(capsys):
    table_bad = [name for name, kw, term, want in CASES if abs(FUNCS[term](ctx(**kw)) - want) > 1e-12]
    steps = violations = 0
    cfg = with_step_max(EnvConfig(), 300)
    for seed in range(100):
        scenario = random_scenario(6, ["point", "guiding", "following"][seed % 3], seed, width=10, height=10)
        policy = RandomPolicy()
        policy.reset(seed)
        env = CrowdNavEnv(cfg)
        obs = env.reset(scenario)
        done = False
        while not done:
            r = env.step(policy(obs))
            t = r.terms
            if r.reward != t.r_success + t.r_collision + t.r_distance + t.r_static_safety + t.r_dynamic_safety:
                violations += 1
            obs, done = r.observation, r.done
            steps += 1
    ok = len(CASES) >= 20 and not table_bad and violations == 0
    report(
        capsys, "C1 reward conformance", ok,
        f"{len(CASES)} table cases, {len(table_bad)} off by >1e-12; additivity violated on {violations}/{steps} steps "
        "over 100 episodes",
    )


# 2 -----------------------------------------------------------------------------


def test_c2_state_machine_oracle(capsys):
    robot, end = RobotState(position=(0, 0)), (9.0, 9.0)
    distances = [0.5 * k for k in range(1, 17)]
    total = agree = 0

    def norm(a):
        goal = a.goal.ped_id if hasattr(a.goal, "ped_id") else a.goal
        return a.flag, goal

    for state in SocialState:
        for d in distances:
            peds = [Pedestrian(0, (d, 0.0), state=state)]
            ora = [{"id": 0, "state": STATE_NAMES[int(state)], "x": d, "y": 0.0}]
            for impl, oracle in ((select_goal_guiding, robot_following_alg), (select_goal_following, human_following_alg)):
                total += 1
                agree += norm(impl(peds, robot, end)) == oracle(ora, (0, 0), end)
    ok = agree == total == 9 * 16 * 2
    report(capsys, "C2 task state machines vs literal oracle", ok, f"{agree}/{total} grid cells agree (9 states x 16 distances x 2 tasks)")


# 3 -----------------------------------------------------------------------------


def _global(frame_relative):
    return (LIDAR_DIM + FRAME_DIM * np.arange(N_FRAMES)[:, None] + np.asarray(frame_relative)[None, :]).ravel()


GOAL_INDEX = _global([0, 1])


def test_c3_observation_contract(capsys):
    rng = np.random.default_rng(2024)
    world = WorldMap.rectangle(20, 20)
    cases = failures = 0
    messages = []
    for n in range(31):
        for variant in AgentVariant:
            for _ in range(10):
                peds = [Pedestrian(i, rng.uniform(1, 19, 2), velocity=rng.uniform(-0.5, 0.5, 2),
                                   state=SocialState(int(rng.integers(9)))) for i in range(n)]
                vip = 0 if n and rng.random() < 0.5 else None
                goal = None if rng.random() < 0.2 else tuple(rng.uniform(1, 19, 2))
                robot = RobotState(position=rng.uniform(2, 18, 2), heading=rng.uniform(-math.pi, math.pi))
                o = build_obs(robot, peds, goal, vip, world, variant)
                cases += 1
                checks = {
                    "length": o.shape == (OBS_DIM,),
                    "finite": bool(np.all(np.isfinite(o))),
                    "idempotent": np.array_equal(apply_variant_mask(o, variant), o),
                    "vip sentinel": (vip is not None and variant is not AgentVariant.RAW) or np.all(o[VIP_INDEX] == -1),
                    "ped sentinel": (n > 0 and variant is not AgentVariant.RAW) or np.all(o[PED_INDEX] == -1),
                    "goal sentinel": goal is not None or np.all(o[GOAL_INDEX] == -1),
                    "state mask": variant not in (AgentVariant.SAFE_ZONE, AgentVariant.RAW)
                    or np.all(o[_global(STATE_INDEX)] == -1),
                    "safety mask": variant not in (AgentVariant.NO_SAFE_ZONE, AgentVariant.RAW)
                    or np.all(o[_global(SAFETY_INDEX)] == -1),
                }
                bad = [k for k, v in checks.items() if not v]
                if bad:
                    failures += 1
                    messages.append((n, variant.value, bad))

    # rotating the scene together with the robot heading leaves the observation unchanged
    rot_cases = rot_fail = 0
    ang = angle_fields()
    rest = np.setdiff1d(np.arange(OBS_DIM), ang)
    for _ in range(250):
        a, heading = rng.uniform(-math.pi, math.pi, 2)
        rows = rng.uniform(-4, 4, size=(int(rng.integers(0, 10)), 4)) * [1, 1, 0.125, 0.125]
        variant = list(AgentVariant)[int(rng.integers(4))]

        def scene(alpha):
            peds = [Pedestrian(i, _rot(r[:2], alpha), velocity=_rot(r[2:], alpha), state=SocialState(i % 9))
                    for i, r in enumerate(rows)]
            robot = RobotState(position=(0, 0), heading=wrap_angle(heading + alpha))
            m = WorldMap((-30, -30, 30, 30), static_obstacles=[[*_rot((2.0, 1.0), alpha), 0.4]])
            return build_obs(robot, peds, tuple(_rot((3.0, -2.0), alpha)), 0 if len(rows) else None, m, variant)

        o0, o1 = scene(0.0), scene(a)
        d = np.abs(np.vectorize(wrap_angle)(o0[ang] - o1[ang]))
        inv = (o0[ang] == -1) & (o1[ang] == -1)
        ok_rot = np.max(np.abs(o0[rest] - o1[rest])) <= 1e-9 and np.all(
            inv | (d <= 1e-9) | (np.abs(d - 2 * math.pi) <= 1e-9)
        )
        rot_cases += 1
        rot_fail += not ok_rot
    total = cases + rot_cases
    ok = failures == 0 and rot_fail == 0 and total >= 1000
    report(
        capsys, "C3 observation contract", ok,
        f"{cases} length/sentinel/mask/idempotence cases (0..30 peds x 4 variants) with {failures} failures; "
        f"{rot_cases} rotation cases with {rot_fail} failures" + (f"; first: {messages[0]}" if messages else ""),
    )


# 4 -----------------------------------------------------------------------------


def test_c4_lidar_oracle(capsys):
    rng = np.random.default_rng(4)
    cfg = LidarConfig()
    worst = 0.0
    for _ in range(500):
        walls = []
        for _ in range(int(rng.integers(0, 5))):
            w = rng.uniform(-6, 6, 4)
            if math.hypot(w[2] - w[0], w[3] - w[1]) > 1e-3:
                walls.append(tuple(w))
        circles = [(*rng.uniform(-6, 6, 2), rng.uniform(0.1, 1.0)) for _ in range(int(rng.integers(0, 5)))]
        pose = (*rng.uniform(-3, 3, 2), rng.uniform(-math.pi, math.pi))
        m = WorldMap((-10, -10, 10, 10), walls=walls or np.zeros((0, 4)), static_obstacles=circles or np.zeros((0, 3)))
        got = raycast(pose, m, config=cfg).ranges
        want = np.array(lidar_oracle(pose, walls, circles, cfg.angle_min, cfg.angle_max, cfg.num_beams, cfg.max_range))
        worst = max(worst, float(np.max(np.abs(got - want))))
    report(capsys, "C4 lidar vs analytic oracle", worst <= 1e-6, f"500 scenes x {cfg.num_beams} beams, max |error| = {worst:.3e} m")


# 5 -----------------------------------------------------------------------------


class ActionList:
    """Replays a fixed, seed-derived action sequence."""

    def __init__(self, length=400):
        self.length = length

    def reset(self, seed):
        self.actions = np.random.default_rng(seed).integers(0, 6, size=self.length)
        self.i = 0

    def __call__(self, obs):
        a = Action(int(self.actions[self.i % self.length]))
        self.i += 1
        return a


def _scenario_gen(seed):
    return random_scenario(12, ["point", "guiding", "following"][seed % 3], seed, width=12, height=12)


def test_c5_determinism(capsys, monkeypatch):
    seeds = list(range(16))
    cfg = with_step_max(EnvConfig(), 250)

    def dump(workers):
        monkeypatch.setenv("CROWDNAV_THREADS", str(workers))
        recs, _ = run_batch(_scenario_gen, ActionList(), len(seeds), seeds, cfg, workers=workers)
        # the JSON form writes floats with repr, so equal text means bit-identical arrays
        return [json.dumps(record_to_dict(r), sort_keys=True) for r in recs]

    a, b, c = dump(1), dump(1), dump(8)
    same_runs = a == b
    same_threads = a == c
    report(
        capsys, "C5 determinism", same_runs and same_threads,
        f"{len(seeds)} episodes; run-to-run identical={same_runs}, 1 vs 8 workers identical={same_threads}",
    )


# 6 -----------------------------------------------------------------------------


def test_c6_social_force(capsys):
    rng = np.random.default_rng(6)
    m = WorldMap((-20, -20, 20, 20), walls=[[-20, -20, 20, -20], [-20, 20, 20, 20], [-20, -20, -20, 20], [20, -20, 20, 20]])
    flips = {"x": lambda v: (v[0], -v[1]), "y": lambda v: (-v[0], v[1]), "swap": lambda v: (v[1], v[0])}
    worst = 0.0
    for k in range(300):
        flip = flips[["x", "y", "swap"][k % 3]]
        rows = rng.uniform(-5, 5, size=(int(rng.integers(1, 7)), 6)) * [1, 1, 0.2, 0.2, 1, 1]
        r = rng.uniform(-5, 5, 2)
        peds = [Pedestrian(i, row[:2], velocity=row[2:4], goal=row[4:6]) for i, row in enumerate(rows)]
        mir = [Pedestrian(i, flip(row[:2]), velocity=flip(row[2:4]), goal=flip(row[4:6])) for i, row in enumerate(rows)]
        f = social_forces(peds, RobotState(position=r), m)
        g = social_forces(mir, RobotState(position=flip(r)), m)
        worst = max(worst, float(np.max(np.abs(g - np.array([flip(v) for v in f])))))

    far = RobotState(position=(500, 500))
    world = WorldMap((-100, -100, 1000, 1000))
    speeds = {}
    for state, target in ((SocialState.WALKING, 0.3), (SocialState.RUNNING, 1.0)):
        peds = [Pedestrian(0, (0, 0), state=state, goal=(500, 0))]
        for _ in range(30):
            peds = step_pedestrians(peds, far, world, 0.1)
        speeds[state.name.lower()] = peds[0].speed
    ok = worst <= 1e-12 and abs(speeds["walking"] - 0.3) <= 0.03 and abs(speeds["running"] - 1.0) <= 0.1
    report(
        capsys, "C6 social force", ok,
        f"mirror max |error| = {worst:.1e} over 300 scenes; speed after 3 s: walking {speeds['walking']:.4f} m/s, "
        f"running {speeds['running']:.4f} m/s",
    )


# 7 -----------------------------------------------------------------------------


def test_c7_gradient_check(capsys):
    worst = 0.0
    for seed in range(10):
        spec = NetworkSpec(lidar_hidden=2 + seed % 3, ped_hidden=3, trunk_hidden=4)
        params = rand_params(spec, 1000 + seed)
        batch = rand_batch(5, 2000 + seed)
        targets = np.random.default_rng(seed).normal(size=5)
        _, analytic = td_loss_and_grads(spec, params, batch, targets)
        numeric = numeric_grads(spec, params, batch, targets)
        for k in params:
            a, n = analytic[k], numeric[k]
            worst = max(worst, float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)))
    report(capsys, "C7 gradient check", worst <= 1e-4, f"10 random nets, worst per-tensor relative error {worst:.2e}")


# 8 -----------------------------------------------------------------------------

TRAIN_STEP_MAX = 600  # 60 s episodes on the 10 x 10 m map


def _empty_map(n_obstacles, seed):
    return random_scenario(0, "point", seed, width=10, height=10)


@pytest.mark.slow
def test_c8_training_smoke(capsys):
    env_cfg = with_step_max(EnvConfig(), TRAIN_STEP_MAX)
    cfg = TrainConfig(max_episodes=5000, stop_at_success=0.8)
    t0 = time.perf_counter()
    result = train(_empty_map, NetworkSpec(), cfg, seed=0, env_config=env_cfg)
    elapsed = time.perf_counter() - t0
    last = [c["success"] for c in result.curve[-100:]]
    rate = sum(last) / len(last)

    seeds = np.random.default_rng(8).integers(0, 2**31 - 1, size=100)
    _, random_summary = run_batch(lambda s: _empty_map(0, s), RandomPolicy(), 100, seeds, env_cfg, workers=1)
    ok = len(last) == 100 and rate >= 0.8 and len(result.curve) <= 5000 and elapsed <= 1800 and random_summary.success_rate <= 0.2
    report(
        capsys, "C8 desk-scale training", ok,
        f"learner {rate:.2f} success over the last 100 of {len(result.curve)} episodes in {elapsed / 60:.1f} min; "
        f"random policy {random_summary.success_rate:.2f}",
    )


# 9 -----------------------------------------------------------------------------

WAYPOINT_A, WAYPOINT_B = (11.0, 2.0), (24.0, 2.0)
VIP_SPEED = 0.2


def _following_corridor(resume_at):
    vip = Pedestrian(0, (3.5, 2.0), state=SocialState.GUIDE_TO_GOAL, goal=WAYPOINT_A, desired_speed=VIP_SPEED)
    entries = [] if resume_at is None else [ScriptEntry(TimeTrigger(resume_at), SocialState.GUIDE_TO_GOAL, WAYPOINT_B)]
    return Scenario(WorldMap.rectangle(30, 4), (1.0, 2.0, 0.0), (29.0, 2.0), [(vip, StateScript(entries))], TaskKind.FOLLOWING)


def test_c9_following_proxy(capsys):
    cfg = with_step_max(EnvConfig(wander=False), 1800)
    arrival_radius = 0.3

    def stop_onset(record):
        d = np.hypot(record.vip_position[:, 0] - WAYPOINT_A[0], record.vip_position[:, 1] - WAYPOINT_A[1])
        return int(np.flatnonzero(d <= arrival_radius)[0])

    # dry run without the resume entry: identical up to the resume time, gives the stop onset
    dry = run_episode(_following_corridor(None), GreedyGoalPolicy(), cfg, max_steps=700)
    k0 = stop_onset(dry)
    resume = round(k0 * cfg.dt + 5.0, 6)
    rec = run_episode(_following_corridor(resume), GreedyGoalPolicy(), cfg, max_steps=int(resume / cfg.dt) + 400)
    assert stop_onset(rec) == k0

    k_resume = int(round(resume / cfg.dt))
    one_s = int(round(1.0 / cfg.dt))
    v = rec.robot_velocity[:, 0]
    quiet = slice(k0 + one_s, k_resume)
    reacted = bool(np.all(rec.goal_none[quiet]) and np.all(v[quiet] == 0.0))
    first_still = next(k for k in range(k0, len(v)) if rec.goal_none[k] and v[k] == 0.0)
    moved_after = bool(np.any(v[k_resume:] > 0))
    d_max = float(np.nanmax(rec.d_rp))
    ok = reacted and moved_after and d_max <= 4.5
    report(
        capsys, "C9 following proxy", ok,
        f"VIP stops at t={k0 * cfg.dt:.1f} s for 5 s; robot goal none and speed 0 after "
        f"{(first_still - k0) * cfg.dt:.1f} s, held until resume={reacted}; robot moves again={moved_after}; "
        f"max d_rp {d_max:.3f} m over {rec.steps * cfg.dt:.0f} s",
    )


# 10 ----------------------------------------------------------------------------


@pytest.mark.slow
def test_c10_harness_scale(capsys, tmp_path):
    argv = [
        "eval", "--scenario-gen", "obstacles=20,task=point,profile=random", "--policy", "greedy-goal",
        "--episodes", "500", "--seeds", "0", "--workers", "8", "--timeout", "180", "--out", str(tmp_path),
    ]
    t0 = time.perf_counter()
    code = cli_main(argv)
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    res = json.loads(out.strip().splitlines()[-1]) if code == 0 else {}
    rates = res.get("success_rate", 0) + res.get("collision_rate", 0) + res.get("timeout_rate", 0)
    ok = code == 0 and res.get("episodes") == 500 and abs(rates - 1.0) <= 1e-9 and elapsed <= 600
    report(
        capsys, "C10 harness scale", ok,
        f"500 episodes, 20 walkers, 180 s cap, 8 workers on {os.cpu_count()} CPU(s): {elapsed / 60:.1f} min; "
        f"rates sum {rates:.12f} (success {res.get('success_rate')}, collision {res.get('collision_rate')}, "
        f"timeout {res.get('timeout_rate')})",
    )

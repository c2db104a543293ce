"""Episode loop, scenario generation, curriculum scheduling and the action interface."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Optional

import numpy as np

from crowdnav.observation import (
    AgentVariant,
    apply_variant_mask,
    assemble,
    downsample_lidar,
    encode_frame,
    reset_history,
    stack_history,
)
from crowdnav.pedsim import (
    ASSISTANCE_STATES,
    PedType,
    Pedestrian,
    RegionTrigger,
    RobotNearTrigger,
    ScriptEntry,
    SocialForceConfig,
    SocialState,
    StateScript,
    apply_state_script,
    step_pedestrians,
)
from crowdnav.reward import RewardConfig, RewardTerms, StepContext, compute_reward
from crowdnav.tasks import PedGoal, TaskAssignment, select_goal_following, select_goal_guiding, task_stage
from crowdnav.world import LidarConfig, RobotState, WorldMap, check_collision, integrate_robot, raycast


class Action(IntEnum):
    FORWARD = 0
    STOP = 1
    LEFT = 2
    RIGHT = 3
    STRONG_LEFT = 4
    STRONG_RIGHT = 5


ACTION_COMMANDS = {
    Action.FORWARD: (0.22, 0.0),
    Action.STOP: (0.0, 0.0),
    Action.LEFT: (0.15, 0.75),
    Action.RIGHT: (0.15, -0.75),
    Action.STRONG_LEFT: (0.0, 1.5),
    Action.STRONG_RIGHT: (0.0, -1.5),
}


def action_to_command(a) -> tuple[float, float]:
    """(linear m/s, angular rad/s) for a discrete action."""
    return ACTION_COMMANDS[Action(a)]


class TaskKind(str, Enum):
    POINT = "point"
    GUIDING = "guiding"
    FOLLOWING = "following"


class ScenarioError(ValueError):
    pass


class PlacementError(ScenarioError):
    """Rejection sampling could not place every entity."""


class EpisodeDoneError(RuntimeError):
    pass


def rng_streams(seed: int) -> dict:
    """Independent generators for scenario sampling, pedestrian motion and exploration."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return {name: np.random.default_rng(s) for name, s in zip(("scenario", "pedsim", "learner"), children)}


@dataclass(eq=False)
class Scenario:
    map: WorldMap
    robot_start: tuple
    end_goal: tuple
    pedestrians: list = field(default_factory=list)  # (Pedestrian, StateScript) pairs
    task_kind: TaskKind = TaskKind.POINT
    seed: int = 0

    def __post_init__(self):
        self.robot_start = tuple(float(v) for v in self.robot_start)
        self.end_goal = tuple(float(v) for v in self.end_goal)
        self.task_kind = TaskKind(self.task_kind)
        self.pedestrians = [
            (p, s if s is not None else StateScript()) for p, s in self.pedestrians
        ]

    def validate(self) -> "Scenario":
        if len(self.robot_start) != 3:
            raise ScenarioError("robot_start must be (x, y, heading)")
        if not self.map.contains(self.robot_start[:2]):
            raise ScenarioError(f"robot start {self.robot_start[:2]} outside map bounds")
        if not self.map.contains(self.end_goal):
            raise ScenarioError(f"end goal {self.end_goal} outside map bounds")
        ids = [p.id for p, _ in self.pedestrians]
        if len(set(ids)) != len(ids):
            raise ScenarioError("pedestrian ids must be unique")
        for ped, script in self.pedestrians:
            if not self.map.contains(ped.position):
                raise ScenarioError(f"pedestrian {ped.id} outside map bounds")
            try:
                script.validate(ped.state)
            except ValueError as exc:
                raise ScenarioError(f"pedestrian {ped.id}: {exc}") from None
        if self.task_kind != TaskKind.POINT and not any(
            ped.state in ASSISTANCE_STATES or any(s in ASSISTANCE_STATES for s in script.states())
            for ped, script in self.pedestrians
        ):
            raise ScenarioError(f"{self.task_kind.value} task needs a scripted VIP")
        return self


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    robot_radius: float = 0.2
    lidar: LidarConfig = LidarConfig()
    reward: RewardConfig = RewardConfig()
    social: SocialForceConfig = SocialForceConfig()
    variant: AgentVariant = AgentVariant.COMPLETE
    wander: bool = True


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terms: RewardTerms
    done: bool
    done_reason: str  # "none", "success", "collision" or "timeout"
    info: dict


class CrowdNavEnv:
    """Single-robot crowd navigation episode.

    One :meth:`step` runs, in order: robot kinematics, pedestrian scripts and
    forces, task assignment, lidar, reward on the post-move transition and
    observation assembly.
    """

    def __init__(self, config: EnvConfig = EnvConfig()):
        self.config = config
        self.scenario: Optional[Scenario] = None
        self.done = True

    # -- public API --------------------------------------------------------

    def reset(self, scenario: Scenario) -> np.ndarray:
        scenario.validate()
        cfg = self.config
        self.scenario = scenario
        self.rngs = rng_streams(scenario.seed)
        x, y, heading = scenario.robot_start
        self.robot = RobotState(position=(x, y), heading=heading, radius=cfg.robot_radius)
        self.peds = sorted((p for p, _ in scenario.pedestrians), key=lambda p: p.id)
        self.scripts = {p.id: s for p, s in scenario.pedestrians}
        self.end_goal = np.array(scenario.end_goal)
        self.sim_time = 0.0
        self.step_count = 0
        self.vip_id = None
        self.peds = [apply_state_script(p, self.scripts[p.id], 0.0, self.robot) for p in self.peds]
        self._retarget()
        self.assignment = self._assign()
        self.scan = raycast(self.robot.pose, scenario.map, self.peds, cfg.lidar)
        self.history = reset_history(self._frame())
        self.done = False
        return self._observation()

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeDoneError("step() called on a finished episode; call reset()")
        cfg = self.config
        scenario = self.scenario
        prev_pos = self.robot.position

        self.robot = integrate_robot(self.robot, action_to_command(action), cfg.dt, scenario.map)
        self.step_count += 1
        self.sim_time = self.step_count * cfg.dt

        self.peds = [apply_state_script(p, self.scripts[p.id], self.sim_time, self.robot) for p in self.peds]
        self.peds = step_pedestrians(self.peds, self.robot, scenario.map, cfg.dt, cfg.social)
        self._retarget()

        self.assignment = self._assign()
        self.robot = replace(self.robot, task_flag=self.assignment.flag)
        self.scan = raycast(self.robot.pose, scenario.map, self.peds, cfg.lidar)

        ctx = self._context(prev_pos)
        total, terms = compute_reward(ctx, cfg.reward)

        self.history = stack_history(self._frame(), self.history)
        obs = self._observation()

        reason = terms.done_reason.value
        if reason == "none" and self.step_count >= cfg.reward.step_max:
            reason = "timeout"
        self.done = reason != "none"
        vip = self.vip
        info = {
            "flag": self.assignment.flag,
            "goal_is_none": self.assignment.goal is None,
            "d_rp": ctx.d_rp,
            "robot_velocity": (self.robot.linear_velocity, self.robot.angular_velocity),
            "vip_velocity": None if vip is None else tuple(vip.velocity),
            "sim_time": self.sim_time,
            "step": self.step_count,
        }
        return StepResult(obs, total, terms, self.done, reason, info)

    @property
    def vip(self) -> Optional[Pedestrian]:
        if self.vip_id is None:
            return None
        for p in self.peds:
            if p.id == self.vip_id:
                return p
        return None

    # -- internals -----------------------------------------------------------

    def _assign(self) -> TaskAssignment:
        kind = self.scenario.task_kind
        if kind == TaskKind.GUIDING:
            a = select_goal_guiding(self.peds, self.robot, self.end_goal)
        elif kind == TaskKind.FOLLOWING:
            a = select_goal_following(self.peds, self.robot, self.end_goal)
        else:
            a = TaskAssignment(0, tuple(self.end_goal), None)
        if self.vip_id is None and a.vip_id is not None:
            self.vip_id = a.vip_id
        return a

    def _frame(self) -> np.ndarray:
        return encode_frame(self.robot, self.assignment, self.peds, self.vip)

    def _observation(self) -> np.ndarray:
        obs = assemble(downsample_lidar(self.scan), self.history)
        return apply_variant_mask(obs, self.config.variant)

    def _context(self, prev_pos) -> StepContext:
        a = self.assignment
        target = a.goal_position(self.peds)
        if target is None:
            target = self.end_goal
        pos = self.robot.position
        goal_distance = None
        if a.goal is not None and not isinstance(a.goal, PedGoal):
            goal_distance = float(np.hypot(*(np.asarray(a.goal) - pos)))
        if self.peds:
            ped_pos = np.array([p.position for p in self.peds])
            d_rh = np.hypot(ped_pos[:, 0] - pos[0], ped_pos[:, 1] - pos[1])
            d_safe = np.array([p.safety_distance for p in self.peds])
        else:
            d_rh = d_safe = np.zeros(0)
        vip = self.vip
        return StepContext(
            scan_min=self.scan.min(),
            robot_radius=self.robot.radius,
            step_current=self.step_count,
            d_rg_prev=float(np.hypot(*(target - prev_pos))),
            d_rg_curr=float(np.hypot(*(target - pos))),
            goal_distance=goal_distance,
            static_distance=self.scenario.map.nearest_static_distance(pos),
            ped_distances=d_rh,
            ped_safety=d_safe,
            stage=task_stage(a.flag),
            d_rp=None if vip is None else float(np.hypot(*(vip.position - pos))),
        )

    def _retarget(self):
        """Give unscripted walkers a fresh random goal whenever they arrive."""
        if not self.config.wander:
            return
        arrive = self.config.social.arrival_radius
        rng = self.rngs["pedsim"]
        out = []
        for p in self.peds:
            if (
                p.state in (SocialState.WALKING, SocialState.RUNNING)
                and p.group is None
                and len(self.scripts[p.id]) == 0
                and (p.goal is None or np.hypot(*(p.goal - p.position)) <= arrive)
            ):
                p = replace(p, goal=_free_point(self.scenario.map, rng, margin=1.0))
            out.append(p)
        self.peds = out


# ---------------------------------------------------------------------------
# scenario generation


def _free_point(world_map: WorldMap, rng, margin: float, avoid=(), clearance: float = 0.0, tries: int = 200):
    xmin, ymin, xmax, ymax = world_map.bounds
    c = world_map.static_obstacles
    for _ in range(tries):
        p = np.array([rng.uniform(xmin + margin, xmax - margin), rng.uniform(ymin + margin, ymax - margin)])
        if len(c) and np.any(np.hypot(c[:, 0] - p[0], c[:, 1] - p[1]) < c[:, 2] + max(margin, clearance)):
            continue
        if any(np.hypot(*(p - q)) < clearance for q in avoid):
            continue
        return p
    raise PlacementError(f"could not place a point after {tries} tries")


def random_scenario(
    n_obstacles: int,
    task_kind="point",
    seed: int = 0,
    width: float = 20.0,
    height: float = 20.0,
    n_static: int = 0,
    profile: str = "random",
    min_goal_distance: float = 2.0,
    max_goal_distance: Optional[float] = None,
    tries: int = 500,
) -> Scenario:
    """Random start, goal and pedestrian roster.

    ``profile`` is ``"random"`` (walkers with random goals), ``"crowd"``
    (walkers gathering into talking groups) or ``"running"`` (a third of the
    pedestrians run at up to 1 m/s). Assistance tasks add a scripted VIP with
    id 0 that visits 1-3 random intermediate targets before the final goal.
    """
    if n_obstacles < 0:
        raise ValueError("n_obstacles must be >= 0")
    task_kind = TaskKind(task_kind)
    rng = rng_streams(seed)["scenario"]
    statics = []
    for _ in range(n_static):
        r = rng.uniform(0.3, 0.8)
        for _ in range(tries):
            c = np.array([rng.uniform(r + 1, width - r - 1), rng.uniform(r + 1, height - r - 1)])
            if all(np.hypot(*(c - s[:2])) > r + s[2] + 0.8 for s in statics):
                statics.append((c[0], c[1], r))
                break
        else:
            raise PlacementError("could not place static obstacles")
    world = WorldMap.rectangle(width, height, static_obstacles=np.array(statics).reshape(-1, 3))

    start = _free_point(world, rng, margin=1.0, clearance=0.6)
    for _ in range(tries):
        goal = _free_point(world, rng, margin=1.0, clearance=0.6)
        d = np.hypot(*(goal - start))
        if d >= min_goal_distance and (max_goal_distance is None or d <= max_goal_distance):
            break
    else:
        raise PlacementError("could not place a goal at the requested distance")
    heading = float(rng.uniform(-math.pi, math.pi))

    occupied = [start, goal]
    peds = []
    next_id = 0
    if task_kind != TaskKind.POINT:
        peds.append(_vip(task_kind, world, rng, start, goal, occupied, tries))
        next_id = 1

    anchors = []
    if profile == "crowd" and n_obstacles:
        for _ in range(max(1, n_obstacles // 5)):
            anchors.append(_free_point(world, rng, margin=2.0, avoid=occupied, clearance=2.0, tries=tries))
    for k in range(n_obstacles):
        pos = _free_point(world, rng, margin=0.8, avoid=occupied, clearance=1.2, tries=tries)
        occupied.append(pos)
        ped_type = PedType(rng.choice(3, p=[0.7, 0.15, 0.15]))
        state, group, goal_k = SocialState.WALKING, None, None
        if profile == "crowd":
            group = k % len(anchors)
            angle = rng.uniform(-math.pi, math.pi)
            goal_k = anchors[group] + 0.7 * np.array([math.cos(angle), math.sin(angle)])
        elif profile == "running":
            if k % 3 == 0:
                state = SocialState.RUNNING
        elif profile != "random":
            raise ValueError(f"unknown profile {profile!r}")
        peds.append(
            (
                Pedestrian(
                    id=next_id + k,
                    position=pos,
                    ped_type=ped_type,
                    state=state,
                    goal=goal_k if goal_k is not None else _free_point(world, rng, margin=1.0),
                    group=group,
                ),
                StateScript(),
            )
        )
    return Scenario(world, (start[0], start[1], heading), tuple(goal), peds, task_kind, seed).validate()


VIP_SPEED = 0.2


def _vip(task_kind, world, rng, start, goal, occupied, tries):
    pos = None
    for _ in range(tries):
        cand = _free_point(world, rng, margin=1.0, avoid=occupied, clearance=2.0, tries=tries)
        if 2.0 <= np.hypot(*(cand - start)) <= 8.0:
            pos = cand
            break
    if pos is None:
        raise PlacementError("could not place the VIP")
    occupied.append(pos)
    if task_kind == TaskKind.GUIDING:
        state = SocialState.REQUESTING_GUIDE
        entries = [ScriptEntry(RobotNearTrigger(1.5), SocialState.FOLLOWING_GUIDE)]
    else:
        state = SocialState.REQUESTING_FOLLOWER
        waypoints = [_free_point(world, rng, margin=1.5) for _ in range(int(rng.integers(1, 4)))]
        waypoints.append(np.asarray(goal))
        entries = [ScriptEntry(RobotNearTrigger(4.0), SocialState.GUIDE_TO_GOAL, tuple(waypoints[0]))]
        for here, nxt in zip(waypoints, waypoints[1:]):
            entries.append(ScriptEntry(RegionTrigger(tuple(here), 0.5), SocialState.GUIDE_TO_GOAL, tuple(nxt)))
        entries.append(ScriptEntry(RegionTrigger(tuple(goal), 0.5), SocialState.CLEARING_GOAL, tuple(goal)))
    ped = Pedestrian(id=0, position=pos, state=state, desired_speed=VIP_SPEED)
    return ped, StateScript(entries)


# ---------------------------------------------------------------------------
# curriculum


@dataclass(frozen=True)
class CurriculumState:
    """Obstacle-count scheduler driven by a window of recent episode rewards."""

    current_obstacle_count: int = 0
    success_window: tuple = ()
    window: int = 50
    threshold: float = 40.0
    lower_threshold: float = -20.0
    step_up: int = 2
    step_down: int = -2
    min_count: int = 0
    max_count: int = 30

    def __post_init__(self):
        if not self.min_count <= self.current_obstacle_count <= self.max_count:
            raise ValueError("obstacle count outside curriculum bounds")


def curriculum_update(state: CurriculumState, episode_reward: float) -> CurriculumState:
    """Record one finished episode and adjust the obstacle count if a threshold is crossed."""
    window = (state.success_window + (float(episode_reward),))[-state.window:]
    total = sum(window)
    count = state.current_obstacle_count
    if total >= state.threshold:
        count, window = count + state.step_up, ()
    elif len(window) == state.window and total < state.lower_threshold:
        count, window = count + state.step_down, ()
    count = min(max(count, state.min_count), state.max_count)
    return replace(state, current_obstacle_count=count, success_window=window)

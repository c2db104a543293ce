"""Social-force pedestrians with an extended social-state machine.

Pedestrians follow a Helbing-style social force model: a driving term that
relaxes the velocity toward a state-dependent desired velocity plus
exponential repulsion from other pedestrians, the robot and the nearest
static obstacle. Scripted pedestrians (the VIP of an assistance task) change
state through a :class:`StateScript`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional, Sequence, Union

import numpy as np

from crowdnav.world import RobotState, WorldMap, vec2


class SocialState(IntEnum):
    WALKING = 0
    TALKING = 1
    RUNNING = 2
    IDLE = 3
    REQUESTING_GUIDE = 4
    FOLLOWING_GUIDE = 5
    REQUESTING_FOLLOWER = 6
    GUIDE_TO_GOAL = 7
    CLEARING_GOAL = 8


class PedType(IntEnum):
    ADULT = 0
    CHILD = 1
    ELDER = 2


STATIONARY_STATES = frozenset(
    {
        SocialState.TALKING,
        SocialState.IDLE,
        SocialState.REQUESTING_GUIDE,
        SocialState.REQUESTING_FOLLOWER,
    }
)
ASSISTANCE_STATES = frozenset(
    {
        SocialState.REQUESTING_GUIDE,
        SocialState.FOLLOWING_GUIDE,
        SocialState.REQUESTING_FOLLOWER,
        SocialState.GUIDE_TO_GOAL,
        SocialState.CLEARING_GOAL,
    }
)

DEFAULT_STATE_SPEEDS = {
    SocialState.WALKING: 0.3,
    SocialState.RUNNING: 1.0,
    SocialState.TALKING: 0.0,
    SocialState.IDLE: 0.0,
    SocialState.REQUESTING_GUIDE: 0.0,
    SocialState.REQUESTING_FOLLOWER: 0.0,
    SocialState.FOLLOWING_GUIDE: 0.3,
    SocialState.GUIDE_TO_GOAL: 0.3,
    SocialState.CLEARING_GOAL: 0.3,
}

# (type, state) -> meters; a None state is the per-type fallback
DEFAULT_SAFETY_TABLE = {
    (PedType.ADULT, SocialState.WALKING): 1.0,
    (PedType.ADULT, SocialState.TALKING): 1.2,
    (PedType.ADULT, SocialState.RUNNING): 1.5,
    (PedType.ADULT, None): 1.0,
    (PedType.CHILD, None): 1.2,
    (PedType.ELDER, None): 1.3,
}


def safety_distance_for(ped_type: PedType, state: SocialState, table=None) -> float:
    """Safety distance for a pedestrian of ``ped_type`` currently in ``state``."""
    table = DEFAULT_SAFETY_TABLE if table is None else table
    key = (PedType(ped_type), SocialState(state))
    if key in table:
        return float(table[key])
    return float(table[(key[0], None)])


@dataclass(frozen=True)
class SocialForceConfig:
    tau: float = 0.5
    ped_strength: float = 2.0
    ped_range: float = 0.3
    wall_strength: float = 5.0
    wall_range: float = 0.1
    speed_cap: float = 1.5
    clear_strength: float = 1.0
    clear_epsilon: float = 0.1
    clearing_radius: float = 2.0
    arrival_radius: float = 0.3
    follow_distance: float = 1.0
    group_join_radius: float = 0.5
    state_speeds: dict = field(default_factory=lambda: dict(DEFAULT_STATE_SPEEDS))


@dataclass(frozen=True, eq=False)
class Pedestrian:
    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 0.3
    ped_type: PedType = PedType.ADULT
    state: SocialState = SocialState.WALKING
    desired_speed: Optional[float] = None  # None -> per-state default speed
    goal: Optional[np.ndarray] = None
    safety_distance: Optional[float] = None  # None -> looked up from type and state
    group: Optional[int] = None
    script_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", vec2(self.position))
        object.__setattr__(self, "velocity", vec2(self.velocity))
        object.__setattr__(self, "ped_type", PedType(self.ped_type))
        object.__setattr__(self, "state", SocialState(self.state))
        if self.goal is not None:
            object.__setattr__(self, "goal", vec2(self.goal))
        if self.radius <= 0:
            raise ValueError("pedestrian radius must be positive")
        if self.safety_distance is None:
            object.__setattr__(self, "safety_distance", safety_distance_for(self.ped_type, self.state))
        if self.safety_distance < self.radius:
            raise ValueError("safety distance must be at least the radius")

    @property
    def speed(self) -> float:
        return float(math.hypot(*self.velocity))

    def with_state(self, state: SocialState, goal=None, **kw) -> "Pedestrian":
        """Copy in a new state, refreshing the looked-up safety distance."""
        return replace(
            self, state=state, goal=goal, safety_distance=safety_distance_for(self.ped_type, state), **kw
        )


# ---------------------------------------------------------------------------
# scripts


@dataclass(frozen=True)
class TimeTrigger:
    time: float

    def fired(self, ped, sim_time, robot) -> bool:
        return sim_time >= self.time


@dataclass(frozen=True)
class RegionTrigger:
    """Fires once the pedestrian centre is inside the circle."""

    center: tuple
    radius: float

    def fired(self, ped, sim_time, robot) -> bool:
        return math.hypot(ped.position[0] - self.center[0], ped.position[1] - self.center[1]) <= self.radius


@dataclass(frozen=True)
class RobotNearTrigger:
    """Fires once the robot centre is within ``distance`` of the pedestrian."""

    distance: float

    def fired(self, ped, sim_time, robot) -> bool:
        if robot is None:
            return False
        return float(np.hypot(*(ped.position - robot.position))) <= self.distance


Trigger = Union[TimeTrigger, RegionTrigger, RobotNearTrigger]


@dataclass(frozen=True)
class ScriptEntry:
    trigger: Trigger
    next_state: SocialState
    new_goal: Optional[tuple] = None


@dataclass(frozen=True)
class StateScript:
    entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        times = [e.trigger.time for e in self.entries if isinstance(e.trigger, TimeTrigger)]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("time triggers must be strictly increasing")

    def __len__(self):
        return len(self.entries)

    def validate(self, initial_state: SocialState) -> None:
        """Reject scripts that would re-enter a state after leaving it."""
        seen = {SocialState(initial_state)}
        current = SocialState(initial_state)
        for e in self.entries:
            nxt = SocialState(e.next_state)
            if nxt != current and nxt in seen:
                raise ValueError(f"script re-enters {nxt.name} after leaving it")
            seen.add(nxt)
            current = nxt

    def states(self) -> list:
        return [SocialState(e.next_state) for e in self.entries]


def apply_state_script(
    ped: Pedestrian, script: StateScript, sim_time: float, robot: Optional[RobotState] = None
) -> Pedestrian:
    """Fire every consecutive script entry whose trigger holds at ``sim_time``.

    ``ped.script_index`` tracks progress, so fired entries never fire again.
    """
    i = ped.script_index
    while i < len(script.entries) and script.entries[i].trigger.fired(ped, sim_time, robot):
        e = script.entries[i]
        i += 1
        ped = ped.with_state(SocialState(e.next_state), goal=e.new_goal, script_index=i)
    return ped


# ---------------------------------------------------------------------------
# forces


def desired_velocity(ped: Pedestrian, robot: Optional[RobotState], cfg: SocialForceConfig) -> np.ndarray:
    state = ped.state
    if state in STATIONARY_STATES:
        return np.zeros(2)
    speed = ped.desired_speed if ped.desired_speed is not None else cfg.state_speeds[state]
    if state == SocialState.FOLLOWING_GUIDE:
        if robot is None:
            return np.zeros(2)
        delta = robot.position - ped.position
        dist = math.hypot(*delta)
        if dist <= cfg.follow_distance:
            return np.zeros(2)
        return speed * delta / dist
    if ped.goal is None:
        return np.zeros(2)
    delta = ped.goal - ped.position
    dist = math.hypot(*delta)
    if state == SocialState.CLEARING_GOAL:
        if dist >= cfg.clearing_radius:
            return np.zeros(2)
        if dist == 0.0:
            return speed * np.array([1.0, 0.0])
        return -speed * delta / dist
    if dist <= cfg.arrival_radius:
        return np.zeros(2)
    return speed * delta / dist


def _unit(dx, dy, d):
    """Unit vectors ``(dx, dy) / d`` with the (1, 0) fallback where ``d == 0``."""
    safe = np.where(d > 0.0, d, 1.0)
    ux = np.where(d > 0.0, dx / safe, 1.0)
    uy = np.where(d > 0.0, dy / safe, 0.0)
    return ux, uy


def social_forces(
    peds: Sequence[Pedestrian],
    robot: Optional[RobotState],
    world_map: Optional[WorldMap],
    cfg: SocialForceConfig = SocialForceConfig(),
) -> np.ndarray:
    """Social-force accelerations ``(n, 2)`` for all pedestrians from one snapshot."""
    n = len(peds)
    if n == 0:
        return np.zeros((0, 2))
    pos = np.array([p.position for p in peds])
    vel = np.array([p.velocity for p in peds])
    rad = np.array([p.radius for p in peds])
    vdes = np.array([desired_velocity(p, robot, cfg) for p in peds])
    force = (vdes - vel) / cfg.tau

    # pedestrian-pedestrian repulsion
    dx = pos[:, None, 0] - pos[None, :, 0]
    dy = pos[:, None, 1] - pos[None, :, 1]
    d = np.hypot(dx, dy)
    mag = cfg.ped_strength * np.exp((rad[:, None] + rad[None, :] - d) / cfg.ped_range)
    np.fill_diagonal(mag, 0.0)
    ux, uy = _unit(dx, dy, d)
    force[:, 0] += np.sum(mag * ux, axis=1)
    force[:, 1] += np.sum(mag * uy, axis=1)

    if robot is not None:
        rx = pos[:, 0] - robot.position[0]
        ry = pos[:, 1] - robot.position[1]
        rd = np.hypot(rx, ry)
        mag = cfg.ped_strength * np.exp((rad + robot.radius - rd) / cfg.ped_range)
        ux, uy = _unit(rx, ry, rd)
        force[:, 0] += mag * ux
        force[:, 1] += mag * uy

    if world_map is not None and (len(world_map.walls) or len(world_map.static_obstacles)):
        force += _static_repulsion(pos, rad, world_map, cfg)
    return force


def _static_repulsion(pos, rad, world_map, cfg):
    """Repulsion from the single nearest wall point or static-circle surface."""
    n = len(pos)
    best_d = np.full(n, np.inf)
    best_x = np.zeros(n)
    best_y = np.zeros(n)
    best_norm = np.zeros(n)
    walls = world_map.walls
    if len(walls):
        a = walls[:, :2]
        e = walls[:, 2:] - a
        rel_x = pos[:, None, 0] - a[None, :, 0]
        rel_y = pos[:, None, 1] - a[None, :, 1]
        s = np.clip((rel_x * e[:, 0] + rel_y * e[:, 1]) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
        qx = rel_x - s * e[:, 0]
        qy = rel_y - s * e[:, 1]
        d = np.hypot(qx, qy)
        k = np.argmin(d, axis=1)
        rows = np.arange(n)
        best_d = d[rows, k]
        best_x, best_y, best_norm = qx[rows, k], qy[rows, k], best_d.copy()
    c = world_map.static_obstacles
    if len(c):
        cx = pos[:, None, 0] - c[None, :, 0]
        cy = pos[:, None, 1] - c[None, :, 1]
        cd = np.hypot(cx, cy)
        surface = cd - c[None, :, 2]
        k = np.argmin(surface, axis=1)
        rows = np.arange(n)
        closer = surface[rows, k] < best_d
        best_d = np.where(closer, surface[rows, k], best_d)
        best_x = np.where(closer, cx[rows, k], best_x)
        best_y = np.where(closer, cy[rows, k], best_y)
        best_norm = np.where(closer, cd[rows, k], best_norm)
    ux, uy = _unit(best_x, best_y, best_norm)
    mag = cfg.wall_strength * np.exp((rad - best_d) / cfg.wall_range)
    return np.stack([mag * ux, mag * uy], axis=1)


def social_force(
    ped: Pedestrian,
    others: Sequence[Pedestrian],
    robot: Optional[RobotState],
    world_map: Optional[WorldMap],
    cfg: SocialForceConfig = SocialForceConfig(),
) -> np.ndarray:
    """Acceleration on ``ped`` from its goal, ``others``, the robot and the map."""
    others = [o for o in others if o is not ped]
    return social_forces([ped, *others], robot, world_map, cfg)[0]


def goal_clearing_force(ped: Pedestrian, robot: Optional[RobotState], cfg: SocialForceConfig = SocialForceConfig()):
    """Push a goal-clearing pedestrian away from the robot, ``k / max(d, eps)`` strong."""
    if ped.state != SocialState.CLEARING_GOAL or robot is None:
        return np.zeros(2)
    delta = ped.position - robot.position
    d = math.hypot(*delta)
    u = delta / d if d > 0 else np.array([1.0, 0.0])
    return cfg.clear_strength / max(d, cfg.clear_epsilon) * u


def _evolve(ped: Pedestrian, **changes) -> Pedestrian:
    """``replace`` without re-validation, for the per-step hot path."""
    new = object.__new__(Pedestrian)
    new.__dict__.update(ped.__dict__)
    new.__dict__.update(changes)
    return new


def step_pedestrians(
    peds: Sequence[Pedestrian],
    robot: Optional[RobotState],
    world_map: Optional[WorldMap],
    dt: float,
    cfg: SocialForceConfig = SocialForceConfig(),
) -> list:
    """Semi-implicit Euler step of all pedestrians from the same force snapshot."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    forces = social_forces(peds, robot, world_map, cfg)
    for k, ped in enumerate(peds):
        if ped.state == SocialState.CLEARING_GOAL:
            forces[k] += goal_clearing_force(ped, robot, cfg)
    vel = np.array([p.velocity for p in peds]).reshape(-1, 2) + forces * dt
    speed = np.hypot(vel[:, 0], vel[:, 1])
    over = speed > cfg.speed_cap
    vel[over] *= (cfg.speed_cap / speed[over])[:, None]
    pos = np.array([p.position for p in peds]).reshape(-1, 2) + vel * dt
    if world_map is not None:
        xmin, ymin, xmax, ymax = world_map.bounds
        pos[:, 0] = np.clip(pos[:, 0], xmin, xmax)
        pos[:, 1] = np.clip(pos[:, 1], ymin, ymax)
    out = []
    for ped, p, v in zip(peds, pos, vel):
        new = _evolve(ped, position=p, velocity=v)
        if (
            new.group is not None
            and new.state == SocialState.WALKING
            and new.goal is not None
            and math.hypot(*(new.goal - p)) <= cfg.group_join_radius
        ):
            new = new.with_state(SocialState.TALKING, goal=new.goal)
        out.append(new)
    return out

"""2D geometry, static maps, unicycle kinematics and a simulated planar lidar."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

V_MAX = 0.22
MIN_RANGE = 1e-9


class LimitsError(ValueError):
    """A velocity command outside the robot's limits."""


def vec2(x, y=None) -> np.ndarray:
    """Build a finite float64 2-vector from ``(x, y)`` or a length-2 sequence."""
    v = np.asarray([x, y] if y is not None else x, dtype=float).reshape(2)
    if not (math.isfinite(v[0]) and math.isfinite(v[1])):
        raise ValueError(f"non-finite vector {v!r}")
    return v


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    if -math.pi <= a < math.pi:
        return a  # exact for in-range angles
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(eq=False)
class WorldMap:
    """Axis-aligned bounds, wall segments ``(x0, y0, x1, y1)`` and static circles ``(cx, cy, r)``."""

    bounds: tuple[float, float, float, float]
    walls: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    static_obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate bounds {self.bounds}")
        self.walls = np.asarray(self.walls, dtype=float).reshape(-1, 4)
        self.static_obstacles = np.asarray(self.static_obstacles, dtype=float).reshape(-1, 3)
        lengths = np.hypot(self.walls[:, 2] - self.walls[:, 0], self.walls[:, 3] - self.walls[:, 1])
        if np.any(lengths <= 0):
            raise ValueError("wall segments must have nonzero length")
        c = self.static_obstacles
        if len(c):
            if np.any(c[:, 2] <= 0):
                raise ValueError("static obstacle radii must be positive")
            inside = (
                (c[:, 0] - c[:, 2] >= xmin)
                & (c[:, 0] + c[:, 2] <= xmax)
                & (c[:, 1] - c[:, 2] >= ymin)
                & (c[:, 1] + c[:, 2] <= ymax)
            )
            if not np.all(inside):
                raise ValueError("static obstacles must lie within bounds")

    @classmethod
    def rectangle(cls, width: float, height: float, static_obstacles=None, walls=None) -> "WorldMap":
        """A ``width x height`` room anchored at the origin and enclosed by four walls."""
        boundary = np.array(
            [
                [0.0, 0.0, width, 0.0],
                [width, 0.0, width, height],
                [width, height, 0.0, height],
                [0.0, height, 0.0, 0.0],
            ]
        )
        extra = np.zeros((0, 4)) if walls is None else np.asarray(walls, dtype=float).reshape(-1, 4)
        return cls(
            bounds=(0.0, 0.0, width, height),
            walls=np.vstack([boundary, extra]),
            static_obstacles=np.zeros((0, 3)) if static_obstacles is None else static_obstacles,
        )

    def contains(self, p, margin: float = 0.0) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin + margin <= p[0] <= xmax - margin and ymin + margin <= p[1] <= ymax - margin

    def clamp(self, p) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.bounds
        return np.array([min(max(p[0], xmin), xmax), min(max(p[1], ymin), ymax)])

    def nearest_static_distance(self, p) -> float:
        """Distance from ``p`` to the closest wall point or static circle surface (inf if none)."""
        d = math.inf
        if len(self.walls):
            _, dist = closest_points_on_segments(np.asarray(p, dtype=float), self.walls)
            d = float(dist.min())
        if len(self.static_obstacles):
            c = self.static_obstacles
            d = min(d, float(np.min(np.hypot(c[:, 0] - p[0], c[:, 1] - p[1]) - c[:, 2])))
        return d


def closest_points_on_segments(p: np.ndarray, segments: np.ndarray):
    """Closest point on each segment to ``p`` and the distances, vectorised over segments."""
    a = segments[:, :2]
    e = segments[:, 2:] - a
    s = np.einsum("ij,ij->i", p - a, e) / np.einsum("ij,ij->i", e, e)
    q = a + np.clip(s, 0.0, 1.0)[:, None] * e
    return q, np.hypot(p[0] - q[:, 0], p[1] - q[:, 1])


@dataclass(frozen=True, eq=False)
class RobotState:
    position: np.ndarray
    heading: float = 0.0
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0
    radius: float = 0.2
    goal: Optional[np.ndarray] = None
    task_flag: int = 0
    v_max: float = V_MAX

    def __post_init__(self):
        object.__setattr__(self, "position", vec2(self.position))
        if self.goal is not None:
            object.__setattr__(self, "goal", vec2(self.goal))
        if self.radius <= 0:
            raise ValueError("robot radius must be positive")
        if not 0.0 <= self.linear_velocity <= self.v_max + 1e-12:
            raise LimitsError(f"linear velocity {self.linear_velocity} outside [0, {self.v_max}]")
        if self.task_flag not in range(6):
            raise ValueError(f"task flag {self.task_flag} outside 0..5")

    @property
    def pose(self) -> tuple[float, float, float]:
        return float(self.position[0]), float(self.position[1]), float(self.heading)

    @property
    def velocity(self) -> np.ndarray:
        """World-frame velocity vector."""
        return self.linear_velocity * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class LidarConfig:
    angle_min: float = -math.pi
    angle_max: float = math.pi - 2.0 * math.pi / 360
    num_beams: int = 360
    max_range: float = 3.5

    def __post_init__(self):
        if not self.angle_max > self.angle_min:
            raise ValueError("angle_max must exceed angle_min")
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    def beam_angles(self) -> np.ndarray:
        """Beam angles relative to the robot heading."""
        step = (self.angle_max - self.angle_min) / max(self.num_beams - 1, 1)
        return self.angle_min + np.arange(self.num_beams) * step


@dataclass(frozen=True, eq=False)
class LidarScan:
    ranges: np.ndarray
    max_range: float = 3.5

    def __post_init__(self):
        object.__setattr__(self, "ranges", np.asarray(self.ranges, dtype=float).reshape(-1))

    def __len__(self):
        return len(self.ranges)

    def min(self) -> float:
        return float(self.ranges.min())


def _as_circles(pedestrians) -> np.ndarray:
    if pedestrians is None:
        return np.zeros((0, 3))
    if isinstance(pedestrians, np.ndarray):
        return pedestrians.reshape(-1, 3)
    return np.array(
        [(p.position[0], p.position[1], p.radius) for p in pedestrians], dtype=float
    ).reshape(-1, 3)


def raycast(
    pose: Sequence[float],
    world_map: WorldMap,
    pedestrians=None,
    config: LidarConfig = LidarConfig(),
) -> LidarScan:
    """Cast ``config.num_beams`` rays from ``pose = (x, y, heading)``.

    Each range is the distance to the first intersection with a wall segment,
    a static circle or a pedestrian circle, clamped to ``config.max_range``.
    ``pedestrians`` is either an ``(k, 3)`` array of circles or a sequence of
    objects with ``position`` and ``radius``. A beam origin inside a circle
    reports the minimum positive range.
    """
    x, y, heading = pose
    angles = heading + config.beam_angles()
    dx, dy = np.cos(angles), np.sin(angles)
    ranges = np.full(angles.shape, float(config.max_range))

    walls = world_map.walls
    if len(walls):
        ex = walls[:, 2] - walls[:, 0]
        ey = walls[:, 3] - walls[:, 1]
        wx = walls[:, 0] - x
        wy = walls[:, 1] - y
        denom = dx[:, None] * ey[None, :] - dy[:, None] * ex[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (wx * ey - wy * ex)[None, :] / denom
            s = (wx[None, :] * dy[:, None] - wy[None, :] * dx[:, None]) / denom
        hit = (np.abs(denom) > 1e-12) & (s >= 0.0) & (s <= 1.0) & (t >= 0.0)
        ranges = np.minimum(ranges, np.where(hit, t, np.inf).min(axis=1))

    circles = np.vstack([world_map.static_obstacles, _as_circles(pedestrians)])
    if len(circles):
        # circles entirely beyond max range cannot be hit
        reach = np.hypot(circles[:, 0] - x, circles[:, 1] - y) - circles[:, 2]
        circles = circles[reach <= config.max_range]
    if len(circles):
        fx = x - circles[:, 0]
        fy = y - circles[:, 1]
        cc = fx * fx + fy * fy - circles[:, 2] ** 2
        b = dx[:, None] * fx[None, :] + dy[:, None] * fy[None, :]
        disc = b * b - cc[None, :]
        with np.errstate(invalid="ignore"):
            t_near = -b - np.sqrt(disc)
        hit = (disc >= 0.0) & (t_near >= 0.0)
        t = np.where(hit, t_near, np.inf)
        t = np.where(cc[None, :] <= 0.0, 0.0, t)
        ranges = np.minimum(ranges, t.min(axis=1))

    return LidarScan(np.maximum(ranges, MIN_RANGE), config.max_range)


def integrate_robot(
    state: RobotState, command: tuple[float, float], dt: float, bounds: Optional[WorldMap] = None
) -> RobotState:
    """Advance unicycle kinematics one step, heading first, then position along the new heading."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, w = float(command[0]), float(command[1])
    if not (math.isfinite(v) and math.isfinite(w)):
        raise LimitsError(f"non-finite command {command!r}")
    if v < 0.0 or v > state.v_max + 1e-12:
        raise LimitsError(f"linear command {v} outside [0, {state.v_max}]")
    heading = wrap_angle(state.heading + w * dt)
    pos = state.position + v * dt * np.array([math.cos(heading), math.sin(heading)])
    if bounds is not None:
        pos = bounds.clamp(pos)
    return replace(state, position=pos, heading=heading, linear_velocity=min(v, state.v_max), angular_velocity=w)


def check_collision(scan, robot_radius: float) -> bool:
    """True iff the closest lidar return is strictly inside the robot radius."""
    ranges = scan.ranges if isinstance(scan, LidarScan) else np.asarray(scan, dtype=float)
    return bool(ranges.min() < robot_radius)

"""Semantic task layer: pedestrian social states -> (task flag, current goal)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from crowdnav.pedsim import Pedestrian, SocialState

GUIDE_REVERT_DISTANCE = 3.0
FOLLOW_KEEP_DISTANCE = 4.0


class TaskStage(Enum):
    NORMAL = "normal"
    STAGE_ONE = "stage_one"
    STAGE_TWO = "stage_two"


@dataclass(frozen=True)
class PedGoal:
    """A goal that tracks a pedestrian by id."""

    ped_id: int


Goal = Union[tuple, PedGoal, None]


@dataclass(frozen=True)
class TaskAssignment:
    flag: int
    goal: Goal
    vip_id: Optional[int] = None

    def __post_init__(self):
        if self.flag not in range(6):
            raise ValueError(f"task flag {self.flag} outside 0..5")

    @property
    def stage(self) -> TaskStage:
        return task_stage(self.flag)

    def goal_position(self, peds: Sequence[Pedestrian]) -> Optional[np.ndarray]:
        """Resolve the goal to a point, following a pedestrian goal to its position."""
        if self.goal is None:
            return None
        if isinstance(self.goal, PedGoal):
            for p in peds:
                if p.id == self.goal.ped_id:
                    return p.position
            return None
        return np.asarray(self.goal, dtype=float)


def _distance(ped: Pedestrian, robot) -> float:
    return math.hypot(ped.position[0] - robot.position[0], ped.position[1] - robot.position[1])


def _ordered(peds):
    return sorted(peds, key=lambda p: p.id)


def select_goal_guiding(peds: Sequence[Pedestrian], robot, end_goal) -> TaskAssignment:
    """Robot-guides-human task; later pedestrians (by id) overwrite earlier matches."""
    flag, goal, vip = 0, tuple(map(float, end_goal)), None
    for ped in _ordered(peds):
        if ped.state == SocialState.REQUESTING_GUIDE:
            flag, goal, vip = 1, PedGoal(ped.id), ped.id
        elif ped.state == SocialState.FOLLOWING_GUIDE:
            flag, vip = 2, ped.id
            if _distance(ped, robot) > GUIDE_REVERT_DISTANCE:
                flag, goal = 1, PedGoal(ped.id)
    return TaskAssignment(flag, goal, vip)


def select_goal_following(peds: Sequence[Pedestrian], robot, end_goal) -> TaskAssignment:
    """Robot-follows-human task; the goal is dropped while the VIP is within 4 m."""
    flag, goal, vip = 0, tuple(map(float, end_goal)), None
    for ped in _ordered(peds):
        if ped.state in (SocialState.REQUESTING_FOLLOWER, SocialState.GUIDE_TO_GOAL):
            flag = 3 if ped.state == SocialState.REQUESTING_FOLLOWER else 4
            goal = PedGoal(ped.id) if _distance(ped, robot) > FOLLOW_KEEP_DISTANCE else None
            vip = ped.id
        elif ped.state == SocialState.CLEARING_GOAL:
            flag, vip = 5, ped.id
    return TaskAssignment(flag, goal, vip)


def task_stage(flag: int) -> TaskStage:
    if flag == 0:
        return TaskStage.NORMAL
    if flag in (1, 3):
        return TaskStage.STAGE_ONE
    if flag in (2, 4, 5):
        return TaskStage.STAGE_TWO
    raise ValueError(f"task flag {flag!r} outside 0..5")

"""Dense per-step reward with a per-term breakdown."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from crowdnav.tasks import TaskStage


class DoneReason(str, Enum):
    NONE = "none"
    SUCCESS = "success"
    COLLISION = "collision"


@dataclass(frozen=True)
class RewardConfig:
    success_reward: float = 2.0
    collision_reward: float = -4.0
    approach_coeff: float = 0.018
    stall_penalty: float = -0.03
    recede_penalty: float = -0.014
    static_safety_penalty: float = -0.15
    static_safety_distance: float = 0.5
    dynamic_safety_coeff: float = 0.08
    dynamic_safety_sign: float = -1.0
    goal_radius: float = 0.3
    stage1_min_dist: float = 3.0
    stage2_max_dist: float = 4.0
    distance_epsilon: float = 1e-3
    step_max: int = 1800

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ValueError("goal_radius must be positive")
        if self.step_max <= 0:
            raise ValueError("step_max must be positive")
        if self.dynamic_safety_sign not in (1.0, -1.0):
            raise ValueError("dynamic_safety_sign must be +1 or -1")


@dataclass(frozen=True)
class StepContext:
    """Everything the reward terms read about one transition.

    ``goal_distance`` is the robot-to-goal distance used for the success
    check (``None`` when the current goal is not a terminal goal);
    ``d_rg_prev``/``d_rg_curr`` measure progress toward the current target.
    """

    scan_min: float
    robot_radius: float
    step_current: int
    d_rg_prev: float
    d_rg_curr: float
    goal_distance: Optional[float] = None
    static_distance: float = math.inf
    ped_distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ped_safety: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stage: TaskStage = TaskStage.NORMAL
    d_rp: Optional[float] = None


@dataclass(frozen=True)
class RewardTerms:
    r_success: float = 0.0
    r_collision: float = 0.0
    r_distance: float = 0.0
    r_static_safety: float = 0.0
    r_dynamic_safety: float = 0.0
    done_reason: DoneReason = DoneReason.NONE

    @property
    def total(self) -> float:
        return self.r_success + self.r_collision + self.r_distance + self.r_static_safety + self.r_dynamic_safety

    def as_tuple(self) -> tuple:
        return (self.r_success, self.r_collision, self.r_distance, self.r_static_safety, self.r_dynamic_safety)


def r_success(ctx: StepContext, cfg: RewardConfig) -> tuple[float, bool]:
    if ctx.goal_distance is not None and ctx.goal_distance < cfg.goal_radius:
        return cfg.success_reward, True
    return 0.0, False


def r_collision(ctx: StepContext, cfg: RewardConfig) -> tuple[float, bool]:
    if ctx.scan_min < ctx.robot_radius:
        return cfg.collision_reward, True
    return 0.0, False


def _stage_condition(ctx: StepContext, cfg: RewardConfig) -> bool:
    if ctx.stage == TaskStage.NORMAL or ctx.d_rp is None:
        return True
    if ctx.stage == TaskStage.STAGE_ONE:
        return ctx.d_rp >= cfg.stage1_min_dist
    return ctx.d_rp <= cfg.stage2_max_dist


def r_distance(ctx: StepContext, cfg: RewardConfig) -> float:
    """Progress term; approaching pays ``0.018 e^(1-t)`` with ``t = step / step_max``."""
    delta = ctx.d_rg_curr - ctx.d_rg_prev
    if delta < -cfg.distance_epsilon and _stage_condition(ctx, cfg):
        t = ctx.step_current / cfg.step_max
        return cfg.approach_coeff * math.exp(1.0 - t)
    if abs(delta) <= cfg.distance_epsilon:
        return cfg.stall_penalty
    return cfg.recede_penalty


def r_static_safety(ctx: StepContext, cfg: RewardConfig) -> float:
    # once per step, however many static obstacles are too close
    return cfg.static_safety_penalty if ctx.static_distance < cfg.static_safety_distance else 0.0


def r_dynamic_safety(ctx: StepContext, cfg: RewardConfig) -> float:
    d_rh = np.asarray(ctx.ped_distances, dtype=float)
    d_safe = np.asarray(ctx.ped_safety, dtype=float)
    if d_rh.size == 0:
        return 0.0
    inside = d_rh < d_safe
    if not inside.any():
        return 0.0
    ratio = d_rh[inside] / d_safe[inside]
    total = 0.0
    for r in ratio:
        total += cfg.dynamic_safety_sign * cfg.dynamic_safety_coeff * math.exp(1.0 - r)
    return total


def compute_reward(ctx: StepContext, cfg: RewardConfig = RewardConfig()) -> tuple[float, RewardTerms]:
    """Sum the five terms; a collision outranks a simultaneous success."""
    rs, success = r_success(ctx, cfg)
    rc, collision = r_collision(ctx, cfg)
    reason = DoneReason.COLLISION if collision else DoneReason.SUCCESS if success else DoneReason.NONE
    if collision:
        rs = 0.0  # no success bonus on a crash
    terms = RewardTerms(
        r_success=rs,
        r_collision=rc,
        r_distance=r_distance(ctx, cfg),
        r_static_safety=r_static_safety(ctx, cfg),
        r_dynamic_safety=r_dynamic_safety(ctx, cfg),
        done_reason=reason,
    )
    return terms.total, terms

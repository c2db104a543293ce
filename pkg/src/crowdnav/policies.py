"""Policies that map an observation vector to a discrete action."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from crowdnav.env import Action, rng_streams
from crowdnav.learner import forward, load_checkpoint
from crowdnav.observation import LIDAR_DIM, AgentVariant
from crowdnav.world import LidarConfig


class GreedyGoalPolicy:
    """Turn toward the current goal and drive forward when the way ahead is clear.

    Stops when the observation carries no goal (the ``-1`` sentinel).
    """

    name = "greedy-goal"
    variant = None  # reads only lidar and goal, which every variant keeps

    def __init__(self, turn_threshold=0.35, fine_threshold=0.08, clearance=0.55, lidar=LidarConfig()):
        self.turn_threshold = turn_threshold
        self.fine_threshold = fine_threshold
        self.clearance = clearance
        edges = np.linspace(lidar.angle_min, lidar.angle_max + (lidar.angle_max - lidar.angle_min) / max(lidar.num_beams - 1, 1), LIDAR_DIM + 1)
        lo, hi = edges[:-1], edges[1:]
        self.front = np.flatnonzero((hi > -math.radians(20)) & (lo < math.radians(20)))

    def reset(self, seed: int) -> None:
        pass

    def __call__(self, obs) -> Action:
        dist, bearing = obs[LIDAR_DIM], obs[LIDAR_DIM + 1]
        if dist < 0:
            return Action.STOP
        if bearing > self.turn_threshold:
            return Action.STRONG_LEFT
        if bearing < -self.turn_threshold:
            return Action.STRONG_RIGHT
        if np.min(obs[self.front]) < self.clearance:
            return Action.STOP
        if bearing > self.fine_threshold:
            return Action.LEFT
        if bearing < -self.fine_threshold:
            return Action.RIGHT
        return Action.FORWARD


class RandomPolicy:
    name = "random"
    variant = None

    def __init__(self):
        self.rng = np.random.default_rng(0)

    def reset(self, seed: int) -> None:
        self.rng = rng_streams(seed)["learner"]

    def __call__(self, obs) -> Action:
        return Action(int(self.rng.integers(len(Action))))


class CheckpointPolicy:
    """Greedy policy from a saved network; remembers the variant it was trained on."""

    def __init__(self, path):
        self.path = str(path)
        self.spec, self.params, self.variant = load_checkpoint(path)
        self.name = Path(path).stem

    def reset(self, seed: int) -> None:
        pass

    def __call__(self, obs) -> Action:
        q, _ = forward(self.spec, self.params, obs)
        return Action(int(np.argmax(q)))


def make_policy(name: str):
    """``greedy-goal``, ``random`` or a checkpoint path."""
    if name == "greedy-goal":
        return GreedyGoalPolicy()
    if name == "random":
        return RandomPolicy()
    if Path(name).is_file():
        return CheckpointPolicy(name)
    raise ValueError(f"unknown policy {name!r} (expected greedy-goal, random or a checkpoint file)")


def check_variant(policy, variant: AgentVariant) -> None:
    """A trained policy only accepts observations masked the way it was trained."""
    expected: Optional[AgentVariant] = getattr(policy, "variant", None)
    if expected is not None and AgentVariant(expected) != AgentVariant(variant):
        raise ValueError(
            f"policy {getattr(policy, 'name', policy)!r} was trained on the {expected.value} variant, "
            f"environment produces {AgentVariant(variant).value}"
        )

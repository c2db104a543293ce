"""Assembly of the 504-scalar observation vector.

Layout (offsets into the flat vector)::

    [0, 40)     lidar: current scan reduced to 40 bucket minima
    [40, 504)   8 semantic frames of 58 scalars, newest first

and each 58-scalar frame is::

    goal (distance, bearing) | task flag | VIP (x, y, vx, vy, orientation, distance) |
    7 pedestrians x (type, state, radius, safety distance, distance, x, y)

Everything relative is expressed in the robot frame. ``-1`` marks absent or
masked values.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from crowdnav.pedsim import Pedestrian
from crowdnav.tasks import TaskAssignment
from crowdnav.world import LidarScan, RobotState, rotation, wrap_angle

INVALID = -1.0
LIDAR_DIM = 40
N_FRAMES = 8
N_PEDS = 7
PED_FIELDS = 7
GOAL_DIM = 2
FLAG_DIM = 1
VIP_DIM = 6
DIRECT_DIM = GOAL_DIM + FLAG_DIM + VIP_DIM
PED_BLOCK = N_PEDS * PED_FIELDS
FRAME_DIM = DIRECT_DIM + PED_BLOCK
OBS_DIM = LIDAR_DIM + N_FRAMES * FRAME_DIM

PED_FIELD_NAMES = ("type", "state", "radius", "safety_distance", "distance", "x", "y")
STATE_FIELD = PED_FIELD_NAMES.index("state")
SAFETY_FIELD = PED_FIELD_NAMES.index("safety_distance")

if OBS_DIM != 504:  # pragma: no cover - guards edits to the constants above
    raise ImportError(f"observation layout sums to {OBS_DIM}, expected 504")


class AgentVariant(Enum):
    RAW = "raw"
    SAFE_ZONE = "safezone"
    NO_SAFE_ZONE = "nosafezone"
    COMPLETE = "complete"


def obs_layout() -> list[tuple[str, int, int]]:
    """(name, offset, length) rows covering the whole vector in order."""
    rows = [("lidar", 0, LIDAR_DIM)]
    for k in range(N_FRAMES):
        base = LIDAR_DIM + k * FRAME_DIM
        rows.append((f"frame{k}.goal", base, GOAL_DIM))
        rows.append((f"frame{k}.flag", base + GOAL_DIM, FLAG_DIM))
        rows.append((f"frame{k}.vip", base + GOAL_DIM + FLAG_DIM, VIP_DIM))
        for j in range(N_PEDS):
            rows.append((f"frame{k}.ped{j}", base + DIRECT_DIM + j * PED_FIELDS, PED_FIELDS))
    return rows


def _frame_offsets(start: int, length: int) -> np.ndarray:
    """Indices of ``[start, start + length)`` within every frame of the flat vector."""
    frames = LIDAR_DIM + FRAME_DIM * np.arange(N_FRAMES)
    return (frames[:, None] + start + np.arange(length)[None, :]).ravel()


LIDAR_INDEX = np.arange(LIDAR_DIM)
DIRECT_INDEX = _frame_offsets(0, DIRECT_DIM)
PED_INDEX = _frame_offsets(DIRECT_DIM, PED_BLOCK)
VIP_INDEX = _frame_offsets(GOAL_DIM + FLAG_DIM, VIP_DIM)
STATE_INDEX = DIRECT_DIM + PED_FIELDS * np.arange(N_PEDS) + STATE_FIELD
SAFETY_INDEX = DIRECT_DIM + PED_FIELDS * np.arange(N_PEDS) + SAFETY_FIELD

_MASKS = {
    AgentVariant.COMPLETE: np.zeros(0, dtype=int),
    AgentVariant.SAFE_ZONE: np.concatenate([_frame_offsets(i, 1) for i in STATE_INDEX]),
    AgentVariant.NO_SAFE_ZONE: np.concatenate([_frame_offsets(i, 1) for i in SAFETY_INDEX]),
    AgentVariant.RAW: np.concatenate([PED_INDEX, VIP_INDEX]),
}


def ped_entry(ped: Pedestrian, robot: RobotState) -> np.ndarray:
    delta = ped.position - robot.position
    rel = rotation(-robot.heading) @ delta
    return np.array(
        [
            float(ped.ped_type),
            float(ped.state),
            ped.radius,
            ped.safety_distance,
            math.hypot(delta[0], delta[1]),
            rel[0],
            rel[1],
        ]
    )


def nearest_k_peds(peds: Sequence[Pedestrian], robot: RobotState, k: int = N_PEDS) -> np.ndarray:
    """``(k, 7)`` entries of the nearest pedestrians, closest first.

    With fewer than ``k`` pedestrians the existing entries repeat cyclically;
    with none, every scalar is ``-1``.
    """
    if not peds:
        return np.full((k, PED_FIELDS), INVALID)
    pos = np.array([p.position for p in peds])
    delta = pos - robot.position
    rel = delta @ rotation(-robot.heading).T
    entries = np.column_stack(
        [
            [float(p.ped_type) for p in peds],
            [float(p.state) for p in peds],
            [p.radius for p in peds],
            [p.safety_distance for p in peds],
            np.hypot(delta[:, 0], delta[:, 1]),
            rel,
        ]
    )
    # stable sort keeps input (id) order among equal distances
    entries = entries[np.argsort(entries[:, 4], kind="stable")][:k]
    return entries[np.arange(k) % len(entries)]


def encode_frame(
    robot: RobotState,
    task: TaskAssignment,
    peds: Sequence[Pedestrian],
    vip: Optional[Pedestrian] = None,
) -> np.ndarray:
    """One 58-scalar semantic frame."""
    frame = np.full(FRAME_DIM, INVALID)
    to_robot = rotation(-robot.heading)
    goal = task.goal_position(peds)
    if goal is not None:
        delta = goal - robot.position
        frame[0] = math.hypot(delta[0], delta[1])
        frame[1] = wrap_angle(math.atan2(delta[1], delta[0]) - robot.heading)
    frame[2] = float(task.flag)
    if vip is not None:
        delta = vip.position - robot.position
        frame[3:5] = to_robot @ delta
        frame[5:7] = to_robot @ (vip.velocity - robot.velocity)
        if vip.speed > 1e-9:
            frame[7] = wrap_angle(math.atan2(vip.velocity[1], vip.velocity[0]) - robot.heading)
        else:
            frame[7] = 0.0
        frame[8] = math.hypot(delta[0], delta[1])
    frame[DIRECT_DIM:] = nearest_k_peds(peds, robot).ravel()
    return frame


def reset_history(frame: np.ndarray) -> np.ndarray:
    """History at episode start: the first frame replicated ``N_FRAMES`` times."""
    return np.tile(np.asarray(frame, dtype=float), (N_FRAMES, 1))


def stack_history(new_frame: np.ndarray, history: Optional[np.ndarray]) -> np.ndarray:
    """Push ``new_frame`` to index 0, dropping the oldest frame."""
    if history is None or len(history) == 0:
        return reset_history(new_frame)
    history = np.asarray(history, dtype=float)
    if len(history) > N_FRAMES:
        raise ValueError(f"history holds {len(history)} frames, max {N_FRAMES}")
    if len(history) < N_FRAMES:
        history = np.vstack([history, np.tile(history[-1], (N_FRAMES - len(history), 1))])
    return np.vstack([np.asarray(new_frame, dtype=float)[None, :], history[:-1]])


def downsample_lidar(scan, out: int = LIDAR_DIM) -> np.ndarray:
    """Minimum over ``out`` contiguous angular buckets."""
    ranges = scan.ranges if isinstance(scan, LidarScan) else np.asarray(scan, dtype=float)
    if len(ranges) < out:
        raise ValueError(f"scan has {len(ranges)} beams, need at least {out}")
    if len(ranges) % out == 0:
        return ranges.reshape(out, -1).min(axis=1)
    return np.array([b.min() for b in np.array_split(ranges, out)])


def assemble(lidar: np.ndarray, history: np.ndarray) -> np.ndarray:
    obs = np.concatenate([np.asarray(lidar, dtype=float), np.asarray(history, dtype=float).ravel()])
    if obs.shape != (OBS_DIM,):
        raise ValueError(f"observation has shape {obs.shape}, expected ({OBS_DIM},)")
    return obs


def apply_variant_mask(obs: np.ndarray, variant: AgentVariant) -> np.ndarray:
    """Overwrite the fields hidden from ``variant`` with ``-1`` (1-D or batched)."""
    out = np.array(obs, dtype=float, copy=True)
    idx = _MASKS[AgentVariant(variant)]
    out[..., idx] = INVALID
    return out


class VariantMasker(TransformerMixin, BaseEstimator):
    """Stateless transformer hiding semantic fields per agent variant.

    Lets the masking step sit inside a scikit-learn pipeline over batches of
    recorded observations.
    """

    def __init__(self, variant="complete"):
        self.variant = variant

    def fit(self, X, y=None):
        check_array(X)
        self.n_features_in_ = OBS_DIM
        return self

    def transform(self, X):
        X = check_array(X, dtype=float, ensure_all_finite=True)
        if X.shape[1] != OBS_DIM:
            raise ValueError(f"expected {OBS_DIM} features, got {X.shape[1]}")
        return apply_variant_mask(X, AgentVariant(self.variant))

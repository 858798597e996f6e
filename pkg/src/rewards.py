# -*- coding: utf-8 -*-
"""
Reward terms and their weighted sum.

  total = alpha * r_succ + beta * r_aff + gamma * r_pose + eta * r_entropy

Variants (RewardConfig.variant):
  dexvip            every term
  graff_like        no pose prior (pose slot = 0)
  com               no pose prior; affordance term pulls towards the object CoM
  touch             +1 in the pose slot once the touch gate opens, no affordance term
  affordance_touch  affordance term plus the +1 touch bonus
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .config import RewardConfig
from .errors import EmptySet
from .handmodel import HAND_SLICE, ROBOT_LEVELS, RobotJointVector, TOUCH_LAYOUT
from .utils import wrapped_abs_diff

_LEVEL_KEYS = ("wrist", "knuckle", "middle", "distal")


@dataclass(frozen=True)
class StepRewardBreakdown:
    r_succ: float
    r_aff: float
    r_pose: float
    r_entropy: float
    total: float
    gate_active: bool

    def as_dict(self) -> dict:
        return asdict(self)


def chamfer(M: np.ndarray, N: np.ndarray) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if M.size == 0 or N.size == 0:
        raise EmptySet("chamfer distance needs two non-empty point sets")
    d2 = cdist(M, N, "sqeuclidean")
    return float(d2.min(axis=1).sum() + d2.min(axis=0).sum())


def r_aff(hand_points: np.ndarray, aff_points: np.ndarray, variant: str = "dexvip",
          com: Optional[np.ndarray] = None) -> float:
    if variant == "com":
        if com is None:
            raise EmptySet("com variant needs the object centre of mass")
        return -chamfer(hand_points, np.asarray(com, dtype=float).reshape(1, 3))
    return -chamfer(hand_points, aff_points)


def gate_threshold(gate_fraction: float, n_sensors: int = len(TOUCH_LAYOUT)) -> int:
    # 0.3 * 21 = 6.3 -> 7
    return int(math.ceil(gate_fraction * n_sensors - 1e-9))


def level_errors(current: RobotJointVector, target: RobotJointVector,
                 levels: Sequence[str] = ROBOT_LEVELS) -> dict:
    """Summed wrapped error per level over the 24 hand revolutes; `levels` tags all 30 joints."""
    err = wrapped_abs_diff(current.hand, target.hand)
    hand_levels = np.asarray(levels[HAND_SLICE])
    return {lvl: float(err[hand_levels == lvl].sum()) for lvl in _LEVEL_KEYS}


def r_pose(current: RobotJointVector, target: RobotJointVector, touch_active_count: int,
           cfg: RewardConfig, levels: Sequence[str] = ROBOT_LEVELS) -> float:
    if touch_active_count < gate_threshold(cfg.gate_fraction):
        return 0.0
    e = level_errors(current, target, levels)
    return -(cfg.gamma1 * e["wrist"] + cfg.gamma2 * e["knuckle"]
             + cfg.gamma3 * e["middle"] + cfg.gamma4 * e["distal"])


def r_succ(hand_object_contact: bool, object_table_contact: bool) -> float:
    return 1.0 if (hand_object_contact and not object_table_contact) else 0.0


def r_entropy(log_std: np.ndarray) -> float:
    """Differential entropy of a diagonal Gaussian with the given log standard deviations."""
    ls = np.asarray(log_std, dtype=float)
    return float(np.sum(0.5 * math.log(2.0 * math.pi * math.e) + ls))


UNIT_ENTROPY_30 = r_entropy(np.zeros(30))


def total_reward(succ: float, aff: float, pose: float, entropy: float, touch_active_count: int,
                 cfg: RewardConfig) -> StepRewardBreakdown:
    """Combine raw terms according to the configured variant.

    `pose` is the gated r_pose value; variants without a pose prior ignore it.
    """
    gate = touch_active_count >= gate_threshold(cfg.gate_fraction)
    v = cfg.variant
    if v in ("graff_like", "com"):
        pose = 0.0
    elif v == "touch":
        aff = 0.0
        pose = 1.0 if gate else 0.0
    elif v == "affordance_touch":
        pose = 1.0 if gate else 0.0
    total = cfg.alpha * succ + cfg.beta * aff + cfg.gamma * pose + cfg.eta * entropy
    return StepRewardBreakdown(float(succ), float(aff), float(pose), float(entropy), float(total), bool(gate))


def step_reward(hand_points: np.ndarray, aff_points: np.ndarray, com: np.ndarray,
                current: RobotJointVector, target: Optional[RobotJointVector],
                touch_active_count: int, hand_object_contact: bool, object_table_contact: bool,
                cfg: RewardConfig, entropy: float = UNIT_ENTROPY_30,
                levels: Sequence[str] = ROBOT_LEVELS) -> StepRewardBreakdown:
    """All terms for one simulator step."""
    succ = r_succ(hand_object_contact, object_table_contact)
    aff = r_aff(hand_points, aff_points, cfg.variant, com)
    pose = 0.0 if target is None else r_pose(current, target, touch_active_count, cfg, levels)
    return total_reward(succ, aff, pose, entropy, touch_active_count, cfg)

# -*- coding: utf-8 -*-
"""
Human keypoints -> robot joint vector.

Stages:
  a) keypoints in world coordinates (input)
  b) root relative: translate so the wrist is the origin; the palmar plane
     through wrist, index knuckle and ring knuckle (plus its normal) gives the
     arm orientation as a rotation vector
  c) parent relative: one orthonormal frame per joint, built outward from the
     wrist. The frame at joint J sits at J with Z along the incoming bone
     parent(J) -> J, so a straight finger continues along +Z; Y is the palm
     normal with its Z component removed ("outward"), X = Y x Z
  d) joint angles: azimuth / elevation of each joint's child read in that
     joint's frame, copied onto robot revolutes through RETARGET_MAP

The human->robot table is a reconstruction: only the middle-phalanx example
and the little-finger metacarpal rule are documented for the original
pipeline; every other row follows the same pattern. Wrist revolutes have no
human counterpart (no forearm keypoint) and stay at 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import CollinearPalm, DegenerateBone
from .handmodel import (
    DEFAULT_LIMITS,
    HUMAN_HIERARCHY,
    HUMAN_INDEX,
    HUMAN_LABELS,
    N_ROBOT,
    ROBOT_INDEX,
    ROBOT_JOINTS,
    HumanHandKeypoints,
    RobotJointVector,
    clamp_to_limits,
)

COLLINEAR_TOL = 1e-8
BONE_MIN = 1e-6
PARALLEL_TOL = 1e-6

# robot joint -> (human joint whose child direction is read, angle, factor)
RETARGET_MAP: Dict[str, Tuple[str, str, float]] = {
    "FFJ3": ("index_knuckle", "azimuth", 1.0),
    "FFJ2": ("index_knuckle", "elevation", 1.0),
    "FFJ1": ("index_middle", "elevation", 1.0),
    "FFJ0": ("index_distal", "elevation", 1.0),
    "MFJ3": ("middle_knuckle", "azimuth", 1.0),
    "MFJ2": ("middle_knuckle", "elevation", 1.0),
    "MFJ1": ("middle_middle", "elevation", 1.0),
    "MFJ0": ("middle_distal", "elevation", 1.0),
    "RFJ3": ("ring_knuckle", "azimuth", 1.0),
    "RFJ2": ("ring_knuckle", "elevation", 1.0),
    "RFJ1": ("ring_middle", "elevation", 1.0),
    "RFJ0": ("ring_distal", "elevation", 1.0),
    "LFJ4": ("little_knuckle", "elevation", 0.25),
    "LFJ3": ("little_knuckle", "azimuth", 1.0),
    "LFJ2": ("little_knuckle", "elevation", 1.0),
    "LFJ1": ("little_middle", "elevation", 1.0),
    "LFJ0": ("little_distal", "elevation", 1.0),
    "THJ4": ("thumb_knuckle", "azimuth", 1.0),
    "THJ3": ("thumb_knuckle", "elevation", 1.0),
    "THJ2": ("thumb_middle", "azimuth", 1.0),
    "THJ1": ("thumb_middle", "elevation", 1.0),
    "THJ0": ("thumb_distal", "elevation", 1.0),
}

# each finger joint reads the next joint along its own chain
_CHAIN_CHILD: Dict[int, int] = {}
for _f in ("thumb", "index", "middle", "ring", "little"):
    _CHAIN_CHILD[HUMAN_INDEX[f"{_f}_knuckle"]] = HUMAN_INDEX[f"{_f}_middle"]
    _CHAIN_CHILD[HUMAN_INDEX[f"{_f}_middle"]] = HUMAN_INDEX[f"{_f}_distal"]
    _CHAIN_CHILD[HUMAN_INDEX[f"{_f}_distal"]] = HUMAN_INDEX[f"{_f}_tip"]


@dataclass(frozen=True)
class ParentRelativeFrames:
    rotations: np.ndarray        # (21, 3, 3) columns X, Y, Z of each joint frame, root-relative coords
    local_positions: np.ndarray  # (21, 3) joint position in its parent's frame (root: zeros)
    palm_normal: np.ndarray      # (3,)

    def world_positions(self) -> np.ndarray:
        """Recompose root-relative positions from parent-relative ones."""
        out = np.zeros((21, 3))
        for i in HUMAN_HIERARCHY.traverse():
            p = HUMAN_HIERARCHY.parents[i]
            if p >= 0:
                out[i] = out[p] + self.rotations[p] @ self.local_positions[i]
        return out

    def angles_at(self, label: str) -> Tuple[float, float]:
        """(azimuth, elevation) of the chain child of `label` in its frame."""
        c = self.local_positions[_CHAIN_CHILD[HUMAN_INDEX[label]]]
        elevation = math.atan2(-c[1], c[2])
        azimuth = math.atan2(c[0], math.hypot(c[1], c[2]))
        return azimuth, elevation


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def to_root_relative(k: HumanHandKeypoints) -> HumanHandKeypoints:
    return HumanHandKeypoints(k.positions - k.positions[HUMAN_INDEX["wrist"]])


def palm_basis(rr: HumanHandKeypoints) -> np.ndarray:
    """3x3 with columns X, Y (back of hand), Z (towards the fingers)."""
    w = rr.positions[HUMAN_INDEX["wrist"]]
    a = rr.positions[HUMAN_INDEX["index_knuckle"]] - w
    b = rr.positions[HUMAN_INDEX["ring_knuckle"]] - w
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < COLLINEAR_TOL or nb < COLLINEAR_TOL:
        raise CollinearPalm("wrist coincides with a palm knuckle")
    cross = np.cross(b / nb, a / na)
    if np.linalg.norm(cross) <= COLLINEAR_TOL:
        raise CollinearPalm("wrist, index knuckle and ring knuckle are collinear")
    y = _unit(cross)
    z = _unit(a / na + b / nb)
    x = np.cross(y, z)
    return np.column_stack([x, y, z])


def palmar_frame(rr: HumanHandKeypoints) -> np.ndarray:
    """Arm orientation as a rotation vector taking the canonical palm frame onto the palmar plane."""
    return Rotation.from_matrix(palm_basis(rr)).as_rotvec()


def parent_relative_frames(rr: HumanHandKeypoints) -> ParentRelativeFrames:
    pos = rr.positions
    root_R = palm_basis(rr)
    normal = root_R[:, 1]
    rotations = np.zeros((21, 3, 3))
    local = np.zeros((21, 3))
    parents = HUMAN_HIERARCHY.parents

    for i in HUMAN_HIERARCHY.traverse():
        p = parents[i]
        if p < 0:
            rotations[i] = root_R
            continue
        bone = pos[i] - pos[p]
        length = np.linalg.norm(bone)
        if length < BONE_MIN:
            raise DegenerateBone(f"bone {HUMAN_LABELS[p]} -> {HUMAN_LABELS[i]} has length {length:.3g} m")
        z = bone / length
        y = None
        for candidate in (normal, rotations[p][:, 1], rotations[p][:, 0]):
            y0 = candidate - np.dot(candidate, z) * z
            if np.linalg.norm(y0) >= PARALLEL_TOL:
                y = _unit(y0)
                break
        x = np.cross(y, z)
        rotations[i] = np.column_stack([x, y, z])
        local[i] = rotations[p].T @ bone

    return ParentRelativeFrames(rotations, local, normal)


def extract_joint_angles(fr: ParentRelativeFrames) -> np.ndarray:
    """24 revolute values in canonical robot order (WRJ1 ... THJ0)."""
    out = np.zeros(N_ROBOT - 6)
    cache: Dict[str, Tuple[float, float]] = {}
    for name in ROBOT_JOINTS[6:]:
        row = RETARGET_MAP.get(name)
        if row is None:
            continue
        label, which, factor = row
        if label not in cache:
            cache[label] = fr.angles_at(label)
        az, el = cache[label]
        out[ROBOT_INDEX[name] - 6] = factor * (az if which == "azimuth" else el)
    return out


def retarget(k: HumanHandKeypoints, limits: np.ndarray = DEFAULT_LIMITS) -> RobotJointVector:
    rr = to_root_relative(k)
    values = np.zeros(N_ROBOT)
    values[3:6] = palmar_frame(rr)
    values[6:] = extract_joint_angles(parent_relative_frames(rr))
    return clamp_to_limits(RobotJointVector(values, limits))


# ── Reference hand ───────────────────────────────────────────────────────────
# Flat right hand: wrist at the origin, palm in the XZ plane, back of the hand
# towards +Y, each finger a straight ray from the wrist.
_RAY_DEG = {"thumb": 50.0, "index": 12.0, "middle": 0.0, "ring": -12.0, "little": -24.0}
_RAY_LENGTHS = {
    "thumb": (0.030, 0.035, 0.030, 0.025),
    "index": (0.095, 0.045, 0.025, 0.022),
    "middle": (0.095, 0.048, 0.028, 0.023),
    "ring": (0.090, 0.044, 0.027, 0.022),
    "little": (0.085, 0.035, 0.020, 0.019),
}


def canonical_hand() -> HumanHandKeypoints:
    pos = np.zeros((21, 3))
    for f, deg in _RAY_DEG.items():
        d = np.array([math.sin(math.radians(deg)), 0.0, math.cos(math.radians(deg))])
        r = 0.0
        for lvl, L in zip(("knuckle", "middle", "distal", "tip"), _RAY_LENGTHS[f]):
            r += L
            pos[HUMAN_INDEX[f"{f}_{lvl}"]] = r * d
    return HumanHandKeypoints(pos)

# -*- coding: utf-8 -*-
"""
Hand models shared by every other module.

- Human hand: 21 labelled keypoints of one right hand (wrist, three joints per
  finger, five finger tips), as produced by monocular hand pose estimators.
- Robot hand: 30-DoF Adroit-style hand on a 6-DoF arm (3 translations in
  metres, 3 rotation-vector components in radians, 24 revolutes).
- Joint hierarchies (parent index + level tag per joint), joint limits,
  the 21-site touch sensor layout and a kinematic surrogate of the robot hand
  used by the simulator to place sensors and hand contact points.

Overrides are read from plain-text files, one entry per line (`#` comments
allowed); anything not listed keeps its default:

    joint limits     NAME=lower,upper
    robot hierarchy  NAME=PARENT,level   (PARENT `-` marks the root)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DegenerateCloud, DuplicateJoint, MissingJoint, NonFinite

# ── Human hierarchy ──────────────────────────────────────────────────────────
FINGERS = ("thumb", "index", "middle", "ring", "little")
_LEVELS3 = ("knuckle", "middle", "distal")

HUMAN_LABELS: Tuple[str, ...] = (
    ("wrist",)
    + tuple(f"{f}_{lvl}" for f in FINGERS for lvl in _LEVELS3)
    + tuple(f"{f}_tip" for f in FINGERS)
)
HUMAN_INDEX: Dict[str, int] = {n: i for i, n in enumerate(HUMAN_LABELS)}


def _human_parents() -> Tuple[int, ...]:
    parents = [-1]
    for fi in range(5):
        base = 1 + 3 * fi
        parents += [0, base, base + 1]
    for fi in range(5):
        parents.append(1 + 3 * fi + 2)
    return tuple(parents)


HUMAN_PARENTS = _human_parents()
HUMAN_LEVELS: Tuple[str, ...] = (
    ("wrist",) + tuple(lvl for _ in FINGERS for lvl in _LEVELS3) + tuple("distal" for _ in FINGERS)
)

# ── Robot hierarchy ──────────────────────────────────────────────────────────
ARM_JOINTS = ("ARTx", "ARTy", "ARTz", "ARRx", "ARRy", "ARRz")
WRIST_JOINTS = ("WRJ1", "WRJ0")
FINGER_CHAINS: Dict[str, Tuple[str, ...]] = {
    "FF": ("FFJ3", "FFJ2", "FFJ1", "FFJ0"),
    "MF": ("MFJ3", "MFJ2", "MFJ1", "MFJ0"),
    "RF": ("RFJ3", "RFJ2", "RFJ1", "RFJ0"),
    "LF": ("LFJ4", "LFJ3", "LFJ2", "LFJ1", "LFJ0"),
    "TH": ("THJ4", "THJ3", "THJ2", "THJ1", "THJ0"),
}
ROBOT_JOINTS: Tuple[str, ...] = ARM_JOINTS + WRIST_JOINTS + tuple(j for c in FINGER_CHAINS.values() for j in c)
ROBOT_INDEX: Dict[str, int] = {n: i for i, n in enumerate(ROBOT_JOINTS)}
N_ROBOT = len(ROBOT_JOINTS)
ARM_SLICE = slice(0, 6)
HAND_SLICE = slice(6, 30)


def _robot_level(name: str) -> str:
    if name in ARM_JOINTS:
        return "arm"
    if name in WRIST_JOINTS:
        return "wrist"
    if name in ("LFJ4", "THJ4", "THJ3", "THJ2") or name.endswith(("J3", "J2")):
        return "knuckle"
    if name.endswith("J1"):
        return "middle"
    return "distal"


def _robot_parents() -> Tuple[int, ...]:
    parents = list(range(-1, 7))  # arm chain then wrist: each joint hangs off the previous
    for chain in FINGER_CHAINS.values():
        prev = ROBOT_INDEX["WRJ0"]
        for j in chain:
            parents.append(prev)
            prev = ROBOT_INDEX[j]
    return tuple(parents)


ROBOT_PARENTS = _robot_parents()
ROBOT_LEVELS: Tuple[str, ...] = tuple(_robot_level(n) for n in ROBOT_JOINTS)
LEVEL_NAMES = ("wrist", "knuckle", "middle", "distal", "arm")


@dataclass(frozen=True)
class JointHierarchy:
    names: Tuple[str, ...]
    parents: Tuple[int, ...]
    levels: Tuple[str, ...]

    def __post_init__(self):
        n = len(self.names)
        if len(self.parents) != n or len(self.levels) != n:
            raise ConfigError("hierarchy tables have inconsistent lengths")
        if sum(1 for p in self.parents if p < 0) != 1:
            raise ConfigError("hierarchy must have exactly one root")
        if any(lvl not in LEVEL_NAMES for lvl in self.levels):
            raise ConfigError("unknown level tag in hierarchy")
        if len(self.traverse()) != n:
            raise ConfigError("hierarchy has a cycle or unreachable joints")

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    def children(self, i: int) -> List[int]:
        return [c for c, p in enumerate(self.parents) if p == i]

    def traverse(self) -> List[int]:
        """Breadth-first order from the root; each joint visited once."""
        order: List[int] = []
        seen = set()
        queue = [self.parents.index(-1)]
        while queue:
            i = queue.pop(0)
            if i in seen:
                continue
            seen.add(i)
            order.append(i)
            queue.extend(self.children(i))
        return order


HUMAN_HIERARCHY = JointHierarchy(HUMAN_LABELS, HUMAN_PARENTS, HUMAN_LEVELS)
ROBOT_HIERARCHY = JointHierarchy(ROBOT_JOINTS, ROBOT_PARENTS, ROBOT_LEVELS)


# ── Joint limits ─────────────────────────────────────────────────────────────

def default_limits() -> np.ndarray:
    lim = np.empty((N_ROBOT, 2))
    lim[0:3] = (-0.5, 0.5)
    lim[3:6] = (-math.pi, math.pi)
    lim[6:] = (-math.pi / 2, math.pi / 2)
    lim.setflags(write=False)
    return lim


DEFAULT_LIMITS = default_limits()


def _key_value_lines(path: Union[str, Path]):
    """(line number, key, value) for every `KEY=value` line; `#` starts a comment."""
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected KEY=value")
        key, val = (s.strip() for s in line.split("=", 1))
        yield ln, key, val


def load_limits_file(path: Union[str, Path], base: Optional[np.ndarray] = None) -> np.ndarray:
    """Parse `NAME=lower,upper` lines on top of the default table."""
    lim = np.array(DEFAULT_LIMITS if base is None else base, dtype=float)
    for ln, key, val in _key_value_lines(path):
        if key not in ROBOT_INDEX:
            raise ConfigError(f"{path}:{ln}: unknown joint {key!r}")
        try:
            lo, hi = (float(x) for x in val.split(","))
        except ValueError as e:
            raise ConfigError(f"{path}:{ln}: bad limit pair {val!r}") from e
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
            raise ConfigError(f"{path}:{ln}: invalid interval [{lo}, {hi}]")
        lim[ROBOT_INDEX[key]] = (lo, hi)
    lim.setflags(write=False)
    return lim


def load_hierarchy_file(path: Union[str, Path], base: JointHierarchy = ROBOT_HIERARCHY) -> JointHierarchy:
    """Parse `NAME=PARENT,level` lines (PARENT `-` for the root) on top of `base`.

    Joint names and their order are fixed by `base`; only parents and level
    tags change. The result is re-validated as a whole.
    """
    index = {n: i for i, n in enumerate(base.names)}
    parents, levels = list(base.parents), list(base.levels)
    for ln, key, val in _key_value_lines(path):
        if key not in index:
            raise ConfigError(f"{path}:{ln}: unknown joint {key!r}")
        fields = [s.strip() for s in val.split(",")]
        if len(fields) != 2:
            raise ConfigError(f"{path}:{ln}: expected NAME=PARENT,level")
        parent, level = fields
        if parent != "-" and parent not in index:
            raise ConfigError(f"{path}:{ln}: unknown parent {parent!r}")
        parents[index[key]] = -1 if parent == "-" else index[parent]
        levels[index[key]] = level
    return JointHierarchy(base.names, tuple(parents), tuple(levels))


# ── Value types ──────────────────────────────────────────────────────────────

def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HumanHandKeypoints:
    """21 keypoints in canonical label order, metres."""
    positions: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        if self.positions.shape != (21, 3):
            raise MissingJoint(f"expected (21, 3) keypoints, got {self.positions.shape}")

    @property
    def labels(self) -> Tuple[str, ...]:
        return HUMAN_LABELS

    def __getitem__(self, label: str) -> np.ndarray:
        return self.positions[HUMAN_INDEX[label]]

    def as_dict(self) -> Dict[str, List[float]]:
        return {lbl: self.positions[i].tolist() for i, lbl in enumerate(HUMAN_LABELS)}

    def transformed(self, R: np.ndarray, t=(0.0, 0.0, 0.0), scale: float = 1.0) -> "HumanHandKeypoints":
        return HumanHandKeypoints(scale * (self.positions @ np.asarray(R).T) + np.asarray(t))


@dataclass(frozen=True)
class RobotJointVector:
    values: np.ndarray
    limits: np.ndarray = field(default=DEFAULT_LIMITS, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (N_ROBOT,):
            raise ValueError(f"expected {N_ROBOT} joint values, got shape {self.values.shape}")
        if self.limits is not DEFAULT_LIMITS:
            object.__setattr__(self, "limits", _frozen(self.limits))
        if self.limits.shape != (N_ROBOT, 2):
            raise ValueError("limits must be a (30, 2) table")

    @classmethod
    def zeros(cls, limits: Optional[np.ndarray] = None) -> "RobotJointVector":
        return cls(np.zeros(N_ROBOT), DEFAULT_LIMITS if limits is None else limits)

    @classmethod
    def from_dict(cls, values: Mapping[str, float], limits: Optional[np.ndarray] = None) -> "RobotJointVector":
        missing = [n for n in ROBOT_JOINTS if n not in values]
        if missing:
            raise ValueError(f"missing robot joints: {missing}")
        return cls(np.array([float(values[n]) for n in ROBOT_JOINTS]),
                   DEFAULT_LIMITS if limits is None else limits)

    @property
    def names(self) -> Tuple[str, ...]:
        return ROBOT_JOINTS

    @property
    def hand(self) -> np.ndarray:
        return self.values[HAND_SLICE]

    def __getitem__(self, name: str) -> float:
        return float(self.values[ROBOT_INDEX[name]])

    def replace(self, **named: float) -> "RobotJointVector":
        v = np.array(self.values)
        for k, x in named.items():
            v[ROBOT_INDEX[k]] = x
        return RobotJointVector(v, self.limits)

    def as_dict(self) -> Dict[str, float]:
        return {n: float(x) for n, x in zip(ROBOT_JOINTS, self.values)}


def clamp_to_limits(v: RobotJointVector) -> RobotJointVector:
    return RobotJointVector(np.clip(v.values, v.limits[:, 0], v.limits[:, 1]), v.limits)


# ── Keypoint validation ──────────────────────────────────────────────────────

RawKeypoints = Union[Mapping[str, Sequence[float]], Sequence[Tuple[str, Sequence[float]]]]


def validate_keypoints(raw: RawKeypoints) -> HumanHandKeypoints:
    """Accept a label->xyz mapping or a list of (label, xyz) pairs."""
    pairs = list(raw.items()) if isinstance(raw, Mapping) else list(raw)
    seen: Dict[str, np.ndarray] = {}
    for item in pairs:
        try:
            label, pos = item
        except (TypeError, ValueError) as e:
            raise MissingJoint(f"malformed keypoint entry: {item!r}") from e
        if label in seen:
            raise DuplicateJoint(f"joint {label!r} given more than once")
        if label not in HUMAN_INDEX:
            raise MissingJoint(f"unknown joint label {label!r}")
        p = np.asarray(pos, dtype=float)
        if p.shape != (3,):
            raise MissingJoint(f"joint {label!r} must have 3 coordinates")
        seen[label] = p

    missing = [lbl for lbl in HUMAN_LABELS if lbl not in seen]
    if missing:
        raise MissingJoint(f"missing joint(s): {', '.join(missing)}")

    pos = np.stack([seen[lbl] for lbl in HUMAN_LABELS])
    if not np.all(np.isfinite(pos)):
        raise NonFinite("keypoints contain NaN or inf")
    if np.linalg.norm(pos[HUMAN_INDEX["middle_knuckle"]] - pos[HUMAN_INDEX["wrist"]]) <= 1e-9:
        raise DegenerateCloud("wrist and middle knuckle coincide")
    return HumanHandKeypoints(pos)


# ── Robot hand kinematic surrogate ───────────────────────────────────────────
# Hand frame: Z along the fingers, Y out of the back of the hand, X = Y x Z
# (thumb side). Palm plate lies in Y=0.

PALMAR_OFFSET = 0.008
KNUCKLES = {"FF": (0.033, 0.0, 0.095), "MF": (0.011, 0.0, 0.095), "RF": (-0.011, 0.0, 0.095)}
LF_METACARPAL_BASE = (-0.033, 0.0, 0.02)
LF_METACARPAL_LEN = 0.075
PHALANGES = (0.045, 0.025, 0.026)
THUMB_BASE = (0.0, -0.07, 0.06)
THUMB_SEGMENTS = (0.04, 0.03, 0.03)

# Mount: canonical hand points straight down, back of the hand towards world +x.
R_MOUNT = np.array([[0.0, 1.0, 0.0],
                    [1.0, 0.0, 0.0],
                    [0.0, 0.0, -1.0]])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class SensorSite:
    name: str
    segment: str
    offset: Tuple[float, float, float]
    normal: Tuple[float, float, float]


@dataclass(frozen=True)
class TouchSensorLayout:
    sites: Tuple[SensorSite, ...]

    def __post_init__(self):
        if len(self.sites) != 21:
            raise ConfigError(f"touch layout needs 21 sites, got {len(self.sites)}")
        unknown = [s.name for s in self.sites if s.segment not in SEGMENTS]
        if unknown:
            raise ConfigError(f"sites bound to unknown segments: {unknown}")

    def __len__(self) -> int:
        return len(self.sites)

    def index(self, name: str) -> int:
        return [s.name for s in self.sites].index(name)


SEGMENTS = (
    "palm",
    "FF_proximal", "FF_middle", "FF_distal",
    "MF_proximal", "MF_middle", "MF_distal",
    "RF_proximal", "RF_middle", "RF_distal",
    "LF_metacarpal", "LF_proximal", "LF_middle", "LF_distal",
    "TH_proximal", "TH_middle", "TH_distal",
)
_SEG_LEN = {f"{c}_{p}": L for c in ("FF", "MF", "RF", "LF") for p, L in zip(("proximal", "middle", "distal"), PHALANGES)}
_SEG_LEN.update({f"TH_{p}": L for p, L in zip(("proximal", "middle", "distal"), THUMB_SEGMENTS)})


def _default_layout() -> TouchSensorLayout:
    down = (0.0, -1.0, 0.0)
    sites = [
        SensorSite("palm_center", "palm", (0.0, -PALMAR_OFFSET, 0.05), down),
        SensorSite("palm_q1", "palm", (0.022, -PALMAR_OFFSET, 0.025), down),
        SensorSite("palm_q2", "palm", (-0.022, -PALMAR_OFFSET, 0.025), down),
        SensorSite("palm_q3", "palm", (0.022, -PALMAR_OFFSET, 0.075), down),
        SensorSite("palm_q4", "palm", (-0.022, -PALMAR_OFFSET, 0.075), down),
        SensorSite("thumb_base", "palm",
                   (THUMB_BASE[0], THUMB_BASE[1] + PALMAR_OFFSET, THUMB_BASE[2]), (0.0, 1.0, 0.0)),
    ]
    for chain in ("TH", "FF", "MF", "RF", "LF"):
        sign = 1.0 if chain == "TH" else -1.0
        for part in ("proximal", "middle", "distal"):
            seg = f"{chain}_{part}"
            sites.append(SensorSite(f"{chain.lower()}_{part}", seg,
                                    (0.0, sign * PALMAR_OFFSET, _SEG_LEN[seg] / 2.0), (0.0, sign, 0.0)))
    return TouchSensorLayout(tuple(sites))


TOUCH_LAYOUT = _default_layout()

# palm centre, five distal pads, four middle pads
HAND_POINT_SITES = ("palm_center", "th_distal", "ff_distal", "mf_distal", "rf_distal", "lf_distal",
                    "th_middle", "ff_middle", "mf_middle", "rf_middle")
HAND_POINT_INDEX = np.array([TOUCH_LAYOUT.index(n) for n in HAND_POINT_SITES])


@dataclass(frozen=True)
class HandKinematics:
    wrist_pos: np.ndarray                 # (3,) world
    wrist_rot: np.ndarray                 # (3, 3) world <- hand
    segments: Dict[str, Tuple[np.ndarray, np.ndarray]]  # name -> (R world, origin world)
    sites: np.ndarray                     # (21, 3) world
    site_normals: np.ndarray              # (21, 3) world, palmar side

    @property
    def hand_points(self) -> np.ndarray:
        return self.sites[HAND_POINT_INDEX]


def hand_rotation(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    R_arm = Rotation.from_rotvec(v[3:6]).as_matrix()
    return R_MOUNT @ R_arm @ rot_y(v[ROBOT_INDEX["WRJ1"]]) @ rot_x(v[ROBOT_INDEX["WRJ0"]])


def forward_kinematics(v: Union[RobotJointVector, np.ndarray],
                       arm_base: Sequence[float] = (0.0, 0.0, 0.35),
                       layout: TouchSensorLayout = TOUCH_LAYOUT) -> HandKinematics:
    q = v.values if isinstance(v, RobotJointVector) else np.asarray(v, dtype=float)
    wrist_pos = np.asarray(arm_base, dtype=float) + q[0:3]
    R_hand = hand_rotation(q)
    J = lambda name: q[ROBOT_INDEX[name]]  # noqa: E731

    local: Dict[str, Tuple[np.ndarray, np.ndarray]] = {"palm": (np.eye(3), np.zeros(3))}

    def chain(prefix: str, base: np.ndarray, R: np.ndarray, flex_sign: float, names: Sequence[str],
              abduct: Sequence[Optional[str]], lengths: Sequence[float]) -> None:
        p = np.asarray(base, dtype=float)
        for part, j, ab, L in zip(("proximal", "middle", "distal"), names, abduct, lengths):
            if ab is not None:
                R = R @ rot_y(J(ab))
            R = R @ rot_x(flex_sign * J(j))
            local[f"{prefix}_{part}"] = (R, p)
            p = p + R @ np.array([0.0, 0.0, L])

    for c in ("FF", "MF", "RF"):
        chain(c, np.array(KNUCKLES[c]), np.eye(3), 1.0,
              (f"{c}J2", f"{c}J1", f"{c}J0"), (f"{c}J3", None, None), PHALANGES)

    R_meta = rot_x(J("LFJ4"))
    local["LF_metacarpal"] = (R_meta, np.array(LF_METACARPAL_BASE))
    lf_knuckle = np.array(LF_METACARPAL_BASE) + R_meta @ np.array([0.0, 0.0, LF_METACARPAL_LEN])
    chain("LF", lf_knuckle, R_meta, 1.0, ("LFJ2", "LFJ1", "LFJ0"), ("LFJ3", None, None), PHALANGES)

    # Thumb pads face +Y, so its flexion turns the other way.
    chain("TH", np.array(THUMB_BASE), np.eye(3), -1.0,
          ("THJ3", "THJ1", "THJ0"), ("THJ4", "THJ2", None), THUMB_SEGMENTS)

    segments = {k: (R_hand @ R, wrist_pos + R_hand @ p) for k, (R, p) in local.items()}
    sites = np.empty((len(layout), 3))
    normals = np.empty((len(layout), 3))
    for i, s in enumerate(layout.sites):
        R, p = segments[s.segment]
        sites[i] = p + R @ np.asarray(s.offset)
        normals[i] = R @ np.asarray(s.normal)
    return HandKinematics(wrist_pos, R_hand, segments, sites, normals)

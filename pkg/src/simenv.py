# -*- coding: utf-8 -*-
"""
Quasi-static tabletop grasping surrogate.

World frame: table plane z = 0, object centred over the origin. The hand is
the kinematic surrogate from handmodel mounted on a 6-DoF arm whose base sits
above the table (EnvConfig.arm_base).

One step:
  1. action (+ actuation noise) clamped to joint limits
  2. servo: p += min(1, servo_gain / damping) * (target - p) per joint,
     damping = wrist_damping for arm and wrist DoF, finger_damping otherwise
  3. attached objects follow the wrist rigidly (never below the table)
  4. touch sensors: active iff the site's signed distance to the object
     surface is <= contact_radius (inside counts)
  5. closure = enough active sensors for the object's mass plus two whose
     surface normals oppose; closure while the wrist rises attaches the
     object, losing closure drops it back onto the table
  6. reward breakdown recomputed from the stored state
  7. observation (+ sensing noise)

The state is an immutable snapshot, so `step` is a pure function of
(state, action) and an episode can be replayed bit-exactly from its log.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from .config import EnvConfig, NoiseConfig, RewardConfig, RunConfig
from .errors import EpisodeOver, IncompleteLog, NotAttached, ParseError
from .handmodel import (
    DEFAULT_LIMITS,
    N_ROBOT,
    ROBOT_HIERARCHY,
    ROBOT_LEVELS,
    TOUCH_LAYOUT,
    JointHierarchy,
    RobotJointVector,
    forward_kinematics,
)
from .ingest import ObjectAsset
from .noise import NoiseState, perturb_action, perturb_observation
from .rewards import StepRewardBreakdown, step_reward
from .utils import canonical_json, log, read_jsonl, sha1_array, write_jsonl

LOG_FORMAT_VERSION = 1

DIRECTIONS: Tuple[Tuple[str, Tuple[float, float, float]], ...] = (
    ("+x", (1.0, 0.0, 0.0)), ("-x", (-1.0, 0.0, 0.0)),
    ("+y", (0.0, 1.0, 0.0)), ("-y", (0.0, -1.0, 0.0)),
    ("+z", (0.0, 0.0, 1.0)), ("-z", (0.0, 0.0, -1.0)),
)


# ── State / observation ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class EnvState:
    pose: np.ndarray            # (30,) joint values
    vel: np.ndarray             # (30,) per-step change
    obj_pos: np.ndarray         # (3,)
    obj_rotvec: np.ndarray      # (3,)
    attached: bool
    rel_pos: np.ndarray         # object origin in the hand frame (valid when attached)
    rel_rotvec: np.ndarray
    touch: np.ndarray           # (21,) bool
    contact_normals: np.ndarray  # (21, 3) outward object normals at the sites, world
    hand_contact: bool
    table_contact: bool
    step: int
    noise: NoiseState = field(default_factory=NoiseState)

    @property
    def active_count(self) -> int:
        return int(np.sum(self.touch))

    def to_json(self) -> dict:
        return {
            "pose": self.pose.tolist(), "vel": self.vel.tolist(),
            "obj_pos": self.obj_pos.tolist(), "obj_rotvec": self.obj_rotvec.tolist(),
            "attached": bool(self.attached),
            "rel_pos": self.rel_pos.tolist(), "rel_rotvec": self.rel_rotvec.tolist(),
            "touch": [bool(x) for x in self.touch],
            "contact_normals": self.contact_normals.tolist(),
            "hand_contact": bool(self.hand_contact), "table_contact": bool(self.table_contact),
            "step": int(self.step), "noise": self.noise.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EnvState":
        a = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(a("pose"), a("vel"), a("obj_pos"), a("obj_rotvec"), bool(d["attached"]),
                   a("rel_pos"), a("rel_rotvec"), np.asarray(d["touch"], dtype=bool), a("contact_normals"),
                   bool(d["hand_contact"]), bool(d["table_contact"]), int(d["step"]),
                   NoiseState.from_json(d["noise"]))


@dataclass(frozen=True)
class Observation:
    proprio: np.ndarray          # (60,) joint values then velocities
    hand_points: np.ndarray      # (10, 3)
    tracking_points: np.ndarray  # (20, 3) tracked affordance points
    distances: np.ndarray        # (10, 20)
    touch: np.ndarray            # (21,) 0/1
    images: Optional[np.ndarray] = None  # (3, S, S) uint8: intensity, depth, affordance

    def vector(self) -> np.ndarray:
        return np.concatenate([self.proprio, self.distances.ravel(), self.touch.astype(float)])

    def digest(self) -> str:
        arrays = [self.proprio, self.hand_points, self.tracking_points, self.distances, self.touch]
        if self.images is not None:
            arrays.append(self.images)
        return sha1_array(*arrays)


def observation_size(cfg: EnvConfig) -> int:
    return 2 * N_ROBOT + cfg.hand_points * cfg.affordance_points + len(TOUCH_LAYOUT)


# ── Helpers ──────────────────────────────────────────────────────────────────

def _rot(rotvec: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(rotvec).as_matrix()


def _rotvec(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def servo_rates(cfg: EnvConfig) -> np.ndarray:
    damping = np.array([cfg.wrist_damping if lvl in ("arm", "wrist") else cfg.finger_damping
                        for lvl in ROBOT_LEVELS])
    return np.minimum(1.0, cfg.servo_gain / damping)


def required_contacts(cfg: EnvConfig, mass: float) -> int:
    return int(math.ceil(cfg.min_contacts * mass / cfg.reference_mass - 1e-9))


def render_views(obj_points: np.ndarray, aff_points: np.ndarray, hand_points: np.ndarray,
                 size: int, extent: float) -> np.ndarray:
    """Top-down orthographic intensity / depth / affordance images (uint8)."""
    img = np.zeros((3, size, size), dtype=np.uint8)

    def pix(P):
        uv = np.floor((P[:, :2] + extent / 2.0) / extent * size).astype(int)
        ok = np.all((uv >= 0) & (uv < size), axis=1)
        return uv[ok], P[ok]

    def height(P):
        return np.clip(P[:, 2] / extent * 255.0, 0, 255).astype(np.uint8)

    for P, shade in ((obj_points, 200), (hand_points, 100)):
        uv, Q = pix(P)
        img[0, uv[:, 1], uv[:, 0]] = shade
        np.maximum.at(img[1], (uv[:, 1], uv[:, 0]), height(Q))
    uv, _ = pix(aff_points)
    img[2, uv[:, 1], uv[:, 0]] = 255
    return img


# ── Environment ──────────────────────────────────────────────────────────────

class GraspEnv:
    """Lift one object; rewards per RewardConfig with an optional consensus target."""

    def __init__(self, asset: ObjectAsset, env_cfg: EnvConfig = EnvConfig(),
                 reward_cfg: RewardConfig = RewardConfig(), noise_cfg: NoiseConfig = NoiseConfig(),
                 target: Optional[RobotJointVector] = None, limits: np.ndarray = DEFAULT_LIMITS,
                 hierarchy: JointHierarchy = ROBOT_HIERARCHY):
        if env_cfg.scale_override is not None:
            asset = asset.rescaled(env_cfg.scale_override)
        if env_cfg.mass_override is not None:
            asset = asset.with_mass(env_cfg.mass_override)
        self.asset = asset
        self.cfg = env_cfg
        self.reward_cfg = reward_cfg
        self.noise_cfg = noise_cfg
        self.target = target
        self.limits = limits
        self.hierarchy = hierarchy
        self.rates = servo_rates(env_cfg)
        self.need = required_contacts(env_cfg, asset.mass)

        n = len(asset.affordance_points)
        m = env_cfg.affordance_points
        idx = np.arange(n) if n == m else np.sort(np.random.default_rng(0).choice(n, m, replace=n < m))
        self.aff_local = asset.affordance_points[idx]
        self.com_local = asset.center_of_mass
        self.vertices = np.asarray(asset.mesh.vertices, dtype=float)

    @classmethod
    def from_run_config(cls, asset: ObjectAsset, cfg: RunConfig,
                        target: Optional[RobotJointVector] = None,
                        limits: np.ndarray = DEFAULT_LIMITS,
                        hierarchy: JointHierarchy = ROBOT_HIERARCHY) -> "GraspEnv":
        return cls(asset, cfg.env, cfg.reward, cfg.noise, target, limits, hierarchy)

    @property
    def obs_dim(self) -> int:
        return observation_size(self.cfg)

    @property
    def action_dim(self) -> int:
        return N_ROBOT

    @property
    def episode_length(self) -> int:
        return self.cfg.episode_length

    # -- geometry --------------------------------------------------------------
    def _lowest(self, R: np.ndarray, pos: np.ndarray) -> float:
        return float(np.min(self.vertices @ R[2]) + pos[2])

    def _rest_on_table(self, rotvec: np.ndarray, xy=(0.0, 0.0)) -> np.ndarray:
        R = _rot(rotvec)
        return np.array([xy[0], xy[1], -float(np.min(self.vertices @ R[2]))])

    def object_frame(self, state: EnvState) -> Tuple[np.ndarray, np.ndarray]:
        return _rot(state.obj_rotvec), state.obj_pos

    def affordance_world(self, state: EnvState) -> np.ndarray:
        R, t = self.object_frame(state)
        return self.aff_local @ R.T + t

    def com_world(self, state: EnvState) -> np.ndarray:
        R, t = self.object_frame(state)
        return R @ self.com_local + t

    def _contacts(self, sites: np.ndarray, R: np.ndarray, t: np.ndarray):
        local = (sites - t) @ R
        sd, normals = self.asset.surface_query(local)
        return sd <= self.cfg.contact_radius, normals @ R.T

    def closure(self, touch: np.ndarray, normals: np.ndarray) -> bool:
        active = np.flatnonzero(touch)
        if len(active) < self.need:
            return False
        N = normals[active]
        dots = N @ N.T
        return bool(np.any(dots < self.cfg.opposing_dot))

    def table_contact(self, R: np.ndarray, t: np.ndarray) -> bool:
        return self._lowest(R, t) <= self.cfg.table_contact_tol

    # -- observation / reward ----------------------------------------------------
    def _observe(self, state: EnvState, hand_points: np.ndarray) -> Observation:
        aff = self.affordance_world(state)
        images = None
        if self.cfg.visual:
            R, t = self.object_frame(state)
            images = render_views(self.asset.surface_points @ R.T + t, aff, hand_points,
                                  self.cfg.image_size, self.cfg.image_extent_m)
        return Observation(
            proprio=np.concatenate([state.pose, state.vel]),
            hand_points=hand_points,
            tracking_points=aff,
            distances=cdist(hand_points, aff),
            touch=state.touch.astype(float),
            images=images,
        )

    def reward_for_state(self, state: EnvState) -> StepRewardBreakdown:
        """Reward breakdown from a state snapshot alone (used live and for log replay)."""
        kin = forward_kinematics(state.pose, self.cfg.arm_base)
        return step_reward(kin.hand_points, self.affordance_world(state), self.com_world(state),
                           RobotJointVector(state.pose, self.limits), self.target, state.active_count,
                           state.hand_contact, state.table_contact, self.reward_cfg,
                           levels=self.hierarchy.levels)

    # -- episode -------------------------------------------------------------------
    def reset(self, seed: int, yaw: Optional[float] = None) -> Tuple[EnvState, Observation]:
        rng = np.random.default_rng(seed)
        if yaw is None:
            lo, hi = self.cfg.yaw_range_deg
            yaw = math.radians(float(rng.uniform(lo, hi)))
        rotvec = np.array([0.0, 0.0, float(yaw)])
        pos = self._rest_on_table(rotvec)
        pose = np.zeros(N_ROBOT)
        kin = forward_kinematics(pose, self.cfg.arm_base)
        R = _rot(rotvec)
        touch, normals = self._contacts(kin.sites, R, pos)
        state = EnvState(
            pose=pose, vel=np.zeros(N_ROBOT), obj_pos=pos, obj_rotvec=rotvec, attached=False,
            rel_pos=np.zeros(3), rel_rotvec=np.zeros(3), touch=touch, contact_normals=normals,
            hand_contact=bool(touch.any()), table_contact=self.table_contact(R, pos), step=0,
            noise=NoiseState(),
        )
        obs, noise = perturb_observation(self._observe(state, kin.hand_points), self.noise_cfg, state.noise)
        return replace(state, noise=noise), obs

    @staticmethod
    def yaw_of(state: EnvState) -> float:
        return float(state.obj_rotvec[2])

    def step(self, state: EnvState, action: Union[RobotJointVector, np.ndarray]
             ) -> Tuple[EnvState, Observation, StepRewardBreakdown, bool]:
        if state.step >= self.cfg.episode_length:
            raise EpisodeOver(f"episode already has {state.step} steps")
        a = action if isinstance(action, RobotJointVector) else RobotJointVector(np.asarray(action, float), self.limits)
        a, noise = perturb_action(a, self.noise_cfg, state.noise)
        target = np.clip(a.values, self.limits[:, 0], self.limits[:, 1])

        pose = state.pose + self.rates * (target - state.pose)
        vel = pose - state.pose
        kin_prev = forward_kinematics(state.pose, self.cfg.arm_base)
        kin = forward_kinematics(pose, self.cfg.arm_base)

        attached = state.attached
        rel_pos, rel_rotvec = state.rel_pos, state.rel_rotvec
        obj_rotvec, obj_pos = state.obj_rotvec, state.obj_pos
        if attached:
            R_new = kin.wrist_rot @ _rot(rel_rotvec)
            obj_rotvec = _rotvec(R_new)
            obj_pos = kin.wrist_pos + kin.wrist_rot @ rel_pos
            low = self._lowest(_rot(obj_rotvec), obj_pos)
            if low < 0.0:
                obj_pos = obj_pos + np.array([0.0, 0.0, -low])

        R = _rot(obj_rotvec)
        touch, normals = self._contacts(kin.sites, R, obj_pos)
        closed = self.closure(touch, normals)
        rising = kin.wrist_pos[2] > kin_prev.wrist_pos[2] + 1e-12

        if attached and not closed:
            attached = False
            obj_pos = self._rest_on_table(obj_rotvec, obj_pos[:2])
            R = _rot(obj_rotvec)
            touch, normals = self._contacts(kin.sites, R, obj_pos)
        elif not attached and closed and rising:
            attached = True
            rel_rotvec = _rotvec(kin.wrist_rot.T @ R)
            rel_pos = kin.wrist_rot.T @ (obj_pos - kin.wrist_pos)

        new = EnvState(
            pose=pose, vel=vel, obj_pos=np.asarray(obj_pos, float), obj_rotvec=np.asarray(obj_rotvec, float),
            attached=attached, rel_pos=np.asarray(rel_pos, float), rel_rotvec=np.asarray(rel_rotvec, float),
            touch=touch, contact_normals=normals, hand_contact=bool(touch.any()),
            table_contact=self.table_contact(R, obj_pos), step=state.step + 1, noise=noise,
        )
        breakdown = self.reward_for_state(new)
        obs, noise = perturb_observation(self._observe(new, kin.hand_points), self.noise_cfg, new.noise)
        new = replace(new, noise=noise)
        return new, obs, breakdown, new.step >= self.cfg.episode_length

    def touch_readings(self, state: EnvState) -> np.ndarray:
        kin = forward_kinematics(state.pose, self.cfg.arm_base)
        R, t = self.object_frame(state)
        touch, _ = self._contacts(kin.sites, R, t)
        return touch

    def apply_perturbation(self, state: EnvState, force: float = 1.0,
                           direction: Union[str, Sequence[float]] = "+z") -> bool:
        """Whether the grasp holds a constant external force; `state` is left untouched.

        Held iff closure holds and force * mass / reference_mass is at most
        sliding_friction * (active contacts) * unit_normal_force, the same for
        every push direction.
        """
        if not state.attached:
            raise NotAttached("perturbation needs an attached object")
        if isinstance(direction, str):
            if direction not in dict(DIRECTIONS):
                raise ValueError(f"unknown direction {direction!r}")
        elif not np.linalg.norm(np.asarray(direction, dtype=float)) > 0:
            raise ValueError("perturbation direction must be non-zero")
        if not self.closure(state.touch, state.contact_normals):
            return False
        load = force * self.asset.mass / self.cfg.reference_mass
        return bool(load <= self.cfg.sliding_friction * state.active_count * self.cfg.unit_normal_force)


@dataclass(frozen=True)
class ReachState:
    pos: np.ndarray
    step: int


@dataclass(frozen=True)
class ReachObservation:
    x: np.ndarray

    def vector(self) -> np.ndarray:
        return self.x


class ReachEnv:
    """Point reaching with dense negative-distance reward, same rollout interface as GraspEnv."""

    def __init__(self, dim: int = 2, goal: Optional[Sequence[float]] = None, step_size: float = 0.1,
                 episode_length: int = 50):
        self.dim = dim
        self.goal = np.full(dim, 0.5) if goal is None else np.asarray(goal, dtype=float)
        self.step_size = step_size
        self._length = episode_length

    @property
    def obs_dim(self) -> int:
        return 2 * self.dim

    @property
    def action_dim(self) -> int:
        return self.dim

    @property
    def episode_length(self) -> int:
        return self._length

    def _obs(self, pos: np.ndarray) -> ReachObservation:
        return ReachObservation(np.concatenate([pos, self.goal - pos]))

    def reset(self, seed: int, yaw: Optional[float] = None):
        pos = np.random.default_rng(seed).uniform(-1.0, 1.0, self.dim)
        return ReachState(pos, 0), self._obs(pos)

    def step(self, state: ReachState, action):
        if state.step >= self._length:
            raise EpisodeOver("reach episode is over")
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        pos = state.pos + self.step_size * a
        r = -float(np.linalg.norm(pos - self.goal))
        br = StepRewardBreakdown(0.0, 0.0, 0.0, 0.0, r, False)
        new = ReachState(pos, state.step + 1)
        return new, self._obs(pos), br, new.step >= self._length


# ── Episode logs ─────────────────────────────────────────────────────────────

Policy = Callable[[Observation, EnvState], Union[np.ndarray, RobotJointVector]]


@dataclass
class EpisodeLog:
    header: Dict
    steps: List[Dict] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.steps) == self.header.get("episode_length", -1)

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(path, [self.header] + self.steps)

    @classmethod
    def read(cls, path) -> "EpisodeLog":
        rows = list(read_jsonl(path))
        if not rows or rows[0].get("kind") != "header":
            raise ParseError(f"{path}: missing episode log header")
        if rows[0].get("format_version") != LOG_FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format_version {rows[0].get('format_version')!r}")
        return cls(rows[0], rows[1:])

    def state_at(self, i: int) -> EnvState:
        return EnvState.from_json(self.steps[i]["state"])

    def final_state(self) -> EnvState:
        if not self.steps:
            raise IncompleteLog("episode log has no steps")
        return self.state_at(-1)


def run_episode(env: GraspEnv, policy: Policy, seed: int, yaw: Optional[float] = None,
                run_hash: str = "") -> Tuple[EpisodeLog, EnvState]:
    state, obs = env.reset(seed, yaw)
    header = {
        "kind": "header", "format_version": LOG_FORMAT_VERSION, "config_hash": run_hash,
        "asset": env.asset.source, "object_class": env.asset.object_class, "seed": int(seed),
        "yaw": GraspEnv.yaw_of(state), "episode_length": env.episode_length,
        "mass": env.asset.mass, "scale": env.asset.scale, "variant": env.reward_cfg.variant,
        "noise": env.noise_cfg.model_dump(mode="json"),
        "initial_state": state.to_json(),
    }
    log_ = EpisodeLog(header)
    done = False
    while not done:
        act = policy(obs, state)
        a = act.values if isinstance(act, RobotJointVector) else np.asarray(act, dtype=float)
        state, obs, br, done = env.step(state, a)
        log_.steps.append({
            "t": state.step, "action": a.tolist(), "state": state.to_json(),
            "obs_digest": obs.digest(), "reward": br.as_dict(),
            "hand_points": obs.hand_points.tolist(),
            "affordance_points": env.affordance_world(state).tolist(),
        })
    return log_, state


@dataclass(frozen=True)
class ReplayReport:
    matched: int
    total: int
    first_mismatch: Optional[int] = None
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.first_mismatch is None and self.matched == self.total


def replay(env: GraspEnv, episode: EpisodeLog, tol: float = 1e-9) -> ReplayReport:
    """Re-run the logged actions and check every state and reward against the log."""
    total = len(episode.steps)
    state, _ = env.reset(int(episode.header["seed"]), float(episode.header["yaw"]))
    if canonical_json(state.to_json()) != canonical_json(episode.header.get("initial_state")):
        return ReplayReport(0, total, 0, "initial state differs")
    for i, rec in enumerate(episode.steps):
        state, _, br, _ = env.step(state, np.asarray(rec["action"], dtype=float))
        if canonical_json(state.to_json()) != canonical_json(rec["state"]):
            return ReplayReport(i, total, i, "state differs")
        if br.total != rec["reward"]["total"]:
            return ReplayReport(i, total, i, "reward differs")
        again = env.reward_for_state(EnvState.from_json(rec["state"]))
        if abs(again.total - rec["reward"]["total"]) > tol:
            return ReplayReport(i, total, i, "reward not reproducible from the logged state")
    log("replay", f"{total} steps re-executed")
    return ReplayReport(total, total)


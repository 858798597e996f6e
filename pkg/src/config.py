# -*- coding: utf-8 -*-
"""
Run configuration.

One YAML file (config/run.yaml by default) holds every knob of a run:
simulator physics, reward coefficients, noise channels, PPO settings,
evaluation protocol, pose-prior clustering and file locations. It is
validated into the pydantic models below; a hash of the validated model is
stamped into every artifact a run writes.

Env vars:
    CFG_RUN=config/run.yaml   path of the run config
    OUT_DIR=out               overrides paths.out_dir
    STATE_DIR=state           overrides checkpoint/log dirs (state/checkpoints, state/logs)
    SEED=3                    replaces the seed list with a single seed
"""
from __future__ import annotations

import math
import os
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .utils import canonical_json, sha1

CFG_RUN = os.getenv("CFG_RUN", "config/run.yaml")

RewardVariant = Literal["dexvip", "graff_like", "com", "touch", "affordance_touch"]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvConfig(_Model):
    # Physical parameters of the tabletop scene (N / kg)
    sliding_friction: float = Field(1.0, gt=0)
    torsional_friction: float = Field(0.5, gt=0)
    rolling_friction: float = Field(0.01, gt=0)
    wrist_damping: float = Field(0.5, gt=0)
    finger_damping: float = Field(0.05, gt=0)
    object_rot_damping: float = Field(0.1, gt=0)
    object_mass: float = Field(1.0, gt=0)

    episode_length: int = Field(200, ge=1)
    contact_radius: float = Field(0.008, gt=0)
    servo_gain: float = Field(0.05, gt=0)
    yaw_range_deg: Tuple[float, float] = (0.0, 180.0)
    mass_override: Optional[float] = Field(None, gt=0)
    scale_override: Optional[float] = Field(None, gt=0)

    # Grasp surrogate
    min_contacts: int = Field(3, ge=1)
    opposing_dot: float = -0.3
    reference_mass: float = Field(1.0, gt=0)
    unit_normal_force: float = Field(1.0, gt=0)
    table_contact_tol: float = Field(1e-4, gt=0)
    arm_base: Tuple[float, float, float] = (0.0, 0.0, 0.35)

    # Observation layout
    hand_points: int = Field(10, ge=1)
    affordance_points: int = Field(20, ge=1)
    visual: bool = False
    image_size: int = Field(64, ge=16)
    image_extent_m: float = Field(0.3, gt=0)

    @field_validator("yaw_range_deg")
    @classmethod
    def _yaw_order(cls, v):
        if v[0] > v[1]:
            raise ValueError("yaw_range_deg must be (low, high) with low <= high")
        return v


class RewardConfig(_Model):
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    eta: float = 0.001
    # Hierarchical pose weights: wrist, knuckle, middle, distal
    gamma1: float = 1.0
    gamma2: float = 0.75
    gamma3: float = 0.5
    gamma4: float = 0.25
    gate_fraction: float = Field(0.3, gt=0, le=1)
    variant: RewardVariant = "dexvip"

    @model_validator(mode="after")
    def _finite(self):
        for name in ("alpha", "beta", "gamma", "eta", "gamma1", "gamma2", "gamma3", "gamma4"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        return self


class NoiseConfig(_Model):
    proprio: bool = False
    actuation: bool = False
    tracking: bool = False
    tracking_freeze: bool = False
    pixel: bool = False

    proprio_std: float = Field(0.01, ge=0)
    actuation_std: float = Field(0.01, ge=0)
    tracking_std_m: float = Field(0.01, ge=0)
    tracking_freeze_frames: int = Field(20, ge=0)
    freeze_probability: float = Field(0.01, ge=0, le=1)
    pixel_range: int = Field(5, ge=0)
    seed: int = 0

    @classmethod
    def all_enabled(cls, **kw) -> "NoiseConfig":
        base = dict(proprio=True, actuation=True, tracking=True, tracking_freeze=True, pixel=True)
        base.update(kw)
        return cls(**base)


class PpoConfig(_Model):
    lr: float = Field(5e-5, gt=0)
    clip: float = Field(0.2, gt=0, lt=1)
    discount: float = Field(0.99, gt=0, le=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    epochs: int = Field(4, ge=1)
    minibatch: int = Field(256, ge=1)
    entropy_coef: float = 0.001
    value_coef: float = Field(0.5, ge=0)
    max_grad_norm: float = Field(0.5, gt=0)
    adam_eps: float = Field(1e-5, gt=0)
    normalize_advantages: bool = True


class TrainConfig(_Model):
    n_envs: int = Field(4, ge=1)
    rollout_steps: int = Field(256, ge=1)
    updates: int = Field(10, ge=0)
    hidden: List[int] = Field(default_factory=lambda: [512, 512])
    checkpoint_every: int = Field(10, ge=1)
    visual_filters: List[int] = Field(default_factory=lambda: [8, 4, 3])
    visual_strides: List[int] = Field(default_factory=lambda: [4, 2, 1])
    visual_channels: List[int] = Field(default_factory=lambda: [32, 64, 64])
    visual_dim: int = Field(512, ge=1)


class EvalConfig(_Model):
    episodes_per_object: int = Field(100, ge=1)
    success_window: int = Field(50, ge=1)
    perturb_force: float = Field(1.0, gt=0)
    functionality_threshold: float = Field(0.05, gt=0)
    posture_ref: float = Field(math.pi / 2, gt=0)
    sweep_masses: List[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5])
    sweep_scales: List[float] = Field(default_factory=lambda: [0.8, 1.0, 1.2])


class PriorConfig(_Model):
    k: Union[int, Literal["auto"]] = 3
    seed: int = 0
    exhaustive_limit: int = Field(5000, ge=0)
    confidence_threshold: float = Field(0.5, ge=0, le=1)


class PathsConfig(_Model):
    assets: List[str] = Field(default_factory=list)
    pose_records: List[str] = Field(default_factory=list)
    retargeted: List[str] = Field(default_factory=list)
    consensus_library: str = "state/consensus.json"
    joint_limits: Optional[str] = None
    hierarchy: Optional[str] = None
    checkpoint_dir: str = "state/checkpoints"
    log_dir: str = "state/logs"
    out_dir: str = "out"


class RunConfig(_Model):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    ppo: PpoConfig = Field(default_factory=PpoConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3])

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        return v


def config_hash(cfg: BaseModel) -> str:
    return sha1(canonical_json(cfg.model_dump(mode="json")))


def _apply_env_overrides(raw: dict) -> dict:
    paths = dict(raw.get("paths") or {})
    if os.getenv("OUT_DIR"):
        paths["out_dir"] = os.getenv("OUT_DIR")
    if os.getenv("STATE_DIR"):
        state = os.getenv("STATE_DIR")
        paths["checkpoint_dir"] = str(Path(state) / "checkpoints")
        paths["log_dir"] = str(Path(state) / "logs")
    raw["paths"] = paths
    if os.getenv("SEED", "").strip():
        raw["seeds"] = [int(os.getenv("SEED"))]
    return raw


def load_run_config(path: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Read, env-override and validate a run config. Missing file -> defaults only if path is None."""
    p = Path(path or CFG_RUN)
    raw: dict = {}
    if p.exists():
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"could not parse {p}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    elif path is not None:
        raise ConfigError(f"config file not found: {p}")

    raw = _apply_env_overrides(raw)
    if seed is not None:
        raw["seeds"] = [int(seed)]
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid run config {p}: {e}") from e


def require_paths(*paths: Optional[str]) -> None:
    """Launch-time check that every referenced input path exists."""
    missing = [str(x) for x in paths if x and not Path(x).exists()]
    if missing:
        raise ConfigError("missing input path(s): " + ", ".join(missing))

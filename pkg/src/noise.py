# -*- coding: utf-8 -*-
"""
Sensing and actuation noise.

Channels (each switched on separately in NoiseConfig):
  proprio         N(0, proprio_std^2) on every proprioceptive entry
  actuation       N(0, actuation_std^2) on the commanded joint values, before clamping
  tracking        N(0, tracking_std_m^2) on every coordinate of the tracked affordance points
  tracking_freeze per-step Bernoulli(freeze_probability); once triggered the tracked
                  points repeat unchanged for tracking_freeze_frames frames
  pixel           uniform integer in [-pixel_range, pixel_range] per pixel, clipped to [0, 255]

Every draw comes from its own generator seeded with (seed, channel, counter), so
turning one channel on or off never shifts the draws of another.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .config import NoiseConfig
from .handmodel import RobotJointVector

CH_PROPRIO, CH_ACTUATION, CH_TRACKING, CH_FREEZE, CH_PIXEL = range(5)


@dataclass(frozen=True)
class NoiseState:
    counters: Tuple[int, int, int, int, int] = (0, 0, 0, 0, 0)
    freeze_left: int = 0
    frozen_points: Optional[np.ndarray] = field(default=None, repr=False)

    def bump(self, channel: int) -> "NoiseState":
        c = list(self.counters)
        c[channel] += 1
        return replace(self, counters=tuple(c))

    def to_json(self) -> dict:
        return {"counters": list(self.counters), "freeze_left": self.freeze_left,
                "frozen_points": None if self.frozen_points is None else self.frozen_points.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "NoiseState":
        fp = d.get("frozen_points")
        return cls(tuple(int(x) for x in d["counters"]), int(d["freeze_left"]),
                   None if fp is None else np.asarray(fp, dtype=float))


def channel_rng(cfg: NoiseConfig, state: NoiseState, channel: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, channel, state.counters[channel]])


def clip_pixels(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0, 255).astype(np.uint8)


def _track(points: np.ndarray, cfg: NoiseConfig, state: NoiseState) -> Tuple[np.ndarray, NoiseState]:
    if state.freeze_left > 0:
        return state.frozen_points, replace(state, freeze_left=state.freeze_left - 1)
    out = points
    if cfg.tracking:
        out = points + channel_rng(cfg, state, CH_TRACKING).normal(0.0, cfg.tracking_std_m, points.shape)
        state = state.bump(CH_TRACKING)
    if cfg.tracking_freeze and cfg.tracking_freeze_frames > 0:
        hit = channel_rng(cfg, state, CH_FREEZE).random() < cfg.freeze_probability
        state = state.bump(CH_FREEZE)
        if hit:
            # this frame is the first of the frozen run
            frozen = np.array(out)
            state = replace(state, freeze_left=cfg.tracking_freeze_frames - 1, frozen_points=frozen)
            out = frozen
    return out, state


def perturb_observation(obs: Any, cfg: NoiseConfig, state: NoiseState) -> Tuple[Any, NoiseState]:
    """Noisy copy of a simenv Observation; the input is returned untouched when every channel is off."""
    changes = {}
    if cfg.proprio:
        changes["proprio"] = obs.proprio + channel_rng(cfg, state, CH_PROPRIO).normal(
            0.0, cfg.proprio_std, obs.proprio.shape)
        state = state.bump(CH_PROPRIO)

    if cfg.tracking or cfg.tracking_freeze or state.freeze_left > 0:
        pts, state = _track(obs.tracking_points, cfg, state)
        if pts is not obs.tracking_points:
            changes["tracking_points"] = pts
            changes["distances"] = cdist(obs.hand_points, pts)

    if cfg.pixel and obs.images is not None:
        noise = channel_rng(cfg, state, CH_PIXEL).integers(-cfg.pixel_range, cfg.pixel_range + 1,
                                                            obs.images.shape)
        changes["images"] = clip_pixels(obs.images.astype(np.int64) + noise)
        state = state.bump(CH_PIXEL)

    if not changes:
        return obs, state
    return replace(obs, **changes), state


def perturb_action(a: RobotJointVector, cfg: NoiseConfig, state: NoiseState) -> Tuple[RobotJointVector, NoiseState]:
    if not cfg.actuation:
        return a, state
    noise = channel_rng(cfg, state, CH_ACTUATION).normal(0.0, cfg.actuation_std, a.values.shape)
    return RobotJointVector(a.values + noise, a.limits), state.bump(CH_ACTUATION)

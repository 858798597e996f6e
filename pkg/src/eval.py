# -*- coding: utf-8 -*-
"""
Evaluation: grasp metrics, per-seed reports, mass/scale sweeps and the
reward-variant ablation.

Metrics (all on a 0-100 scale):
  success        hand contact and no table contact at every one of the final
                 `success_window` steps; share of all episodes
  stability      share of successful episodes whose grasp holds a
                 `perturb_force` push in all six axis directions
  functionality  share of successful episodes whose final hand points lie, on
                 average, closer than `functionality_threshold` to the
                 affordance points
  posture        100 * max(0, 1 - e / posture_ref), e = mean wrapped joint error
                 over the 24 hand joints against the consensus target;
                 averaged over successful episodes

Stability, functionality and posture are undefined (None) when no episode
succeeds.

Initial yaws are stratified: episode i of E starts at
lo + (i + 0.5) * (hi - lo) / E degrees.

Outputs (cli eval / sweep):
  out/metrics.json, out/metrics.csv, out/metrics.docx
  out/sweep.csv
  state/logs/episodes/seed<N>/<class>_<object index>_<episode>.jsonl
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .config import EvalConfig, NoiseConfig, RunConfig
from .errors import IncompleteLog, NotSuccessful
from .handmodel import N_ROBOT, RobotJointVector, hand_rotation
from .ingest import ObjectAsset
from .poseprior import ConsensusLibrary
from .simenv import DIRECTIONS, EnvState, EpisodeLog, GraspEnv, Observation, run_episode
from .utils import canonical_json, log, wrapped_abs_diff

PolicyFactory = Callable[[GraspEnv], Callable]
METRICS = ("success", "stability", "functionality", "posture")


# ── Scripted policies ────────────────────────────────────────────────────────

class StillPolicy:
    """Never moves; every episode fails."""

    def __call__(self, obs: Observation, state: EnvState) -> np.ndarray:
        return np.zeros(N_ROBOT)


class ScriptedGraspPolicy:
    """Open-loop pinch for the box assets: palm on one face, thumb on the opposite one.

    The hand keeps its fingers straight; the object is held between the palm
    plate and the opposed thumb. The hand yaws to the nearest face alignment,
    descends for `approach_steps`, then lifts by `lift_m` over `lift_ramp` steps.
    """

    # object centre in the hand frame while grasping
    GRIP_OFFSET = np.array([0.0, -0.035, 0.095])

    def __init__(self, env: GraspEnv, approach_steps: int = 60, lift_m: float = 0.12, lift_ramp: int = 40):
        self.env = env
        self.approach_steps = approach_steps
        self.lift_m = lift_m
        self.lift_ramp = lift_ramp
        self._plan: Optional[np.ndarray] = None

    def _make_plan(self, state: EnvState) -> np.ndarray:
        yaw = GraspEnv.yaw_of(state)
        # boxes look the same every quarter turn
        psi = ((yaw + math.pi / 4) % (math.pi / 2)) - math.pi / 4
        q = np.zeros(N_ROBOT)
        q[3:6] = (0.0, 0.0, -psi)
        centre = self.env.com_world(state)
        wrist = centre - hand_rotation(q) @ self.GRIP_OFFSET
        q[0:3] = wrist - np.asarray(self.env.cfg.arm_base)
        return q

    def __call__(self, obs: Observation, state: EnvState) -> np.ndarray:
        if state.step == 0 or self._plan is None:
            self._plan = self._make_plan(state)
        q = np.array(self._plan)
        t = state.step - self.approach_steps
        if t >= 0:
            # slow start so the pads keep contact while the grasp closes
            q[2] += self.lift_m * min(1.0, (t + 1) / self.lift_ramp)
        return q


# ── Per-episode metrics ──────────────────────────────────────────────────────

def _holding(rec: dict) -> bool:
    s = rec["state"]
    return bool(s["hand_contact"]) and not bool(s["table_contact"])


def grasp_success(episode: EpisodeLog, window: int = 50) -> bool:
    if not episode.complete or len(episode.steps) < window:
        raise IncompleteLog(f"episode log has {len(episode.steps)} of "
                            f"{episode.header.get('episode_length')} steps")
    return all(_holding(rec) for rec in episode.steps[-window:])


def grasp_stability(env: GraspEnv, episode: EpisodeLog, force: float = 1.0, window: int = 50) -> bool:
    """Push the final state of a successful episode along all six axes; held in every one."""
    if not grasp_success(episode, window):
        raise NotSuccessful("stability is only defined for a successful grasp")
    final = episode.final_state()
    if not final.attached:
        return False
    return all(env.apply_perturbation(final, force, name) for name, _ in DIRECTIONS)


def functionality(episode: EpisodeLog, gt_affordance: Optional[np.ndarray] = None,
                  threshold: float = 0.05, window: int = 50) -> bool:
    """Mean nearest distance from the final hand points to the affordance, strictly below threshold."""
    if not grasp_success(episode, window):
        raise NotSuccessful("functionality is only defined for a successful grasp")
    last = episode.steps[-1]
    aff = np.asarray(last["affordance_points"] if gt_affordance is None else gt_affordance, dtype=float)
    hand = np.asarray(last["hand_points"], dtype=float)
    return bool(cdist(hand, aff).min(axis=1).mean() < threshold)


def posture_score(final_pose: RobotJointVector, target: RobotJointVector, e_ref: float = math.pi / 2) -> float:
    e = float(np.mean(wrapped_abs_diff(final_pose.hand, target.hand)))
    return 100.0 * max(0.0, 1.0 - e / e_ref)


@dataclass(frozen=True)
class EpisodeScore:
    success: bool
    stable: bool
    functional: bool
    posture: Optional[float]


def score_episode(env: GraspEnv, episode: EpisodeLog, cfg: EvalConfig) -> EpisodeScore:
    """Every metric from a finished log; used live and when re-scoring persisted logs."""
    if not grasp_success(episode, cfg.success_window):
        return EpisodeScore(False, False, False, None)
    final = episode.final_state()
    stable = grasp_stability(env, episode, cfg.perturb_force, cfg.success_window)
    functional = functionality(episode, None, cfg.functionality_threshold, cfg.success_window)
    posture = None
    if env.target is not None:
        posture = posture_score(RobotJointVector(final.pose, env.limits), env.target, cfg.posture_ref)
    return EpisodeScore(True, bool(stable), functional, posture)


# ── Reports ──────────────────────────────────────────────────────────────────

def _stat(values: Sequence[Optional[float]]) -> Dict[str, Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(vals)), "std": float(np.std(vals))}


def _percentages(scores: Sequence[EpisodeScore]) -> Dict[str, Optional[float]]:
    won = [s for s in scores if s.success]
    postures = [s.posture for s in won if s.posture is not None]

    def share(flag: str) -> Optional[float]:
        return 100.0 * sum(getattr(s, flag) for s in won) / len(won) if won else None

    return {
        "success": 100.0 * len(won) / len(scores),
        "stability": share("stable"),
        "functionality": share("functional"),
        "posture": float(np.mean(postures)) if postures else None,
    }


@dataclass
class MetricsReport:
    per_seed: Dict[int, Dict[str, Dict[str, Optional[float]]]]   # seed -> class -> metric -> value
    episodes_per_object: int
    seeds: List[int]
    config_hash: str = ""
    variant: str = ""
    per_object: Dict[str, Dict[str, Dict[str, Optional[float]]]] = field(default_factory=dict)
    aggregate: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    def __post_init__(self):
        classes = sorted({c for by_cls in self.per_seed.values() for c in by_cls})
        self.per_object = {
            c: {m: _stat([self.per_seed[s][c][m] for s in self.seeds]) for m in METRICS} for c in classes
        }
        agg_by_seed = {
            s: {m: _stat([self.per_seed[s][c][m] for c in classes])["mean"] for m in METRICS}
            for s in self.seeds
        }
        self.aggregate = {m: _stat([agg_by_seed[s][m] for s in self.seeds]) for m in METRICS}

    def to_json(self) -> dict:
        return {
            "kind": "metrics_report", "format_version": 1, "config_hash": self.config_hash,
            "variant": self.variant, "seeds": list(self.seeds),
            "episodes_per_object": self.episodes_per_object,
            "aggregate": self.aggregate, "per_object": self.per_object,
            "per_seed": {str(s): v for s, v in self.per_seed.items()},
        }

    def rows(self) -> List[dict]:
        out = []
        for c, metrics in [("ALL", self.aggregate), *self.per_object.items()]:
            for m in METRICS:
                row = {"variant": self.variant, "object_class": c, "metric": m, **metrics[m]}
                if c != "ALL":
                    for s in self.seeds:
                        row[f"seed{s}"] = self.per_seed[s][c][m]
                out.append(row)
        return out


def write_report_json(report: MetricsReport, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(canonical_json(report.to_json()) + "\n", encoding="utf-8")


def write_report_csv(reports: Iterable[MetricsReport], path) -> pd.DataFrame:
    df = pd.DataFrame([row for r in reports for row in r.rows()])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return df


# ── Drivers ──────────────────────────────────────────────────────────────────

def stratified_yaws(n: int, yaw_range_deg: Tuple[float, float]) -> List[float]:
    lo, hi = yaw_range_deg
    return [math.radians(lo + (i + 0.5) * (hi - lo) / n) for i in range(n)]


def episode_seed(run_seed: int, obj_index: int, episode: int) -> int:
    return run_seed * 1_000_003 + obj_index * 10_007 + episode


def evaluate(policy_factory: PolicyFactory, assets: Sequence[ObjectAsset], library: ConsensusLibrary,
             cfg: RunConfig, seeds: Optional[Sequence[int]] = None, noise_cfg: Optional[NoiseConfig] = None,
             episodes_per_object: Optional[int] = None, log_dir=None, run_hash: str = "",
             workers: int = 1) -> MetricsReport:
    """Run every (seed, object, episode) and aggregate per seed, then across seeds."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    noise_cfg = cfg.noise if noise_cfg is None else noise_cfg
    n_ep = cfg.eval.episodes_per_object if episodes_per_object is None else int(episodes_per_object)
    library.require(a.object_class for a in assets)
    yaws = stratified_yaws(n_ep, cfg.env.yaw_range_deg)

    def one(job) -> Tuple[int, str, EpisodeScore]:
        run_seed, j, i = job
        asset = assets[j]
        es = episode_seed(run_seed, j, i)
        env = GraspEnv(asset, cfg.env, cfg.reward, noise_cfg.model_copy(update={"seed": es}),
                       library.target(asset.object_class))
        episode, _ = run_episode(env, policy_factory(env), es, yaws[i], run_hash)
        if log_dir is not None:
            episode.write(Path(log_dir) / f"seed{run_seed}" / f"{asset.object_class}_{j}_{i:03d}.jsonl")
        return run_seed, asset.object_class, score_episode(env, episode, cfg.eval)

    jobs = [(s, j, i) for s in seeds for j in range(len(assets)) for i in range(n_ep)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]

    grouped: Dict[int, Dict[str, List[EpisodeScore]]] = {s: {} for s in seeds}
    for s, cls, score in results:
        grouped[s].setdefault(cls, []).append(score)
    per_seed = {s: {c: _percentages(v) for c, v in by_cls.items()} for s, by_cls in grouped.items()}
    report = MetricsReport(per_seed, n_ep, seeds, run_hash, cfg.reward.variant)
    agg = report.aggregate
    log("eval", f"{len(jobs)} episode(s): " + " ".join(
        f"{m} {'n/a' if agg[m]['mean'] is None else format(agg[m]['mean'], '.1f') + '%'}" for m in METRICS))
    return report


def rescore_logs(log_dir, assets: Sequence[ObjectAsset], library: ConsensusLibrary, cfg: RunConfig,
                 run_hash: str = "") -> MetricsReport:
    """Rebuild a report from persisted episode logs (seed<N>/<class>_<j>_<i>.jsonl)."""
    by_source = {a.source: a for a in assets}
    grouped: Dict[int, Dict[str, List[EpisodeScore]]] = {}
    n_ep = 0
    for seed_dir in sorted(Path(log_dir).glob("seed*")):
        s = int(seed_dir.name[len("seed"):])
        for path in sorted(seed_dir.glob("*.jsonl")):
            episode = EpisodeLog.read(path)
            asset = by_source[episode.header["asset"]]
            env = GraspEnv(asset, cfg.env, cfg.reward, cfg.noise, library.target(asset.object_class))
            grouped.setdefault(s, {}).setdefault(asset.object_class, []).append(
                score_episode(env, episode, cfg.eval))
    for by_cls in grouped.values():
        n_ep = max([n_ep] + [len(v) for v in by_cls.values()])
    per_seed = {s: {c: _percentages(v) for c, v in by_cls.items()} for s, by_cls in grouped.items()}
    return MetricsReport(per_seed, n_ep, sorted(grouped), run_hash, cfg.reward.variant)


def sweep(policy_factory: PolicyFactory, asset: ObjectAsset, library: ConsensusLibrary, cfg: RunConfig,
          masses: Optional[Sequence[float]] = None, scales: Optional[Sequence[float]] = None,
          seeds: Optional[Sequence[int]] = None, episodes_per_object: Optional[int] = None,
          run_hash: str = "") -> pd.DataFrame:
    """Success rate over a mass x scale grid; one row per grid point."""
    masses = list(cfg.eval.sweep_masses if masses is None else masses)
    scales = list(cfg.eval.sweep_scales if scales is None else scales)
    rows = []
    for m in masses:
        for sc in scales:
            env_cfg = cfg.env.model_copy(update={"mass_override": float(m), "scale_override": float(sc)})
            point_cfg = cfg.model_copy(update={"env": env_cfg})
            rep = evaluate(policy_factory, [asset], library, point_cfg, seeds,
                           episodes_per_object=episodes_per_object, run_hash=run_hash)
            rows.append({"object_class": asset.object_class, "mass": float(m), "scale": float(sc),
                         "success_mean": rep.aggregate["success"]["mean"],
                         "success_std": rep.aggregate["success"]["std"]})
            log("sweep", f"mass {m:.2f} kg scale {sc:.2f}: success {rows[-1]['success_mean']:.1f}%")
    return pd.DataFrame(rows)


ABLATION_VARIANTS = ("graff_like", "affordance_touch", "dexvip")


def ablation(policy_factories: Dict[str, PolicyFactory], assets: Sequence[ObjectAsset],
             library: ConsensusLibrary, cfg: RunConfig, seeds: Optional[Sequence[int]] = None,
             episodes_per_object: Optional[int] = None, run_hash: str = "") -> Dict[str, MetricsReport]:
    """Evaluate one policy per reward variant on identical seeds and yaws."""
    out: Dict[str, MetricsReport] = {}
    for variant in ABLATION_VARIANTS:
        if variant not in policy_factories:
            continue
        vcfg = cfg.model_copy(update={"reward": cfg.reward.model_copy(update={"variant": variant})})
        out[variant] = evaluate(policy_factories[variant], assets, library, vcfg, seeds,
                                episodes_per_object=episodes_per_object, run_hash=run_hash)
    return out

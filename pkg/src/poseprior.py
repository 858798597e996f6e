# -*- coding: utf-8 -*-
"""
Consensus grasp poses per object class.

Every retargeted pose of a class goes into one PoseSet; a k-medoid
clustering over the 24 hand revolutes (arm DoF ignored, wrapped angle
differences) splits it into modes and the medoid of the largest cluster
becomes that class's target pose for the pose reward.

Small sets (C(n, k) <= exhaustive_limit) are solved exactly by enumerating
every medoid set. Larger sets start from k-medoids++ seeding and run PAM
best-swap until no swap lowers the total cost.

Tie rules:
  * a pose equidistant from several medoids joins the lowest medoid index
  * clusters are ordered by medoid index
  * consensus = largest cluster, then lower within-cluster cost, then lower
    medoid index
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import PriorConfig
from .errors import ConfigError, KTooLarge, MissingConsensus, ParseError
from .handmodel import HumanHandKeypoints, RobotJointVector
from .utils import log, wrap_angle

LIBRARY_FORMAT_VERSION = 1
_EPS = 1e-12


@dataclass(frozen=True)
class PoseEntry:
    source_id: str
    robot: RobotJointVector
    keypoints: Optional[HumanHandKeypoints] = None


@dataclass(frozen=True)
class PoseSet:
    object_class: str
    poses: Tuple[PoseEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError(f"pose set for {self.object_class!r} is empty")

    def __len__(self) -> int:
        return len(self.poses)

    def hand_matrix(self) -> np.ndarray:
        return np.stack([p.robot.hand for p in self.poses])


@dataclass(frozen=True)
class ClusterResult:
    k: int
    assignments: np.ndarray          # (n,) cluster id per pose
    medoids: Tuple[int, ...]         # pose index per cluster, ascending
    sizes: Tuple[int, ...]
    costs: Tuple[float, ...]         # within-cluster distance sums
    total_cost: float
    consensus_cluster: int
    consensus_index: int
    consensus_robot_pose: RobotJointVector
    method: str                      # "exhaustive" | "pam"
    cost_history: Tuple[float, ...] = field(default=())


# ── Distances ────────────────────────────────────────────────────────────────

def pose_distance(a: RobotJointVector, b: RobotJointVector) -> float:
    return float(np.mean(np.abs(wrap_angle(a.hand - b.hand))))


def distance_matrix(poses: PoseSet) -> np.ndarray:
    H = poses.hand_matrix()
    diff = np.abs(wrap_angle(H[:, None, :] - H[None, :, :]))
    D = diff.mean(axis=-1)
    np.fill_diagonal(D, 0.0)
    return D


# ── Clustering ───────────────────────────────────────────────────────────────

def _cost(D: np.ndarray, medoids: Sequence[int]) -> float:
    return float(D[:, list(medoids)].min(axis=1).sum())


def _assign(D: np.ndarray, medoids: Sequence[int]) -> np.ndarray:
    meds = list(medoids)
    labels = np.argmin(D[:, meds], axis=1)
    for c, m in enumerate(meds):
        labels[m] = c
    return labels


def _exhaustive(D: np.ndarray, k: int) -> Tuple[Tuple[int, ...], List[float]]:
    best: Optional[Tuple[int, ...]] = None
    best_cost = math.inf
    for combo in itertools.combinations(range(D.shape[0]), k):
        c = _cost(D, combo)
        if c < best_cost - _EPS:
            best, best_cost = combo, c
    return best, [best_cost]


def _kmedoids_pp(D: np.ndarray, k: int, rng: np.random.Generator) -> List[int]:
    n = D.shape[0]
    medoids = [int(np.argmin(D.sum(axis=1)))]
    while len(medoids) < k:
        d2 = D[:, medoids].min(axis=1) ** 2
        d2[medoids] = 0.0
        total = d2.sum()
        if total <= 0.0:
            medoids.append(next(i for i in range(n) if i not in medoids))
            continue
        medoids.append(int(rng.choice(n, p=d2 / total)))
    return sorted(medoids)


def _pam(D: np.ndarray, k: int, seed: int) -> Tuple[Tuple[int, ...], List[float]]:
    rng = np.random.default_rng(seed)
    medoids = _kmedoids_pp(D, k, rng)
    cost = _cost(D, medoids)
    history = [cost]
    n = D.shape[0]
    while True:
        best_swap = None
        best_cost = cost
        for i in range(k):
            for h in range(n):
                if h in medoids:
                    continue
                trial = medoids[:i] + [h] + medoids[i + 1:]
                c = _cost(D, trial)
                if c < best_cost - _EPS:
                    best_cost, best_swap = c, trial
        if best_swap is None:
            break
        medoids, cost = sorted(best_swap), best_cost
        history.append(cost)
    return tuple(medoids), history


def k_medoids(poses: PoseSet, k: int, seed: int = 0, exhaustive_limit: int = 5000) -> ClusterResult:
    n = len(poses)
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the {n} poses of {poses.object_class!r}")

    D = distance_matrix(poses)
    if math.comb(n, k) <= exhaustive_limit:
        medoids, history = _exhaustive(D, k)
        method = "exhaustive"
    else:
        medoids, history = _pam(D, k, seed)
        method = "pam"
    medoids = tuple(sorted(medoids))

    labels = _assign(D, medoids)
    sizes = tuple(int(np.sum(labels == c)) for c in range(k))
    costs = tuple(float(D[labels == c, m].sum()) for c, m in enumerate(medoids))
    cc = min(range(k), key=lambda c: (-sizes[c], costs[c], medoids[c]))
    ci = medoids[cc]
    return ClusterResult(
        k=k,
        assignments=labels,
        medoids=medoids,
        sizes=sizes,
        costs=costs,
        total_cost=float(sum(costs)),
        consensus_cluster=cc,
        consensus_index=ci,
        consensus_robot_pose=poses.poses[ci].robot,
        method=method,
        cost_history=tuple(history),
    )


def consensus_pose(poses: PoseSet, k: int, seed: int = 0, exhaustive_limit: int = 5000) -> ClusterResult:
    res = k_medoids(poses, k, seed, exhaustive_limit)
    src = poses.poses[res.consensus_index].source_id
    log("prior", f"{poses.object_class}: k={k} sizes={list(res.sizes)} consensus={src} ({res.method})")
    return res


def silhouette(D: np.ndarray, labels: np.ndarray) -> float:
    ks = np.unique(labels)
    if len(ks) < 2:
        return 0.0
    scores = np.zeros(len(labels))
    for i in range(len(labels)):
        own = labels == labels[i]
        if own.sum() <= 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == c].mean() for c in ks if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def select_k(poses: PoseSet, k_values: Iterable[int] = range(1, 6), seed: int = 0,
             exhaustive_limit: int = 5000) -> Tuple[int, Dict[int, float]]:
    """Pick k by mean silhouette; k = 1 scores 0, ties go to the smaller k."""
    D = distance_matrix(poses)
    scores: Dict[int, float] = {}
    for k in sorted(k_values):
        if k > len(poses):
            break
        if k == 1:
            scores[k] = 0.0
            continue
        res = k_medoids(poses, k, seed, exhaustive_limit)
        scores[k] = silhouette(D, res.assignments)
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


def build_library(pose_sets: Dict[str, PoseSet], cfg: PriorConfig) -> Dict[str, ClusterResult]:
    out: Dict[str, ClusterResult] = {}
    for cls in sorted(pose_sets):
        ps = pose_sets[cls]
        k = cfg.k
        if k == "auto":
            k, scores = select_k(ps, seed=cfg.seed, exhaustive_limit=cfg.exhaustive_limit)
            log("prior", f"{cls}: silhouette {({kk: round(s, 3) for kk, s in scores.items()})} -> k={k}")
        out[cls] = consensus_pose(ps, int(k), cfg.seed, cfg.exhaustive_limit)
    return out


# ── Consensus library file ───────────────────────────────────────────────────

@dataclass(frozen=True)
class ConsensusLibrary:
    poses: Dict[str, RobotJointVector]
    diagnostics: Dict[str, dict]
    config_hash: str = ""

    def target(self, object_class: str) -> RobotJointVector:
        if object_class not in self.poses:
            raise MissingConsensus(f"no consensus pose for object class {object_class!r}")
        return self.poses[object_class]

    def require(self, classes: Iterable[str]) -> None:
        missing = sorted(set(classes) - set(self.poses))
        if missing:
            raise MissingConsensus(f"consensus library lacks: {', '.join(missing)}")


def write_library(path, pose_sets: Dict[str, PoseSet], results: Dict[str, ClusterResult],
                  config_hash: str, seeds: Sequence[int] = ()) -> None:
    classes = {}
    for cls, res in results.items():
        ps = pose_sets[cls]
        classes[cls] = {
            "consensus": res.consensus_robot_pose.as_dict(),
            "consensus_source_id": ps.poses[res.consensus_index].source_id,
            "k": res.k,
            "method": res.method,
            "sizes": list(res.sizes),
            "costs": list(res.costs),
            "total_cost": res.total_cost,
            "cost_history": list(res.cost_history),
            "medoid_source_ids": [ps.poses[m].source_id for m in res.medoids],
            "assignments": {p.source_id: int(c) for p, c in zip(ps.poses, res.assignments)},
        }
    doc = {"format_version": LIBRARY_FORMAT_VERSION, "config_hash": config_hash,
           "seeds": list(seeds), "classes": classes}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def read_library(path) -> ConsensusLibrary:
    p = Path(path)
    if not p.exists():
        raise MissingConsensus(f"consensus library not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{p}: {e}") from e
    if doc.get("format_version") != LIBRARY_FORMAT_VERSION:
        raise ParseError(f"{p}: unsupported format_version {doc.get('format_version')!r}")
    poses, diags = {}, {}
    for cls, entry in (doc.get("classes") or {}).items():
        try:
            poses[cls] = RobotJointVector.from_dict(entry["consensus"])
        except (KeyError, ValueError) as e:
            raise ParseError(f"{p}: bad consensus entry for {cls!r}: {e}") from e
        diags[cls] = {k: v for k, v in entry.items() if k != "consensus"}
    return ConsensusLibrary(poses, diags, doc.get("config_hash", ""))


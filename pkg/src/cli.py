# -*- coding: utf-8 -*-
"""
Command-line entry point.

    python -m src.cli retarget data/poses/cube.json --out state/retargeted/cube.json
    python -m src.cli cluster state/retargeted/cube.json --k 3
    python -m src.cli train --updates 10
    python -m src.cli eval --policy checkpoint
    python -m src.cli sweep --policy scripted --episodes 4
    python -m src.cli replay state/logs/episodes/seed0/cube_0_000.jsonl

Every subcommand reads the run config (--config, else CFG_RUN, else
config/run.yaml) and stamps its hash into what it writes.

Exit status: 0 ok, 1 replay mismatch, 2 any other DexPriorError
(printed as "[error] <Name>: <message>").

Env vars:
    CFG_RUN, OUT_DIR, STATE_DIR, SEED   see src/config.py
    DEBUG=1                             verbose [*:debug] lines
"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from dotenv import load_dotenv

from .agent import MeanPolicy, load_checkpoint, train
from .build_report_docx import build_docx
from .config import NoiseConfig, RunConfig, config_hash, load_run_config, require_paths
from .errors import DexPriorError, ReplayMismatch
from .eval import (
    MetricsReport,
    ScriptedGraspPolicy,
    StillPolicy,
    evaluate,
    sweep,
    write_report_csv,
    write_report_json,
)
from .handmodel import DEFAULT_LIMITS, ROBOT_HIERARCHY, load_hierarchy_file, load_limits_file
from .ingest import group_pose_sets, load_assets, load_object_asset, load_pose_records, load_retargeted, write_retargeted
from .poseprior import ConsensusLibrary, build_library, read_library, write_library
from .retarget import retarget
from .simenv import EpisodeLog, GraspEnv, replay
from .utils import log

# variants whose reward reads the consensus target
POSE_VARIANTS = ("dexvip",)


# ── Shared loading ───────────────────────────────────────────────────────────

def _limits(cfg: RunConfig):
    return load_limits_file(cfg.paths.joint_limits) if cfg.paths.joint_limits else DEFAULT_LIMITS


def _hierarchy(cfg: RunConfig):
    return load_hierarchy_file(cfg.paths.hierarchy) if cfg.paths.hierarchy else ROBOT_HIERARCHY


def _library(cfg: RunConfig, needed: bool = True) -> Optional[ConsensusLibrary]:
    if not needed:
        return None
    return read_library(cfg.paths.consensus_library)


def _assets(cfg: RunConfig):
    if not cfg.paths.assets:
        raise DexPriorError("no assets listed under paths.assets")
    require_paths(*cfg.paths.assets)
    return load_assets(cfg.paths.assets)


def _policy_factory(kind: str, cfg: RunConfig, seed: int, checkpoint: Optional[str]) -> Callable:
    if kind == "scripted":
        return lambda env: ScriptedGraspPolicy(env)
    if kind == "still":
        return lambda env: StillPolicy()
    path = checkpoint or str(Path(cfg.paths.checkpoint_dir) / f"seed{seed}" / "latest.npz")
    require_paths(path)
    net, _, meta = load_checkpoint(path, cfg.ppo.lr, cfg.ppo.adam_eps)
    log("eval", f"seed {seed}: policy from {path} (update {meta['update']})")
    return lambda env: MeanPolicy(net)


# ── Subcommands ──────────────────────────────────────────────────────────────

def cmd_retarget(inputs: Sequence[str], out: Optional[str], cfg: RunConfig, run_hash: str) -> int:
    limits = _limits(cfg)
    for src in inputs:
        records = load_pose_records(src, cfg.prior.confidence_threshold)
        entries, dropped = [], list(records.dropped)
        for rec in records.records:
            try:
                entries.append((rec, retarget(rec.keypoints, limits)))
            except DexPriorError as e:
                dropped.append((rec.source_id, f"{type(e).__name__}: {e}"))
                log("warn", f"{rec.source_id}: not retargeted ({type(e).__name__}: {e})")
        if out and len(inputs) == 1 and out.endswith(".json"):
            dest = Path(out)
        else:
            dest = Path(out or Path(cfg.paths.out_dir) / "retargeted") / f"{Path(src).stem}.retargeted.json"
        write_retargeted(dest, records.object_class, entries, dropped, run_hash)
        log("retarget", f"{src}: {len(entries)} pose(s) written to {dest}, {len(dropped)} dropped")
        for sid, why in dropped:
            log("retarget", f"  dropped {sid}: {why}")
    return 0


def cmd_cluster(inputs: Sequence[str], out: Optional[str], k: Optional[str], cfg: RunConfig,
                run_hash: str) -> int:
    prior = cfg.prior
    if k is not None:
        prior = prior.model_copy(update={"k": k if k == "auto" else int(k)})
    sets = group_pose_sets([load_retargeted(p) for p in inputs])
    results = build_library(sets, prior)
    dest = out or cfg.paths.consensus_library
    write_library(dest, sets, results, run_hash, [prior.seed])
    for cls, res in sorted(results.items()):
        log("cluster", f"{cls}: k={res.k} sizes={list(res.sizes)} consensus={sets[cls].poses[res.consensus_index].source_id}")
    log("cluster", f"library written to {dest}")
    return 0


def cmd_train(cfg: RunConfig, updates: Optional[int], run_hash: str) -> int:
    assets = _assets(cfg)
    library = _library(cfg, cfg.reward.variant in POSE_VARIANTS)
    limits, hierarchy = _limits(cfg), _hierarchy(cfg)
    for seed in cfg.seeds:
        envs = []
        for i in range(cfg.train.n_envs):
            asset = assets[i % len(assets)]
            target = library.target(asset.object_class) if library else None
            envs.append(GraspEnv.from_run_config(asset, cfg, target, limits, hierarchy))
        _, history = train(cfg, envs, seed, updates, run_hash)
        log("train", f"seed {seed}: {len(history)} update(s) done")
    return 0


def _merge(reports: List[MetricsReport], cfg: RunConfig, run_hash: str) -> MetricsReport:
    per_seed: Dict[int, dict] = {}
    for r in reports:
        per_seed.update(r.per_seed)
    seeds = [s for r in reports for s in r.seeds]
    return MetricsReport(per_seed, reports[0].episodes_per_object, seeds, run_hash, cfg.reward.variant)


def cmd_eval(cfg: RunConfig, policy: str, checkpoint: Optional[str], episodes: Optional[int],
             out: Optional[str], run_hash: str) -> int:
    library = _library(cfg)
    assets = _assets(cfg)
    library.require(a.object_class for a in assets)
    log_dir = Path(cfg.paths.log_dir) / "episodes"
    reports = [
        evaluate(_policy_factory(policy, cfg, s, checkpoint), assets, library, cfg, [s],
                 episodes_per_object=episodes, log_dir=log_dir, run_hash=run_hash)
        for s in cfg.seeds
    ]
    report = _merge(reports, cfg, run_hash)
    out_dir = Path(out or cfg.paths.out_dir)
    write_report_json(report, out_dir / "metrics.json")
    write_report_csv([report], out_dir / "metrics.csv")
    build_docx([report.to_json()], out_dir / "metrics.docx")
    log("eval", f"report written to {out_dir}")
    return 0


def cmd_sweep(cfg: RunConfig, policy: str, checkpoint: Optional[str], episodes: Optional[int],
              object_class: Optional[str], out: Optional[str], run_hash: str) -> int:
    library = _library(cfg)
    assets = _assets(cfg)
    asset = next((a for a in assets if object_class in (None, a.object_class)), None)
    if asset is None:
        raise DexPriorError(f"no asset of class {object_class!r}")
    seed = cfg.seeds[0]
    df = sweep(_policy_factory(policy, cfg, seed, checkpoint), asset, library, cfg,
               seeds=cfg.seeds, episodes_per_object=episodes, run_hash=run_hash)
    df.insert(0, "config_hash", run_hash)
    dest = Path(out or cfg.paths.out_dir) / "sweep.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(dest, index=False)
    log("sweep", f"{len(df)} grid point(s) written to {dest}")
    return 0


def cmd_replay(path: str, cfg: RunConfig, run_hash: str) -> int:
    episode = EpisodeLog.read(path)
    h = episode.header
    if h.get("config_hash") and h["config_hash"] != run_hash:
        log("warn", f"log was written under config {h['config_hash'][:12]}, replaying under {run_hash[:12]}")
    asset = load_object_asset(h["asset"])
    env_cfg = cfg.env.model_copy(update={"mass_override": h["mass"], "scale_override": None})
    if h["scale"] != asset.scale:
        env_cfg = env_cfg.model_copy(update={"scale_override": h["scale"] / asset.scale})
    reward_cfg = cfg.reward.model_copy(update={"variant": h["variant"]})
    target = None
    if h["variant"] in POSE_VARIANTS:
        target = read_library(cfg.paths.consensus_library).target(h["object_class"])
    noise_cfg = NoiseConfig.model_validate(h["noise"]) if "noise" in h else cfg.noise
    env = GraspEnv(asset, env_cfg, reward_cfg, noise_cfg, target, _limits(cfg), _hierarchy(cfg))
    rep = replay(env, episode)
    if not rep.ok:
        raise ReplayMismatch(f"step {rep.first_mismatch}: {rep.reason} ({rep.matched}/{rep.total} steps match)")
    print(f"OK, {rep.matched}/{rep.total} steps match")
    return 0


# ── Main ─────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m src.cli", description="Human-prior dexterous grasping toolkit.")
    ap.add_argument("--config", help="run config YAML (default: $CFG_RUN or config/run.yaml)")
    ap.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    ap.add_argument("--out", help="output file or directory")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("retarget", help="human keypoint records -> robot joint vectors")
    p.add_argument("inputs", nargs="*", help="pose record JSON files (default: paths.pose_records)")

    p = sub.add_parser("cluster", help="k-medoids consensus pose per object class")
    p.add_argument("inputs", nargs="*", help="retargeted pose files (default: paths.retargeted)")
    p.add_argument("--k", help="cluster count or 'auto'")

    p = sub.add_parser("train", help="PPO training, one run per seed")
    p.add_argument("--updates", type=int, help="number of PPO updates (default: train.updates)")

    for name, text in (("eval", "evaluation report"), ("sweep", "mass x scale success grid")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--policy", choices=("checkpoint", "scripted", "still"), default="checkpoint")
        p.add_argument("--checkpoint", help="checkpoint file (default: <checkpoint_dir>/seed<N>/latest.npz)")
        p.add_argument("--episodes", type=int, help="episodes per object (default: eval.episodes_per_object)")
        if name == "sweep":
            p.add_argument("--object", dest="object_class", help="object class to sweep (default: first asset)")

    p = sub.add_parser("replay", help="re-execute an episode log and compare step by step")
    p.add_argument("log", help="episode log (.jsonl)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.seed)
        run_hash = config_hash(cfg)
        if args.cmd == "retarget":
            inputs = args.inputs or cfg.paths.pose_records
            require_paths(*inputs)
            return cmd_retarget(inputs, args.out, cfg, run_hash)
        if args.cmd == "cluster":
            inputs = args.inputs or cfg.paths.retargeted
            require_paths(*inputs)
            return cmd_cluster(inputs, args.out, args.k, cfg, run_hash)
        if args.cmd == "train":
            return cmd_train(cfg, args.updates, run_hash)
        if args.cmd == "eval":
            return cmd_eval(cfg, args.policy, args.checkpoint, args.episodes, args.out, run_hash)
        if args.cmd == "sweep":
            return cmd_sweep(cfg, args.policy, args.checkpoint, args.episodes, args.object_class,
                             args.out, run_hash)
        return cmd_replay(args.log, cfg, run_hash)
    except ReplayMismatch as e:
        print(f"[error] ReplayMismatch: {e}")
        return 1
    except DexPriorError as e:
        print(f"[error] {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

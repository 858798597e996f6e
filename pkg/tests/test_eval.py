import json
import math
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from docx import Document

from src.build_report_docx import build_docx
from src.config import RunConfig
from src.errors import IncompleteLog, MissingConsensus, NotSuccessful
from src.eval import (
    EpisodeScore,
    MetricsReport,
    ScriptedGraspPolicy,
    StillPolicy,
    _percentages,
    ablation,
    evaluate,
    functionality,
    grasp_stability,
    grasp_success,
    posture_score,
    rescore_logs,
    stratified_yaws,
    sweep,
    write_report_csv,
    write_report_json,
)
from src.handmodel import N_ROBOT, RobotJointVector
from src.poseprior import ConsensusLibrary
from src.simenv import DIRECTIONS, EpisodeLog


def synthetic_log(holding, hand=((0.0, 0.0, 0.0),), aff=((0.01, 0.0, 0.0),), length=None):
    steps = [{"state": {"hand_contact": h, "table_contact": not h},
              "hand_points": [list(p) for p in hand], "affordance_points": [list(p) for p in aff]}
             for h in holding]
    return EpisodeLog({"kind": "header", "episode_length": len(holding) if length is None else length}, steps)


@pytest.fixture
def library():
    return ConsensusLibrary({"cube": RobotJointVector.zeros()}, {})


def scripted(env):
    return ScriptedGraspPolicy(env)


def still(env):
    return StillPolicy()


# ── success / functionality / posture ────────────────────────────────────────

def test_success_needs_every_step_of_the_window():
    assert grasp_success(synthetic_log([False] * 7 + [True] * 3), window=3)
    assert not grasp_success(synthetic_log([False] * 7 + [True, False, True]), window=3)
    assert not grasp_success(synthetic_log([True] * 9 + [False]), window=3)
    assert grasp_success(synthetic_log([True] * 3), window=3)


def test_success_on_incomplete_log():
    with pytest.raises(IncompleteLog):
        grasp_success(synthetic_log([True] * 5, length=10), window=3)
    with pytest.raises(IncompleteLog):
        grasp_success(synthetic_log([True] * 2), window=3)


def test_functionality_threshold_is_strict():
    near = synthetic_log([True] * 3, hand=[(0, 0, 0), (0, 0, 0.04)], aff=[(0, 0, 0.02)])
    assert functionality(near, threshold=0.05, window=3)
    edge = synthetic_log([True] * 3, hand=[(0, 0, 0)], aff=[(0.05, 0, 0)])
    assert not functionality(edge, threshold=0.05, window=3)
    assert functionality(edge, gt_affordance=np.zeros((1, 3)), threshold=0.05, window=3)


def test_functionality_requires_success():
    with pytest.raises(NotSuccessful):
        functionality(synthetic_log([False] * 3), window=3)


class HeldLog(EpisodeLog):
    """Synthetic log whose final state is just an attached flag."""

    def final_state(self):
        return SimpleNamespace(attached=True)


class PushRig:
    """Records every push; the object slips along the listed directions."""

    def __init__(self, slips=()):
        self.slips = set(slips)
        self.pushed = []

    def apply_perturbation(self, state, force, direction):
        self.pushed.append(direction)
        return direction not in self.slips


def test_stability_needs_all_six_directions():
    held = HeldLog(synthetic_log([True] * 3).header, synthetic_log([True] * 3).steps)
    rig = PushRig()
    assert grasp_stability(rig, held, window=3)
    assert rig.pushed == [name for name, _ in DIRECTIONS]
    assert not grasp_stability(PushRig(slips={"-z"}), held, window=3)


def test_stability_requires_success():
    dropped = synthetic_log([True] * 8 + [False, True])
    with pytest.raises(NotSuccessful):
        grasp_stability(PushRig(), HeldLog(dropped.header, dropped.steps), window=3)


def test_posture_score():
    target = RobotJointVector.zeros()
    assert posture_score(target, target) == 100.0
    half = RobotJointVector(np.r_[np.zeros(6), np.full(24, math.pi / 4)])
    assert posture_score(half, target) == pytest.approx(50.0)
    far = RobotJointVector(np.r_[np.zeros(6), np.full(24, math.pi / 2)])
    assert posture_score(far, target) == 0.0
    arm_only = RobotJointVector(np.r_[np.full(6, 0.4), np.zeros(24)])
    assert posture_score(arm_only, target) == 100.0


# ── aggregation ──────────────────────────────────────────────────────────────

def test_stability_and_functionality_over_successes_only():
    won = [EpisodeScore(True, True, True, 80.0), EpisodeScore(True, True, True, 60.0)]
    lost = [EpisodeScore(False, False, False, None)] * 2
    assert _percentages(won + lost) == {"success": 50.0, "stability": 100.0, "functionality": 100.0, "posture": 70.0}

    mixed = [EpisodeScore(True, True, False, 80.0), EpisodeScore(True, False, True, 60.0)] + lost
    assert _percentages(mixed) == {"success": 50.0, "stability": 50.0, "functionality": 50.0, "posture": 70.0}


def test_no_success_leaves_other_metrics_undefined():
    p = _percentages([EpisodeScore(False, False, False, None)] * 3)
    assert p == {"success": 0.0, "stability": None, "functionality": None, "posture": None}


def test_report_means_over_seeds():
    per_seed = {
        0: {"cube": {"success": 100.0, "stability": 50.0, "functionality": 0.0, "posture": 90.0},
            "die": {"success": 50.0, "stability": 50.0, "functionality": 0.0, "posture": None}},
        1: {"cube": {"success": 50.0, "stability": 0.0, "functionality": 0.0, "posture": 70.0},
            "die": {"success": 0.0, "stability": 0.0, "functionality": 0.0, "posture": None}},
    }
    rep = MetricsReport(per_seed, episodes_per_object=2, seeds=[0, 1], variant="dexvip")
    assert rep.per_object["cube"]["success"] == {"mean": 75.0, "std": 25.0}
    assert rep.per_object["die"]["posture"] == {"mean": None, "std": None}
    assert rep.aggregate["success"]["mean"] == pytest.approx(50.0)
    assert rep.aggregate["posture"]["mean"] == pytest.approx(80.0)
    rows = rep.rows()
    assert len(rows) == 3 * 4
    assert rows[4]["object_class"] == "cube" and rows[4]["seed1"] == 50.0


def test_report_files(tmp_path):
    per_seed = {0: {"cube": {"success": 100.0, "stability": 100.0, "functionality": 0.0, "posture": 75.0}}}
    rep = MetricsReport(per_seed, 1, [0], "abc", "dexvip")
    write_report_json(rep, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text(encoding="utf-8"))
    assert doc["config_hash"] == "abc"
    assert doc["aggregate"]["success"]["mean"] == 100.0
    df = write_report_csv([rep], tmp_path / "m.csv")
    assert list(pd.read_csv(tmp_path / "m.csv")["metric"]) == list(df["metric"])

    sweep_df = pd.DataFrame([{"object_class": "cube", "mass": m, "scale": s, "success_mean": 10.0 * m,
                              "success_std": 0.0} for m in (0.5, 1.0) for s in (0.8, 1.2)])
    out = build_docx([doc], tmp_path / "m.docx", sweep_df)
    text = "\n".join(p.text for p in Document(str(out)).paragraphs)
    assert "Grasp evaluation" in text
    assert "DEXVIP" in text
    assert len(Document(str(out)).tables) == 3


def test_stratified_yaws():
    assert np.degrees(stratified_yaws(4, (0.0, 180.0))) == pytest.approx([22.5, 67.5, 112.5, 157.5])
    assert np.degrees(stratified_yaws(1, (10.0, 10.0))) == pytest.approx([10.0])


# ── episodes in the simulator ────────────────────────────────────────────────

def test_scripted_grasp_lifts_the_cube(cube_asset, library, tmp_path):
    cfg = RunConfig()
    rep = evaluate(scripted, [cube_asset], library, cfg, seeds=[0], episodes_per_object=2,
                   log_dir=tmp_path / "episodes")
    cube = rep.per_seed[0]["cube"]
    assert cube["success"] == 100.0
    assert cube["stability"] == 100.0
    assert cube["posture"] is not None
    assert len(list((tmp_path / "episodes" / "seed0").glob("*.jsonl"))) == 2

    again = rescore_logs(tmp_path / "episodes", [cube_asset], library, cfg)
    assert again.per_seed == rep.per_seed


def test_still_policy_never_succeeds(cube_asset, library):
    rep = evaluate(still, [cube_asset], library, RunConfig(), seeds=[0, 1], episodes_per_object=2)
    assert rep.aggregate["success"] == {"mean": 0.0, "std": 0.0}
    for metric in ("stability", "functionality", "posture"):
        assert rep.aggregate[metric] == {"mean": None, "std": None}


def test_evaluation_is_deterministic_and_thread_safe(cube_asset, library):
    cfg = RunConfig(noise={"proprio": True, "actuation": True})
    a = evaluate(scripted, [cube_asset], library, cfg, seeds=[3], episodes_per_object=2)
    b = evaluate(scripted, [cube_asset], library, cfg, seeds=[3], episodes_per_object=2, workers=2)
    assert a.to_json() == b.to_json()


def test_missing_consensus_fails_before_running(cube_asset):
    with pytest.raises(MissingConsensus):
        evaluate(still, [cube_asset], ConsensusLibrary({}, {}), RunConfig(), seeds=[0], episodes_per_object=1)


def test_sweep_grid(cube_asset, library):
    cfg = RunConfig(env={"episode_length": 60}, eval={"success_window": 10})
    df = sweep(still, cube_asset, library, cfg, seeds=[0], episodes_per_object=1)
    assert len(df) == 9
    assert set(df.columns) == {"object_class", "mass", "scale", "success_mean", "success_std"}
    assert sorted(df["mass"].unique()) == [0.5, 1.0, 1.5]
    assert (df["success_mean"] == 0.0).all()


def test_ablation_uses_each_variant(cube_asset, library):
    cfg = RunConfig(env={"episode_length": 60}, eval={"success_window": 10})
    out = ablation({"graff_like": still, "dexvip": still}, [cube_asset], library, cfg,
                   seeds=[0], episodes_per_object=1)
    assert list(out) == ["graff_like", "dexvip"]
    assert out["graff_like"].variant == "graff_like"


def test_still_policy_outputs_zeros():
    assert np.array_equal(StillPolicy()(None, None), np.zeros(N_ROBOT))


def test_lighter_objects_are_no_harder_to_lift(cube_asset, library):
    df = sweep(scripted, cube_asset, library, RunConfig(), masses=[0.5, 1.5], scales=[1.0],
               seeds=[0], episodes_per_object=2)
    by_mass = dict(zip(df["mass"], df["success_mean"]))
    assert by_mass[0.5] >= by_mass[1.5]

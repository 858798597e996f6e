import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.errors import CollinearPalm, DegenerateBone
from src.handmodel import HUMAN_INDEX, ROBOT_INDEX, ROBOT_JOINTS, HumanHandKeypoints
from src.retarget import (
    RETARGET_MAP,
    extract_joint_angles,
    palmar_frame,
    parent_relative_frames,
    retarget,
    to_root_relative,
)

from .conftest import random_angles, synth_hand


def expected_values(angles):
    """30-vector implied by synth_hand angles and the mapping table."""
    out = np.zeros(len(ROBOT_JOINTS))
    for name, (label, which, factor) in RETARGET_MAP.items():
        az, el = angles.get(label, (0.0, 0.0))
        out[ROBOT_INDEX[name]] = factor * (az if which == "azimuth" else el)
    return out


# ── root relative ────────────────────────────────────────────────────────────

def test_root_relative_shifts_wrist_to_origin(flat_hand):
    k = HumanHandKeypoints(flat_hand.positions + np.array([1.0, 2.0, 3.0]))
    rr = to_root_relative(k)
    np.testing.assert_allclose(rr["wrist"], 0.0)
    np.testing.assert_allclose(rr.positions, flat_hand.positions, atol=1e-12)


def test_root_relative_is_isometry(flat_hand):
    rng = np.random.default_rng(3)
    k = HumanHandKeypoints(flat_hand.positions + rng.normal(size=3))
    rr = to_root_relative(k)
    d = lambda p: np.linalg.norm(p[:, None] - p[None], axis=-1)  # noqa: E731
    np.testing.assert_allclose(d(rr.positions), d(k.positions), atol=1e-12)
    np.testing.assert_array_equal(to_root_relative(rr).positions, rr.positions)


# ── palmar frame ─────────────────────────────────────────────────────────────

def test_canonical_palm_is_zero_rotation(flat_hand):
    np.testing.assert_allclose(palmar_frame(flat_hand), 0.0, atol=1e-12)


def test_palmar_frame_follows_rotation(flat_hand):
    Q = Rotation.from_euler("xyz", [0.3, -0.7, 1.1]).as_matrix()
    out = Rotation.from_rotvec(palmar_frame(flat_hand.transformed(Q))).as_matrix()
    np.testing.assert_allclose(out, Q, atol=1e-9)


def test_collinear_palm(flat_hand):
    pos = np.array(flat_hand.positions)
    pos[HUMAN_INDEX["ring_knuckle"]] = 2.0 * pos[HUMAN_INDEX["index_knuckle"]]
    with pytest.raises(CollinearPalm):
        retarget(HumanHandKeypoints(pos))


# ── parent relative frames ───────────────────────────────────────────────────

def test_frames_orthonormal_and_recompose():
    rng = np.random.default_rng(11)
    k = to_root_relative(synth_hand(random_angles(rng)))
    fr = parent_relative_frames(k)
    for R in fr.rotations:
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(fr.world_positions(), k.positions, atol=1e-6)


def test_straight_finger_lies_on_local_z(flat_hand):
    fr = parent_relative_frames(flat_hand)
    c = fr.local_positions[HUMAN_INDEX["index_distal"]]
    assert c[0] == pytest.approx(0.0, abs=1e-12)
    assert c[1] == pytest.approx(0.0, abs=1e-12)
    assert c[2] > 0


def test_right_angle_flexion():
    fr = parent_relative_frames(synth_hand({"middle_distal": (0.0, math.pi / 2)}))
    az, el = fr.angles_at("middle_distal")
    assert el == pytest.approx(math.pi / 2, abs=1e-9)
    assert az == pytest.approx(0.0, abs=1e-9)


def test_zero_length_bone(flat_hand):
    pos = np.array(flat_hand.positions)
    pos[HUMAN_INDEX["index_middle"]] = pos[HUMAN_INDEX["index_knuckle"]]
    with pytest.raises(DegenerateBone):
        parent_relative_frames(HumanHandKeypoints(pos))


# ── joint angles ─────────────────────────────────────────────────────────────

def test_flat_hand_retargets_to_zero(flat_hand):
    np.testing.assert_allclose(retarget(flat_hand).values, 0.0, atol=1e-12)


def test_middle_phalanx_reads_child_elevation():
    v = retarget(synth_hand({"index_middle": (0.0, 0.4)}))
    assert v["FFJ1"] == pytest.approx(0.4, abs=1e-9)
    assert v["FFJ2"] == pytest.approx(0.0, abs=1e-9)
    assert v["FFJ0"] == pytest.approx(0.0, abs=1e-9)


def test_little_metacarpal_is_quarter_of_knuckle_elevation():
    fr = parent_relative_frames(synth_hand({"little_knuckle": (0.1, 0.44)}))
    vals = extract_joint_angles(fr)
    _, el = fr.angles_at("little_knuckle")
    assert vals[ROBOT_INDEX["LFJ4"] - 6] == 0.25 * el
    assert vals[ROBOT_INDEX["LFJ2"] - 6] == pytest.approx(0.44, abs=1e-9)


def test_matches_synthetic_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        angles = random_angles(rng)
        got = retarget(synth_hand(angles)).values
        np.testing.assert_allclose(got, expected_values(angles), atol=1e-9)


def test_fist_like_pose():
    angles = {f"{f}_{lvl}": (0.0, 0.5) for f in ("index", "middle", "ring", "little")
              for lvl in ("knuckle", "middle", "distal")}
    angles.update({"thumb_knuckle": (0.2, 0.3), "thumb_middle": (-0.1, 0.4), "thumb_distal": (0.0, 0.3)})
    np.testing.assert_allclose(retarget(synth_hand(angles)).values, expected_values(angles), atol=1e-9)


def test_rigid_and_scale_invariance():
    rng = np.random.default_rng(5)
    k = synth_hand(random_angles(rng))
    base = retarget(k).values
    for _ in range(5):
        R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
        moved = retarget(k.transformed(R, t=rng.normal(size=3))).values
        np.testing.assert_allclose(moved[6:], base[6:], atol=1e-9)
        np.testing.assert_allclose(moved[0:3], 0.0)
    np.testing.assert_allclose(retarget(k.transformed(np.eye(3), scale=2.5)).values, base, atol=1e-9)


def test_deterministic():
    k = synth_hand(random_angles(np.random.default_rng(9)))
    assert retarget(k).values.tobytes() == retarget(k).values.tobytes()

import json

import numpy as np
import pytest

from src.errors import BadMesh, EmptyFile, MissingAffordance, NoValidPixels, ParseError
from src.handmodel import RobotJointVector
from src.ingest import (
    CameraIntrinsics,
    backproject_affordance,
    group_pose_sets,
    load_object_asset,
    load_pose_records,
    load_retargeted,
    project_points,
    write_retargeted,
)

from .conftest import DATA


# ── pose records ─────────────────────────────────────────────────────────────

def test_bundled_records_drop_bad_frames(capsys):
    f = load_pose_records(DATA / "poses" / "cube.json")
    assert f.object_class == "cube"
    assert [r.source_id for r in f.records] == ["cube_clip01_f0010", "cube_clip01_f0020"]
    reasons = dict(f.dropped)
    assert "confidence" in reasons["cube_clip02_f0005"]
    assert reasons["cube_clip02_f0011"].startswith("MissingJoint")
    assert "[warn]" in capsys.readouterr().out


def test_confidence_threshold_is_configurable():
    f = load_pose_records(DATA / "poses" / "cube.json", confidence_threshold=0.1)
    assert len(f) == 3


def test_empty_and_broken_files(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(EmptyFile):
        load_pose_records(empty)

    broken = tmp_path / "broken.json"
    broken.write_text('{"object_class": "mug", "frames": [', encoding="utf-8")
    with pytest.raises(ParseError):
        load_pose_records(broken)

    no_frames = tmp_path / "none.json"
    no_frames.write_text('{"object_class": "mug", "frames": []}', encoding="utf-8")
    with pytest.raises(EmptyFile):
        load_pose_records(no_frames)

    with pytest.raises(ParseError):
        load_pose_records(tmp_path / "missing.json")


def test_all_frames_dropped_is_empty(tmp_path):
    p = tmp_path / "low.json"
    p.write_text(json.dumps({"object_class": "mug", "frames": [
        {"source_id": "a", "confidence": 0.1, "joints": {}},
        {"source_id": "b", "joints": {}},
    ]}), encoding="utf-8")
    with pytest.raises(EmptyFile):
        load_pose_records(p)


def test_retargeted_file_round_trip(tmp_path, flat_hand):
    recs = load_pose_records(DATA / "poses" / "cube.json")
    robot = RobotJointVector(np.linspace(-0.2, 0.2, 30))
    path = tmp_path / "cube.retargeted.json"
    write_retargeted(path, "cube", [(r, robot) for r in recs.records], recs.dropped, config_hash="h")
    ps = load_retargeted(path)
    assert ps.object_class == "cube"
    assert len(ps) == 2
    np.testing.assert_allclose(ps.poses[0].robot.values, robot.values)
    np.testing.assert_allclose(ps.poses[1].keypoints.positions, recs.records[1].keypoints.positions)

    merged = group_pose_sets([ps, ps])
    assert len(merged["cube"]) == 4


# ── back-projection ──────────────────────────────────────────────────────────

@pytest.fixture
def intr():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=2.0, cy=2.0, width=5, height=5)


def test_backproject_single_pixel(intr):
    mask = np.zeros((5, 5), bool)
    mask[2, 3] = True
    depth = np.full((5, 5), 2.0)
    pts = backproject_affordance(mask, depth, intr, sample_count=20)
    np.testing.assert_allclose(pts, [[0.02, 0.0, 2.0]])


def test_backproject_subsamples_and_reprojects(intr):
    mask = np.ones((5, 5), bool)
    depth = np.linspace(0.5, 1.5, 25).reshape(5, 5)
    depth[0, 0] = 0.0
    pts = backproject_affordance(mask, depth, intr, sample_count=10, seed=3)
    assert pts.shape == (10, 3)
    uv = project_points(pts, intr)
    np.testing.assert_allclose(uv, np.round(uv), atol=1e-9)
    again = backproject_affordance(mask, depth, intr, sample_count=10, seed=3)
    np.testing.assert_array_equal(pts, again)


def test_backproject_without_valid_depth(intr):
    mask = np.ones((5, 5), bool)
    with pytest.raises(NoValidPixels):
        backproject_affordance(mask, np.zeros((5, 5)), intr, sample_count=5)


def test_intrinsics_validation():
    with pytest.raises(ParseError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ParseError):
        CameraIntrinsics(1.0, 1.0, 9.0, 1.0, 4, 4)


# ── object assets ────────────────────────────────────────────────────────────

def test_cube_asset(cube_asset):
    a = cube_asset
    assert a.object_class == "cube"
    assert a.mass == 1.0
    assert not a.flagged
    np.testing.assert_allclose(a.mesh.bounds, [[-0.025] * 3, [0.025] * 3], atol=1e-12)
    assert a.affordance_points.shape == (20, 3)
    np.testing.assert_allclose(a.center_of_mass, 0.0, atol=1e-12)


def test_surface_query_signs(cube_asset):
    d, n = cube_asset.surface_query(np.array([[0.0, 0.0, 0.1], [0.0, 0.0, 0.0]]))
    assert d[0] == pytest.approx(0.075)
    np.testing.assert_allclose(n[0], (0.0, 0.0, 1.0), atol=1e-12)
    assert d[1] == pytest.approx(-0.025)


def test_rescaled_and_mass(cube_asset):
    big = cube_asset.rescaled(2.0)
    assert big.scale == pytest.approx(0.1)
    np.testing.assert_allclose(big.affordance_points, 2.0 * cube_asset.affordance_points)
    assert cube_asset.with_mass(0.5).mass == 0.5
    with pytest.raises(ValueError):
        cube_asset.with_mass(0.0)


def test_affordance_off_surface(cube_dir):
    (cube_dir / "inside.txt").write_text("0 0 0\n", encoding="utf-8")
    (cube_dir / "bad.yaml").write_text("object_class: cube\nmesh: cube.obj\n"
                                       "affordance_points: inside.txt\n", encoding="utf-8")
    with pytest.raises(MissingAffordance):
        load_object_asset(cube_dir / "bad.yaml")


def test_affordance_required(cube_dir):
    (cube_dir / "none.yaml").write_text("object_class: cube\nmesh: cube.obj\n", encoding="utf-8")
    with pytest.raises(MissingAffordance):
        load_object_asset(cube_dir / "none.yaml")


def test_mesh_without_triangles(cube_dir):
    (cube_dir / "empty.obj").write_text("# nothing here\n", encoding="utf-8")
    (cube_dir / "empty.yaml").write_text("object_class: x\nmesh: empty.obj\n"
                                         "affordance_points: cube_affordance.txt\n", encoding="utf-8")
    with pytest.raises(BadMesh):
        load_object_asset(cube_dir / "empty.yaml")


def test_open_mesh_is_flagged(cube_dir):
    (cube_dir / "open.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\n",
                                       encoding="utf-8")
    (cube_dir / "corner.txt").write_text("0 0 0\n0.25 0.25 0\n", encoding="utf-8")
    (cube_dir / "open.yaml").write_text("object_class: shell\nmesh: open.obj\n"
                                        "affordance_points: corner.txt\n", encoding="utf-8")
    a = load_object_asset(cube_dir / "open.yaml")
    assert a.flagged


def test_affordance_from_mask(cube_dir):
    # camera 0.5 above the top face of the unit cube, looking down -z
    mask = np.zeros((9, 9), bool)
    mask[3:6, 3:6] = True
    np.save(cube_dir / "mask.npy", mask)
    np.save(cube_dir / "depth.npy", np.full((9, 9), 0.5))
    (cube_dir / "cam.yaml").write_text("fx: 100\nfy: 100\ncx: 4\ncy: 4\nwidth: 9\nheight: 9\n", encoding="utf-8")
    T = [[1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 1.0], [0, 0, 0, 1]]
    (cube_dir / "img.yaml").write_text(
        "object_class: cube\nmesh: cube.obj\n"
        "affordance_image:\n  mask: mask.npy\n  depth: depth.npy\n  intrinsics: cam.yaml\n"
        f"  camera_to_object: {T}\n  sample_count: 4\n", encoding="utf-8")
    a = load_object_asset(cube_dir / "img.yaml")
    assert a.affordance_points.shape == (4, 3)
    np.testing.assert_allclose(a.affordance_points[:, 2], 0.5, atol=1e-12)

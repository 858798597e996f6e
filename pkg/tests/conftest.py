import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from src.handmodel import FINGERS, HUMAN_INDEX, HUMAN_PARENTS, HumanHandKeypoints
from src.ingest import load_object_asset
from src.retarget import canonical_hand

DATA = Path(__file__).resolve().parents[1] / "data"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running learning checks (set RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# ── Synthetic hands ──────────────────────────────────────────────────────────

def _unit(v):
    return v / np.linalg.norm(v)


def synth_hand(angles=None) -> HumanHandKeypoints:
    """Canonical flat hand with {label: (azimuth, elevation)} applied joint by joint.

    Each child is placed at azimuth/elevation in its joint's frame (Z along the
    incoming bone, Y the palm normal made orthogonal to Z, X = Y x Z).
    """
    angles = angles or {}
    base = canonical_hand().positions
    pos = np.array(base)
    normal = np.array([0.0, 1.0, 0.0])
    for f in FINGERS:
        for lvl, child in (("knuckle", "middle"), ("middle", "distal"), ("distal", "tip")):
            j = HUMAN_INDEX[f"{f}_{lvl}"]
            c = HUMAN_INDEX[f"{f}_{child}"]
            z = _unit(pos[j] - pos[HUMAN_PARENTS[j]])
            y = _unit(normal - np.dot(normal, z) * z)
            x = np.cross(y, z)
            az, el = angles.get(f"{f}_{lvl}", (0.0, 0.0))
            L = np.linalg.norm(base[c] - base[j])
            d = x * np.sin(az) - y * np.cos(az) * np.sin(el) + z * np.cos(az) * np.cos(el)
            pos[c] = pos[j] + L * d
    return HumanHandKeypoints(pos)


def random_angles(rng) -> dict:
    out = {}
    for f in FINGERS:
        for lvl in ("knuckle", "middle", "distal"):
            has_az = lvl == "knuckle" or (f == "thumb" and lvl == "middle")
            az = rng.uniform(-0.3, 0.3) if has_az else 0.0
            out[f"{f}_{lvl}"] = (az, rng.uniform(0.0, 0.5))
    return out


@pytest.fixture
def flat_hand():
    return canonical_hand()


@pytest.fixture
def cube_dir(tmp_path):
    """Copy of the bundled cube assets in a scratch directory."""
    d = tmp_path / "assets"
    shutil.copytree(DATA / "assets", d)
    return d


@pytest.fixture
def cube_asset(cube_dir):
    return load_object_asset(cube_dir / "cube.yaml")

import math

import numpy as np
import pytest

from src.config import (
    EnvConfig,
    NoiseConfig,
    RunConfig,
    config_hash,
    load_run_config,
    require_paths,
)
from src.errors import ConfigError
from src.utils import canonical_json, wrap_angle, wrapped_abs_diff

from .conftest import DATA

RUN_YAML = DATA.parent / "config" / "run.yaml"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ("OUT_DIR", "STATE_DIR", "SEED"):
        monkeypatch.delenv(var, raising=False)


# ── utils ────────────────────────────────────────────────────────────────────

def test_wrap_angle_half_open_interval():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-1.5 * math.pi) == pytest.approx(0.5 * math.pi)
    assert wrap_angle(0.25) == pytest.approx(0.25)
    np.testing.assert_allclose(wrap_angle(np.array([2 * math.pi + 0.1, -0.1])), [0.1, -0.1])


def test_wrapped_difference_takes_short_way_round():
    assert float(wrapped_abs_diff(3.1, -3.1)) == pytest.approx(2 * math.pi - 6.2)


def test_canonical_json_is_order_free_and_numpy_aware():
    a = canonical_json({"b": np.float64(1.5), "a": np.arange(2)})
    b = canonical_json({"a": [0, 1], "b": 1.5})
    assert a == b == '{"a":[0,1],"b":1.5}'


# ── run config ───────────────────────────────────────────────────────────────

def test_bundled_run_config_validates():
    cfg = load_run_config(str(RUN_YAML))
    assert cfg.seeds == [0, 1, 2, 3]
    assert cfg.prior.k == "auto"
    assert cfg.reward.variant == "dexvip"
    assert cfg.ppo.lr == 5e-5
    assert cfg.eval.sweep_masses == [0.5, 1.0, 1.5]


def test_env_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("OUT_DIR", str(tmp_path / "o"))
    monkeypatch.setenv("STATE_DIR", str(tmp_path / "s"))
    monkeypatch.setenv("SEED", "3")
    cfg = load_run_config(str(RUN_YAML))
    assert cfg.paths.out_dir == str(tmp_path / "o")
    assert cfg.paths.checkpoint_dir == str(tmp_path / "s" / "checkpoints")
    assert cfg.paths.log_dir == str(tmp_path / "s" / "logs")
    assert cfg.seeds == [3]
    assert load_run_config(str(RUN_YAML), seed=7).seeds == [7]


@pytest.mark.parametrize("text", ["seeds: [0\n", "- 1\n- 2\n", "reward:\n  variant: nope\n",
                                  "env:\n  bogus: 1\n", "seeds: []\n", "ppo:\n  clip: 1.5\n"])
def test_bad_config_is_config_error(tmp_path, text):
    p = tmp_path / "run.yaml"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(p))


def test_missing_explicit_config(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.yaml"))


def test_yaw_range_order():
    with pytest.raises(ValueError):
        EnvConfig(yaw_range_deg=(90.0, 10.0))


def test_config_hash_tracks_content():
    a = RunConfig()
    assert config_hash(a) == config_hash(RunConfig())
    assert config_hash(a) != config_hash(RunConfig(reward={"variant": "graff_like"}))
    assert len(config_hash(a)) == 40


def test_all_enabled_noise():
    cfg = NoiseConfig.all_enabled(seed=4, pixel=False)
    assert cfg.proprio and cfg.actuation and cfg.tracking and cfg.tracking_freeze
    assert not cfg.pixel
    assert cfg.seed == 4


def test_require_paths(tmp_path):
    (tmp_path / "here.txt").write_text("x", encoding="utf-8")
    require_paths(str(tmp_path / "here.txt"), None)
    with pytest.raises(ConfigError, match="gone"):
        require_paths(str(tmp_path / "gone.txt"))

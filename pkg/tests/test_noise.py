import numpy as np
import pytest
from scipy.spatial.distance import cdist

from src.config import NoiseConfig
from src.handmodel import N_ROBOT, RobotJointVector
from src.noise import NoiseState, perturb_action, perturb_observation
from src.simenv import Observation


def make_obs(shift=0.0, images=None):
    hand = np.linspace(0.0, 0.1, 30).reshape(10, 3)
    aff = np.linspace(-0.05, 0.05, 60).reshape(20, 3) + shift
    return Observation(proprio=np.zeros(2 * N_ROBOT), hand_points=hand, tracking_points=aff,
                       distances=cdist(hand, aff), touch=np.zeros(21), images=images)


def test_all_channels_off_is_identity():
    obs = make_obs()
    out, state = perturb_observation(obs, NoiseConfig(), NoiseState())
    assert out is obs
    assert state == NoiseState()
    a = RobotJointVector.zeros()
    assert perturb_action(a, NoiseConfig(), NoiseState())[0] is a


def test_proprio_noise_statistics():
    cfg = NoiseConfig(proprio=True, proprio_std=0.02, seed=1)
    state = NoiseState()
    draws = []
    for _ in range(200):
        out, state = perturb_observation(make_obs(), cfg, state)
        draws.append(out.proprio)
    d = np.concatenate(draws)
    assert abs(d.mean()) < 0.002
    assert d.std() == pytest.approx(0.02, rel=0.05)
    assert state.counters[0] == 200


def test_actuation_noise_is_not_clamped():
    cfg = NoiseConfig(actuation=True, actuation_std=0.05, seed=2)
    v = RobotJointVector(np.full(N_ROBOT, np.pi / 2))
    out, state = perturb_action(v, cfg, NoiseState())
    assert np.any(out.values > np.pi / 2)
    assert state.counters[1] == 1


def test_tracking_noise_updates_distances():
    cfg = NoiseConfig(tracking=True, tracking_std_m=0.01, seed=3)
    obs = make_obs()
    out, _ = perturb_observation(obs, cfg, NoiseState())
    assert not np.allclose(out.tracking_points, obs.tracking_points)
    np.testing.assert_allclose(out.distances, cdist(out.hand_points, out.tracking_points))
    np.testing.assert_array_equal(out.hand_points, obs.hand_points)


def test_freeze_holds_exactly_the_configured_frames():
    cfg = NoiseConfig(tracking_freeze=True, freeze_probability=1.0, tracking_freeze_frames=20, seed=4)
    state = NoiseState()
    outputs = []
    for i in range(21):
        out, state = perturb_observation(make_obs(shift=0.001 * i), cfg, state)
        outputs.append(out.tracking_points)
    for i in range(20):
        np.testing.assert_array_equal(outputs[i], outputs[0])
    np.testing.assert_allclose(outputs[20], make_obs(shift=0.02).tracking_points)


def test_freeze_never_triggers_at_zero_probability():
    cfg = NoiseConfig(tracking_freeze=True, freeze_probability=0.0, seed=4)
    state = NoiseState()
    for i in range(30):
        out, state = perturb_observation(make_obs(shift=0.001 * i), cfg, state)
        np.testing.assert_allclose(out.tracking_points, make_obs(shift=0.001 * i).tracking_points)
    assert state.freeze_left == 0


def test_pixel_noise_bounds():
    img = np.zeros((3, 8, 8), dtype=np.uint8)
    img[1] = 255
    img[2] = 128
    cfg = NoiseConfig(pixel=True, pixel_range=5, seed=5)
    out, _ = perturb_observation(make_obs(images=img), cfg, NoiseState())
    assert out.images.dtype == np.uint8
    assert out.images[0].max() <= 5
    assert out.images[1].min() >= 250
    diff = out.images[2].astype(int) - 128
    assert diff.min() >= -5 and diff.max() <= 5
    assert diff.std() > 0


def test_channels_draw_independently():
    obs = make_obs(images=np.full((3, 4, 4), 100, dtype=np.uint8))
    a, _ = perturb_observation(obs, NoiseConfig(proprio=True, seed=6), NoiseState())
    b, _ = perturb_observation(obs, NoiseConfig(proprio=True, pixel=True, tracking=True, seed=6), NoiseState())
    np.testing.assert_array_equal(a.proprio, b.proprio)


def test_same_seed_same_draws():
    cfg = NoiseConfig.all_enabled(seed=7)
    obs = make_obs(images=np.full((3, 4, 4), 100, dtype=np.uint8))
    a, sa = perturb_observation(obs, cfg, NoiseState())
    b, sb = perturb_observation(obs, cfg, NoiseState())
    assert a.digest() == b.digest()
    assert NoiseState.from_json(sa.to_json()).counters == sb.counters

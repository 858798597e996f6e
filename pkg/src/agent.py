# -*- coding: utf-8 -*-
"""
Actor-critic policy and PPO trainer.

Network:
  motor encoder    dense [512, 512] + ReLU over the flat observation vector
  visual encoder   (optional) 3 convolutions, filters [8, 4, 3], strides
                   [4, 2, 1], then a dense 512-d bottleneck
  heads            linear actor (30-d Gaussian mean) and linear critic,
                   both reading [visual, motor] features

Actions are drawn from N(mean, I). With the variance fixed the entropy is a
constant, so the entropy bonus shifts the loss without moving the gradient.

Outputs:
  state/checkpoints/seed<N>/ckpt_<update>.npz  (+ latest.npz)
  state/logs/train_seed<N>.jsonl               per-update statistics
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import PpoConfig, RunConfig
from .errors import NonFiniteLoss, ShapeMismatch
from .nets import Adam, Dense, clip_grad_norm, conv_encoder, mlp
from .rewards import r_entropy
from .utils import log

CHECKPOINT_FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


# ── Network ──────────────────────────────────────────────────────────────────

class ActorCritic:
    def __init__(self, obs_dim: int, action_dim: int, hidden: Sequence[int] = (512, 512),
                 visual: bool = False, image_shape: Tuple[int, int, int] = (3, 64, 64), seed: int = 0,
                 filters: Sequence[int] = (8, 4, 3), strides: Sequence[int] = (4, 2, 1),
                 channels: Sequence[int] = (32, 64, 64), visual_dim: int = 512):
        self.arch = {
            "obs_dim": int(obs_dim), "action_dim": int(action_dim), "hidden": [int(h) for h in hidden],
            "visual": bool(visual), "image_shape": [int(x) for x in image_shape],
            "filters": list(filters), "strides": list(strides), "channels": list(channels),
            "visual_dim": int(visual_dim),
        }
        rng = np.random.default_rng(seed)
        self.motor = mlp([obs_dim, *hidden], rng)
        feat = hidden[-1] if hidden else obs_dim
        self.vision = None
        if visual:
            self.vision = conv_encoder(tuple(image_shape), filters, strides, channels, visual_dim, rng)
            feat += visual_dim
        self.feat_dim = feat
        self.actor = Dense(feat, action_dim, rng, scale=0.01)
        self.critic = Dense(feat, 1, rng, scale=1.0 / math.sqrt(feat))

        self._slots = list(self.motor.named("motor"))
        if self.vision is not None:
            self._slots += list(self.vision.named("vision"))
        self._slots += [(f"actor.{k}", self.actor, k) for k in self.actor.params]
        self._slots += [(f"critic.{k}", self.critic, k) for k in self.critic.params]

    @classmethod
    def from_arch(cls, arch: dict, seed: int = 0) -> "ActorCritic":
        return cls(arch["obs_dim"], arch["action_dim"], arch["hidden"], arch["visual"],
                   tuple(arch["image_shape"]), seed, arch["filters"], arch["strides"],
                   arch["channels"], arch["visual_dim"])

    @property
    def obs_dim(self) -> int:
        return self.arch["obs_dim"]

    @property
    def action_dim(self) -> int:
        return self.arch["action_dim"]

    @property
    def visual(self) -> bool:
        return self.vision is not None

    @property
    def params(self) -> Dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self._slots}

    def grads(self) -> Dict[str, np.ndarray]:
        return {name: layer.grads[key] for name, layer, key in self._slots}

    def set_params(self, values: Dict[str, np.ndarray]) -> None:
        for name, layer, key in self._slots:
            layer.params[key][...] = values[name]

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, x: np.ndarray, images: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.obs_dim:
            raise ShapeMismatch(f"observation has {x.shape[1]} entries, network expects {self.obs_dim}")
        h = self.motor.forward(x)
        if self.vision is not None:
            if images is None:
                raise ShapeMismatch("visual network needs images")
            images = np.asarray(images, dtype=float)
            if images.ndim == 3:
                images = images[None]
            if list(images.shape[1:]) != self.arch["image_shape"]:
                raise ShapeMismatch(f"images {images.shape[1:]} != {tuple(self.arch['image_shape'])}")
            h = np.concatenate([self.vision.forward(images), h], axis=1)
        return self.actor.forward(h), self.critic.forward(h)[:, 0]

    def backward(self, dmean: np.ndarray, dvalue: np.ndarray) -> Dict[str, np.ndarray]:
        dh = self.actor.backward(dmean) + self.critic.backward(dvalue[:, None])
        if self.vision is not None:
            vd = self.arch["visual_dim"]
            self.vision.backward(dh[:, :vd])
            dh = dh[:, vd:]
        self.motor.backward(dh)
        return self.grads()


def obs_arrays(obs) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    images = getattr(obs, "images", None)
    return obs.vector(), None if images is None else images.astype(float) / 255.0


def policy_forward(net: ActorCritic, obs) -> Tuple[np.ndarray, float]:
    x, img = obs_arrays(obs)
    mean, value = net.forward(x[None], None if img is None else img[None])
    return mean[0], float(value[0])


def log_prob(actions: np.ndarray, mean: np.ndarray) -> np.ndarray:
    d = np.asarray(actions) - np.asarray(mean)
    return -0.5 * np.sum(d * d, axis=-1) - 0.5 * d.shape[-1] * LOG_2PI


def sample_action(mean: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    mean = np.asarray(mean, dtype=float)
    a = mean + rng.standard_normal(mean.shape)
    return a, log_prob(a, mean)


class MeanPolicy:
    """Deterministic policy acting with the Gaussian mean."""

    def __init__(self, net: ActorCritic):
        self.net = net

    def __call__(self, obs, state=None) -> np.ndarray:
        return policy_forward(self.net, obs)[0]


# ── Rollouts ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RolloutBuffer:
    obs: np.ndarray                 # (T, N, D)
    images: Optional[np.ndarray]    # (T, N, C, H, W) or None
    actions: np.ndarray             # (T, N, A)
    logp: np.ndarray                # (T, N)
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray         # (N,) bootstrap values after the final step
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.rewards.size)

    def flat(self) -> Dict[str, np.ndarray]:
        if self.advantages is None:
            raise ValueError("compute_advantages must run before the update")
        n = len(self)
        out = {
            "obs": self.obs.reshape(n, -1), "actions": self.actions.reshape(n, -1),
            "old_logp": self.logp.reshape(n), "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
        }
        if self.images is not None:
            out["images"] = self.images.reshape((n,) + self.images.shape[2:])
        return out


def compute_advantages(buffer: RolloutBuffer, cfg: PpoConfig) -> RolloutBuffer:
    """GAE(lambda); `dones[t]` marks the last step of an episode (no bootstrap past it)."""
    T = buffer.rewards.shape[0]
    adv = np.zeros_like(buffer.rewards, dtype=float)
    gae = np.zeros(buffer.rewards.shape[1:], dtype=float)
    for t in reversed(range(T)):
        nonterminal = 1.0 - buffer.dones[t].astype(float)
        next_v = buffer.last_values if t == T - 1 else buffer.values[t + 1]
        delta = buffer.rewards[t] + cfg.discount * next_v * nonterminal - buffer.values[t]
        gae = delta + cfg.discount * cfg.gae_lambda * nonterminal * gae
        adv[t] = gae
    return replace(buffer, advantages=adv, returns=adv + buffer.values)


class RolloutRunner:
    """Keeps env states alive across collection calls; resets finished episodes with fresh seeds."""

    def __init__(self, envs: Sequence, seed: int):
        if not envs:
            raise ValueError("at least one environment is required")
        self.envs = list(envs)
        self.seed = int(seed)
        self.episode = [0] * len(self.envs)
        self.completed: List[Tuple[float, int]] = []
        self._ret = [0.0] * len(self.envs)
        self._len = [0] * len(self.envs)
        self.states, self.obs = [], []
        for i, env in enumerate(self.envs):
            s, o = env.reset(self._episode_seed(i))
            self.states.append(s)
            self.obs.append(o)

    def _episode_seed(self, i: int) -> int:
        return self.seed * 1_000_003 + i * 10_007 + self.episode[i]

    def _batch(self):
        xs, imgs = zip(*(obs_arrays(o) for o in self.obs))
        return np.stack(xs), None if imgs[0] is None else np.stack(imgs)

    def collect(self, net: ActorCritic, steps: int, rng: np.random.Generator) -> RolloutBuffer:
        N, A = len(self.envs), net.action_dim
        obs_buf, img_buf, act_buf = [], [], []
        logp_buf, rew_buf, val_buf, done_buf = [], [], [], []
        for _ in range(steps):
            x, img = self._batch()
            mean, value = net.forward(x, img)
            a, lp = sample_action(mean, rng)
            rewards = np.zeros(N)
            dones = np.zeros(N, dtype=bool)
            for i, env in enumerate(self.envs):
                s, o, br, done = env.step(self.states[i], a[i])
                rewards[i] = br.total
                dones[i] = done
                self._ret[i] += br.total
                self._len[i] += 1
                if done:
                    self.completed.append((self._ret[i], self._len[i]))
                    self._ret[i], self._len[i] = 0.0, 0
                    self.episode[i] += 1
                    s, o = env.reset(self._episode_seed(i))
                self.states[i], self.obs[i] = s, o
            obs_buf.append(x)
            if img is not None:
                img_buf.append(img)
            act_buf.append(a)
            logp_buf.append(lp)
            rew_buf.append(rewards)
            val_buf.append(value)
            done_buf.append(dones)

        if steps > 0:
            x, img = self._batch()
            last_values = net.forward(x, img)[1]
        else:
            last_values = np.zeros(N)
        D = net.obs_dim
        return RolloutBuffer(
            obs=np.asarray(obs_buf, dtype=float).reshape(steps, N, D),
            images=np.asarray(img_buf) if img_buf else None,
            actions=np.asarray(act_buf, dtype=float).reshape(steps, N, A),
            logp=np.asarray(logp_buf, dtype=float).reshape(steps, N),
            rewards=np.asarray(rew_buf, dtype=float).reshape(steps, N),
            values=np.asarray(val_buf, dtype=float).reshape(steps, N),
            dones=np.asarray(done_buf, dtype=bool).reshape(steps, N),
            last_values=last_values,
        )


def collect_rollouts(envs: Sequence, net: ActorCritic, steps: int, seed: int) -> RolloutBuffer:
    return RolloutRunner(envs, seed).collect(net, steps, np.random.default_rng(seed))


# ── PPO ──────────────────────────────────────────────────────────────────────

def ppo_loss_and_grads(net: ActorCritic, batch: Dict[str, np.ndarray], cfg: PpoConfig
                       ) -> Tuple[float, Dict[str, np.ndarray], Dict[str, float]]:
    """Clipped surrogate + value_coef * 0.5 * MSE - entropy_coef * H, with analytic gradients."""
    for k, v in batch.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteLoss(f"non-finite values in rollout field {k!r}")
    A = batch["actions"]
    adv = batch["advantages"]
    B = len(adv)
    mean, value = net.forward(batch["obs"], batch.get("images"))

    logp = log_prob(A, mean)
    ratio = np.exp(logp - batch["old_logp"])
    lo, hi = 1.0 - cfg.clip, 1.0 + cfg.clip
    surr1 = ratio * adv
    surr2 = np.clip(ratio, lo, hi) * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    verr = value - batch["returns"]
    value_loss = 0.5 * float(np.mean(verr * verr))
    entropy = r_entropy(np.zeros(net.action_dim))
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    inside = (ratio >= lo) & (ratio <= hi)
    live = (surr1 <= surr2) | inside
    dlogp = -(adv * ratio * live) / B
    dmean = dlogp[:, None] * (A - mean)
    dvalue = cfg.value_coef * verr / B
    grads = {k: np.array(g) for k, g in net.backward(dmean, dvalue).items()}

    stats = {
        "loss": loss, "policy_loss": policy_loss, "value_loss": value_loss, "entropy": entropy,
        "approx_kl": float(np.mean(batch["old_logp"] - logp)),
        "clip_frac": float(np.mean(~inside)), "ratio_mean": float(np.mean(ratio)),
    }
    return loss, grads, stats


def ppo_update(net: ActorCritic, opt: Adam, buffer: RolloutBuffer, cfg: PpoConfig,
               rng: np.random.Generator) -> Dict[str, float]:
    data = buffer.flat()
    n = len(data["advantages"])
    if n == 0:
        return {}
    if cfg.normalize_advantages and n > 1:
        a = data["advantages"]
        data["advantages"] = (a - a.mean()) / (a.std() + 1e-8)
    acc: Dict[str, List[float]] = {}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            batch = {k: v[idx] for k, v in data.items()}
            _, grads, stats = ppo_loss_and_grads(net, batch, cfg)
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(net.params, grads)
            for k, v in stats.items():
                acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


# ── Checkpoints ──────────────────────────────────────────────────────────────

def save_checkpoint(path, net: ActorCritic, opt: Adam, config_hash: str = "", update: int = 0) -> None:
    arrays = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "config_hash": np.array(config_hash),
        "arch": np.array(json.dumps(net.arch, sort_keys=True)),
        "update": np.array(update),
        "adam_step": np.array(opt.t),
    }
    for k, v in net.params.items():
        arrays[f"param/{k}"] = v
        arrays[f"m/{k}"] = opt.m[k]
        arrays[f"v/{k}"] = opt.v[k]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path, lr: float = 5e-5, eps: float = 1e-5) -> Tuple[ActorCritic, Adam, dict]:
    with np.load(path, allow_pickle=False) as z:
        if int(z["format_version"]) != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {int(z['format_version'])}")
        arch = json.loads(str(z["arch"]))
        net = ActorCritic.from_arch(arch)
        net.set_params({k: z[f"param/{k}"] for k in net.params})
        opt = Adam(net.params, lr, eps)
        opt.m = {k: np.array(z[f"m/{k}"]) for k in net.params}
        opt.v = {k: np.array(z[f"v/{k}"]) for k in net.params}
        opt.t = int(z["adam_step"])
        meta = {"config_hash": str(z["config_hash"]), "update": int(z["update"]), "arch": arch}
    return net, opt, meta


# ── Training loop ────────────────────────────────────────────────────────────

def build_network(cfg: RunConfig, obs_dim: int, action_dim: int, seed: int) -> ActorCritic:
    t = cfg.train
    return ActorCritic(obs_dim, action_dim, t.hidden, cfg.env.visual,
                       (3, cfg.env.image_size, cfg.env.image_size), seed,
                       t.visual_filters, t.visual_strides, t.visual_channels, t.visual_dim)


def train(cfg: RunConfig, envs: Sequence, seed: int, updates: Optional[int] = None,
          run_hash: str = "", net: Optional[ActorCritic] = None) -> Tuple[ActorCritic, List[dict]]:
    """PPO over `envs`; checkpoints the initial parameters and every checkpoint_every updates."""
    updates = cfg.train.updates if updates is None else int(updates)
    env0 = envs[0]
    net = net or build_network(cfg, env0.obs_dim, env0.action_dim, seed)
    opt = Adam(net.params, cfg.ppo.lr, cfg.ppo.adam_eps)
    rng = np.random.default_rng([seed, 1])
    runner = RolloutRunner(envs, seed)

    ckpt_dir = Path(cfg.paths.checkpoint_dir) / f"seed{seed}"
    stats_path = Path(cfg.paths.log_dir) / f"train_seed{seed}.jsonl"
    stats_path.parent.mkdir(parents=True, exist_ok=True)
    header = {"kind": "header", "format_version": 1, "config_hash": run_hash, "seed": seed,
              "updates": updates, "n_params": net.n_params}
    history: List[dict] = []

    save_checkpoint(ckpt_dir / "ckpt_0000.npz", net, opt, run_hash, 0)
    save_checkpoint(ckpt_dir / "latest.npz", net, opt, run_hash, 0)
    log("train", f"seed {seed}: {net.n_params} parameters, {len(envs)} env(s), {updates} update(s)")

    with open(stats_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for u in range(1, updates + 1):
            seen = len(runner.completed)
            buf = compute_advantages(runner.collect(net, cfg.train.rollout_steps, rng), cfg.ppo)
            stats = ppo_update(net, opt, buf, cfg.ppo, rng)
            finished = runner.completed[seen:]
            stats.update({
                "update": u, "steps": len(buf), "mean_step_reward": float(buf.rewards.mean()),
                "episodes": len(finished),
                "mean_return": float(np.mean([r for r, _ in finished])) if finished else None,
            })
            history.append(stats)
            f.write(json.dumps(stats) + "\n")
            f.flush()
            log("train", f"update {u}/{updates} reward/step {stats['mean_step_reward']:.4f} "
                         f"loss {stats.get('loss', float('nan')):.4f}")
            if u % cfg.train.checkpoint_every == 0 or u == updates:
                save_checkpoint(ckpt_dir / f"ckpt_{u:04d}.npz", net, opt, run_hash, u)
                save_checkpoint(ckpt_dir / "latest.npz", net, opt, run_hash, u)
    return net, history

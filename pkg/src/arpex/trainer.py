"""Clipped-surrogate policy optimization with GAE on the Square task.

The autoregressive policy is trained as an ordinary Gaussian policy over
the history-extended state.  The critic only sees the current observation.
Rollouts use residuals cached at generation time; the optimization pass
recomputes them under the parameters being optimized.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .approximator import Adam, Mlp, PolicyHead
from .ar_core import ArModel
from .envs import ACT_DIM, OBS_DIM, VecSquareEnv
from .policy import ArPolicy, GaussianPolicy, HistoryBatch

log = logging.getLogger(__name__)

BASE_RATE = 10.0
ROLLING_EPISODES = 100


@dataclass
class TrainConfig:
    """Hyper-parameters; defaults are the Square values at 10 Hz.

    ``batch_size`` and ``opt_batch`` are given at 10 Hz and scaled by
    ``action_rate / 10`` so every batch covers the same simulated time.
    """

    action_rate: float = 10.0
    batch_size: int = 8192
    opt_batch: int = 256
    opt_epochs: int = 10
    step_size: float = 4e-3
    gamma: float = 0.995
    lam: float = 0.995
    clip_eps: float = 0.2
    hidden: tuple = (64, 64)
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    ent_coef: float = 0.0
    n_envs: int = 8
    total_sim_seconds: float = 50_000.0
    episode_cap_seconds: float = 1000.0
    state_dependent_std: bool = False
    recompute_in_rollout: bool = False

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")

    @property
    def scale(self) -> float:
        return self.action_rate / BASE_RATE

    @property
    def steps_per_batch(self) -> int:
        return int(round(self.batch_size * self.scale))

    @property
    def steps_per_minibatch(self) -> int:
        return int(round(self.opt_batch * self.scale))

    @classmethod
    def load(cls, path, **overrides) -> "TrainConfig":
        with open(path) as f:
            values = yaml.safe_load(f) or {}
        unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def dump(self, path):
        data = dataclasses.asdict(self)
        data["hidden"] = list(self.hidden)
        Path(path).write_text(yaml.safe_dump(data, sort_keys=False))


class TrainingAborted(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass
class RolloutBatch:
    """``T`` steps from each of ``n`` environments, time-major ``(T, n, ...)``."""

    obs: np.ndarray
    hist_obs: np.ndarray
    hist_act: np.ndarray
    mask: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    logp: np.ndarray
    dones: np.ndarray
    timeouts: np.ndarray
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.rewards.size

    def flat(self) -> tuple[HistoryBatch, np.ndarray, np.ndarray]:
        T, n = self.rewards.shape
        p = self.mask.shape[2]
        hb = HistoryBatch(
            obs=self.obs.reshape(T * n, self.obs.shape[-1]),
            hist_obs=self.hist_obs.reshape(T * n, p, self.hist_obs.shape[-1]),
            hist_act=self.hist_act.reshape(T * n, p, self.hist_act.shape[-1]),
            mask=self.mask.reshape(T * n, p),
        )
        return hb, self.actions.reshape(T * n, self.actions.shape[-1]), self.logp.reshape(T * n)


def gae_advantages(rewards, values, next_values, dones, timeouts, gamma, lam):
    """Generalized advantage estimates along axis 0.

    ``next_values[t]`` is the critic's value of the state reached after step
    ``t`` (for a finished episode, its final state).  Goal terminations do not
    bootstrap; time-limit terminations do.  The recursion stops at every
    episode boundary.  Returns ``(advantages, value_targets)``.
    """
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    terminal = dones & ~np.asarray(timeouts, dtype=bool)
    deltas = rewards + gamma * np.where(terminal, 0.0, next_values) - values
    adv = np.zeros_like(deltas)
    running = np.zeros_like(deltas[0])
    for t in range(len(deltas) - 1, -1, -1):
        running = deltas[t] + gamma * lam * np.where(dones[t], 0.0, running)
        adv[t] = running
    return adv, adv + values


def clipped_surrogate(policy, hb, actions, logp_old, adv, clip_eps, ent_coef=0.0):
    """Mean clipped surrogate ``min(r A, clip(r, 1-eps, 1+eps) A)`` and its gradient.

    Returns ``(value, gradient w.r.t. head params, log ratio)``.  The gradient
    includes ``ent_coef`` times the gradient of the mean entropy.
    """
    B = adv.size
    box = {}

    def weights(logp):
        box["log_ratio"] = logp - logp_old
        ratio = np.exp(box["log_ratio"])
        unclipped = ratio * adv <= np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv
        box["ratio"] = ratio
        # d(r A)/d logp = r A where the unclipped branch is active, else 0
        return np.where(unclipped, ratio * adv, 0.0) / B

    _, grad = policy.log_prob_batch(hb, actions, weights=weights, entropy_weight=ent_coef / B)
    ratio = box["ratio"]
    surr = np.minimum(ratio * adv, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv)
    return float(surr.mean()), grad, box["log_ratio"]


def explained_variance(pred, target) -> float:
    var = np.var(target)
    return float("nan") if var == 0 else float(1.0 - np.var(target - pred) / var)


def make_policy(spec, config: TrainConfig, rng: np.random.Generator):
    """``spec`` is ``"gaussian"`` or ``("arp", p, alpha)``."""
    head = PolicyHead(OBS_DIM, ACT_DIM, hidden=config.hidden, rng=rng, state_dependent_std=config.state_dependent_std)
    if spec == "gaussian":
        return GaussianPolicy(head)
    _, p, alpha = spec
    return ArPolicy(head, ArModel.binomial(p, alpha), recompute_in_rollout=config.recompute_in_rollout)


class PpoTrainer:
    """Collects batches from ``n_envs`` Square environments and runs clipped PPO updates.

    Given the same ``seed``, policy spec and config the run is deterministic.
    """

    def __init__(self, policy, config: TrainConfig, seed: int = 0, value_net: Mlp | None = None):
        self.policy = policy
        self.config = config
        self.rng = np.random.default_rng([seed, 1])
        self.value_net = value_net or Mlp([OBS_DIM, *config.hidden, 1], rng=np.random.default_rng([seed, 2]))
        self.env = VecSquareEnv(config.n_envs, action_rate=config.action_rate, seed=seed, episode_cap_seconds=config.episode_cap_seconds)
        self.adam = Adam(policy.head.num_params + self.value_net.num_params, lr=config.step_size)
        self.sim_steps = 0
        n, p = config.n_envs, policy.order
        self.obs = self.env.reset()
        self.hist_obs = np.repeat(self.obs[:, None, :], p, axis=1)
        self.hist_act = np.zeros((n, p, ACT_DIM))
        self.hist_res = np.zeros((n, p, ACT_DIM))
        self.t = np.zeros(n, dtype=np.int64)
        self.ep_return = np.zeros(n)

    @property
    def sim_seconds(self) -> float:
        return self.sim_steps / self.config.action_rate

    def values(self, obs) -> np.ndarray:
        return self.value_net.forward(obs)[:, 0]

    def collect(self, steps: int | None = None) -> RolloutBatch:
        """Run the current policy for one batch.

        Histories carry over between batches, so an episode interrupted by an
        update keeps using the residuals cached under the old parameters.
        """
        cfg = self.config
        n, p = cfg.n_envs, self.policy.order
        T = (steps or cfg.steps_per_batch) // n
        buf = {
            "obs": np.zeros((T, n, OBS_DIM)),
            "hist_obs": np.zeros((T, n, p, OBS_DIM)),
            "hist_act": np.zeros((T, n, p, ACT_DIM)),
            "mask": np.zeros((T, n, p), dtype=bool),
            "actions": np.zeros((T, n, ACT_DIM)),
            "rewards": np.zeros((T, n)),
            "values": np.zeros((T, n)),
            "next_values": np.zeros((T, n)),
            "logp": np.zeros((T, n)),
            "dones": np.zeros((T, n), dtype=bool),
            "timeouts": np.zeros((T, n), dtype=bool),
        }
        returns, lengths = [], []
        steps_arange = np.arange(p)
        values = self.values(self.obs)
        for i in range(T):
            mask = steps_arange[None, :] < np.minimum(self.t, p)[:, None]
            if getattr(self.policy, "recompute_in_rollout", False):
                self.hist_res = self.policy.residuals(self.hist_obs, self.hist_act)
            noise = self.rng.standard_normal((n, ACT_DIM))
            action, logp, res = self.policy.act_batch(self.obs, self.hist_res, mask, noise)
            next_obs, reward, done, timeout, final_obs, length = self.env.step(action)
            next_values = self.values(next_obs)
            bootstrap = next_values
            if done.any():
                bootstrap = next_values.copy()
                bootstrap[done] = self.values(final_obs[done])
            for key, val in (
                ("obs", self.obs), ("hist_obs", self.hist_obs), ("hist_act", self.hist_act), ("mask", mask),
                ("actions", action), ("rewards", reward), ("values", values), ("next_values", bootstrap),
                ("logp", logp), ("dones", done), ("timeouts", timeout),
            ):
                buf[key][i] = val
            self.ep_return += reward
            if p:
                self.hist_obs = np.concatenate([self.obs[:, None], self.hist_obs[:, :-1]], axis=1)
                self.hist_act = np.concatenate([action[:, None], self.hist_act[:, :-1]], axis=1)
                self.hist_res = np.concatenate([res[:, None], self.hist_res[:, :-1]], axis=1)
            self.t += 1
            if done.any():
                returns.extend(self.ep_return[done].tolist())
                lengths.extend((length[done] / cfg.action_rate).tolist())
                self.ep_return[done] = 0.0
                self.t[done] = 0
                self.hist_obs[done] = next_obs[done][:, None, :]
                self.hist_act[done] = 0.0
                self.hist_res[done] = 0.0
            self.obs = next_obs
            values = next_values
        self.sim_steps += T * n
        return RolloutBatch(**buf, episode_returns=returns, episode_lengths=lengths)

    def update(self, batch: RolloutBatch) -> dict:
        """Clipped-surrogate epochs over shuffled minibatches of ``batch``."""
        cfg = self.config
        adv, targets = gae_advantages(batch.rewards, batch.values, batch.next_values, batch.dones, batch.timeouts, cfg.gamma, cfg.lam)
        hb, actions, logp_old = batch.flat()
        adv = adv.reshape(-1)
        targets = targets.reshape(-1)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        N = adv.size
        mb = min(cfg.steps_per_minibatch, N)
        diag = {
            "explained_var": explained_variance(batch.values.reshape(-1), targets),
            "logp_gap": float(np.mean(np.abs(self.policy.log_prob_batch(hb, actions) - logp_old))),
        }
        kls, clips, losses = [], [], []
        for _ in range(cfg.opt_epochs):
            perm = self.rng.permutation(N)
            for start in range(0, N - mb + 1, mb):
                idx = perm[start : start + mb]
                stats = self._minibatch_step(hb.take(idx), actions[idx], logp_old[idx], adv[idx], targets[idx])
                kls.append(stats["kl"])
                clips.append(stats["clipfrac"])
                losses.append(stats["loss"])
        diag.update(
            kl=float(np.mean(kls)) if kls else 0.0,
            clipfrac=float(np.mean(clips)) if clips else 0.0,
            loss=float(np.mean(losses)) if losses else 0.0,
        )
        return diag

    def _minibatch_step(self, hb, actions, logp_old, adv, targets) -> dict:
        cfg = self.config
        B = adv.size
        surr, g_pi, log_ratio = clipped_surrogate(self.policy, hb, actions, logp_old, adv, cfg.clip_eps, cfg.ent_coef)
        v = self.values(hb.obs)
        v_err = v - targets
        g_v, _ = self.value_net.backward((cfg.vf_coef * v_err / B)[:, None])
        loss = -surr + cfg.vf_coef * 0.5 * np.mean(v_err**2)
        if cfg.ent_coef:
            loss -= cfg.ent_coef * np.mean(self.policy.entropy_batch(hb.obs))
        diag = {
            "loss": float(loss),
            "kl": float(0.5 * np.mean(log_ratio**2)),
            "clipfrac": float(np.mean(np.abs(np.exp(log_ratio) - 1.0) > cfg.clip_eps)),
        }
        grad = np.concatenate([-g_pi, g_v])
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingAborted("non-finite loss or gradient", diag)
        norm = np.linalg.norm(grad)
        if cfg.max_grad_norm and norm > cfg.max_grad_norm:
            grad *= cfg.max_grad_norm / norm
        theta = np.concatenate([self.policy.head.get_params(), self.value_net.params])
        self.adam.step(theta, grad)
        k = self.policy.head.num_params
        self.policy.head.set_params(theta[:k])
        self.value_net.set_params(theta[k:])
        return diag

    def train(self, callback=None) -> list[dict]:
        """Alternate collection and updates until ``total_sim_seconds`` is reached.

        Returns one record per batch with the progress-log columns.
        """
        cfg = self.config
        history = []
        recent_ret = deque(maxlen=ROLLING_EPISODES)
        recent_len = deque(maxlen=ROLLING_EPISODES)
        while self.sim_seconds < cfg.total_sim_seconds:
            batch = self.collect()
            diag = self.update(batch)
            recent_ret.extend(batch.episode_returns)
            recent_len.extend(batch.episode_lengths)
            rec = {
                "sim_seconds": self.sim_seconds,
                "mean_return": float(np.mean(batch.episode_returns)) if batch.episode_returns else float("nan"),
                "mean_ep_len": float(np.mean(batch.episode_lengths)) if batch.episode_lengths else float("nan"),
                "episodes": len(batch.episode_returns),
                "rolling_return": float(np.mean(recent_ret)) if recent_ret else float("nan"),
                "rolling_ep_len": float(np.mean(recent_len)) if recent_len else float("nan"),
                "kl": diag["kl"],
                "clipfrac": diag["clipfrac"],
                "explained_var": diag["explained_var"],
                "logp_gap": diag["logp_gap"],
            }
            log.info("t=%.0fs return=%.1f eps=%d kl=%.4f clip=%.3f ev=%.3f", rec["sim_seconds"], rec["mean_return"], rec["episodes"], rec["kl"], rec["clipfrac"], rec["explained_var"])
            history.append(rec)
            if callback is not None:
                callback(rec)
        return history

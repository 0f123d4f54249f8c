"""Autoregressive Gaussian policies and the plain Gaussian baseline.

The autoregressive policy draws

    a_t = mu(s_t) + sigma(s_t) * f_t + sigma(s_t) * sigma_Z * eps_t,
    f_t = sum_{k <= min(p, t)} phi_k * (a_{t-k} - mu(s_{t-k})) / sigma(s_{t-k}),

so that with ``mu = 0`` and ``sigma = 1`` the actions are exactly a
realization of the underlying AR process.  During rollouts the residuals
``(a - mu) / sigma`` are cached as generated; the learning pass recomputes
them under the current parameters so gradients reach every occurrence of
``mu`` and ``sigma`` in the history.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .approximator import PolicyHead
from .ar_core import ArModel, ar_sum

LOG_2PI = np.log(2.0 * np.pi)
MIN_RESIDUAL_STD = 1e-6


@dataclass(frozen=True)
class ExtendedState:
    """Current observation plus the last ``p`` (observation, action, residual) entries.

    Entries are most-recent-first.  Right after a reset the history is padded
    with copies of the first observation and a zero action; only the first
    ``min(p, t)`` entries (``active``) ever enter the policy.  ``residual``
    rows are NaN where nothing was cached.
    """

    current: np.ndarray
    hist_obs: np.ndarray
    hist_act: np.ndarray
    hist_res: np.ndarray
    t: int = 0
    frozen: np.ndarray | None = None

    @classmethod
    def initial(cls, obs, p: int, act_dim: int) -> "ExtendedState":
        obs = np.asarray(obs, dtype=float)
        return cls(
            current=obs,
            hist_obs=np.repeat(obs[None, :], p, axis=0),
            hist_act=np.zeros((p, act_dim)),
            hist_res=np.full((p, act_dim), np.nan),
            t=0,
            frozen=np.zeros(p, dtype=bool),
        )

    @property
    def p(self) -> int:
        return self.hist_obs.shape[0]

    @property
    def active(self) -> int:
        return min(self.p, self.t)

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.p) < self.active

    def push(self, action, residual=None, next_obs=None) -> "ExtendedState":
        """Shift in ``(current, action, residual)`` and move to ``next_obs``."""
        action = np.asarray(action, dtype=float)
        res = np.full_like(action, np.nan) if residual is None else np.asarray(residual, dtype=float)
        frozen = np.zeros(self.p, dtype=bool) if self.frozen is None else self.frozen
        return ExtendedState(
            current=self.current if next_obs is None else np.asarray(next_obs, dtype=float),
            hist_obs=np.concatenate([self.current[None, :], self.hist_obs[:-1]]),
            hist_act=np.concatenate([action[None, :], self.hist_act[:-1]]),
            hist_res=np.concatenate([res[None, :], self.hist_res[:-1]]),
            t=self.t + 1,
            frozen=np.concatenate([[False], frozen[:-1]]),
        )


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray

    def log_prob(self, action) -> float:
        return float(gaussian_log_prob(np.asarray(action, dtype=float), self.mean, np.log(self.std)))


def gaussian_log_prob(action, mean, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (action - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def on_params_updated(state: ExtendedState) -> ExtendedState:
    """Freeze the cached residuals present when the parameters change.

    Sampling keeps using them for the next ``p`` steps instead of
    recomputing with the new parameters; residuals of later steps are
    generated under the new parameters as usual.
    """
    if state.active == 0:
        return state
    return replace(state, frozen=state.mask.copy())


class ArPolicy:
    """Autoregressive policy over the history-extended state.

    Parameters
    ----------
    head : PolicyHead
        Provides ``mu(s)`` and ``log sigma(s)``.
    model : ArModel
        The stationary process; its coefficients and noise std are fixed.
    recompute_in_rollout : bool
        Ablation switch: recompute history residuals under the current
        parameters while sampling instead of using cached ones.
    """

    def __init__(self, head: PolicyHead, model: ArModel, recompute_in_rollout: bool = False):
        self.head = head
        self.model = model
        self.recompute_in_rollout = recompute_in_rollout

    @property
    def order(self) -> int:
        return self.model.order

    @property
    def act_dim(self) -> int:
        return self.head.act_dim

    # -- single extended state --------------------------------------------

    def history_term(self, state: ExtendedState, use_cache: bool = True) -> np.ndarray:
        k = state.active
        if k == 0:
            return np.zeros(self.act_dim)
        res = state.hist_res[:k]
        if not use_cache or np.isnan(res).any():
            mu, log_std = self.head.forward(state.hist_obs[:k])
            fresh = (state.hist_act[:k] - mu) / np.maximum(np.exp(log_std), MIN_RESIDUAL_STD)
            res = fresh if not use_cache else np.where(np.isnan(res), fresh, res)
        return ar_sum(self.model.coeffs[:k], res)

    def distribution(self, state: ExtendedState, use_cache: bool = True) -> ActionDistribution:
        mu, log_std = self.head.forward(state.current[None, :])
        sigma = np.exp(log_std[0])
        f = self.history_term(state, use_cache=use_cache)
        return ActionDistribution(mean=mu[0] + sigma * f, std=sigma * self.model.noise_std)

    def sample(self, state: ExtendedState, noise) -> tuple[np.ndarray, float, ExtendedState]:
        """Draw an action from standard normal ``noise``.

        Returns the action, its log-probability under the sampling
        distribution, and the extended state with ``(s_t, a_t, residual)``
        pushed (its ``current`` is left for the environment to fill in).
        """
        noise = np.asarray(noise, dtype=float)
        mu, log_std = self.head.forward(state.current[None, :])
        mu, sigma = mu[0], np.exp(log_std[0])
        f = self.history_term(state, use_cache=not self.recompute_in_rollout)
        action = mu + sigma * f + sigma * self.model.noise_std * noise
        logp = float(gaussian_log_prob(action, mu + sigma * f, log_std[0] + np.log(self.model.noise_std)))
        residual = (action - mu) / np.maximum(sigma, MIN_RESIDUAL_STD)
        return action, logp, state.push(action, residual)

    def log_prob(self, state: ExtendedState, action) -> tuple[float, np.ndarray]:
        """Log-probability under the current parameters and its gradient.

        History residuals are recomputed (no cache), so the gradient flows
        through all ``min(p, t) + 1`` evaluations of the head.
        """
        batch = HistoryBatch.from_states([state])
        logp, grad = self.log_prob_batch(batch, np.atleast_2d(action), weights=np.ones(1))
        return float(logp[0]), grad

    # -- batched -------------------------------------------------------------

    def act_batch(self, obs, hist_res, mask, noise):
        """Vectorized rollout step from cached residuals.

        ``obs`` is ``(n, obs_dim)``, ``hist_res`` ``(n, p, act_dim)``, ``mask``
        ``(n, p)``.  Returns actions, log-probs and the new residuals.
        """
        mu, log_std = self.head.forward(obs)
        sigma = np.exp(log_std)
        res = np.where(mask[:, :, None], hist_res, 0.0)
        f = ar_sum(self.model.coeffs, res.transpose(1, 0, 2))
        mean = mu + sigma * f
        action = mean + sigma * self.model.noise_std * noise
        logp = gaussian_log_prob(action, mean, log_std + np.log(self.model.noise_std))
        return action, logp, (action - mu) / np.maximum(sigma, MIN_RESIDUAL_STD)

    def residuals(self, hist_obs, hist_act) -> np.ndarray:
        """Residuals ``(a - mu(s)) / sigma(s)`` of ``(n, p, ...)`` history arrays under current parameters."""
        n, p, _ = hist_obs.shape
        mu, log_std = self.head.forward(hist_obs.reshape(n * p, -1))
        sig = np.maximum(np.exp(log_std), MIN_RESIDUAL_STD)
        return (hist_act - mu.reshape(n, p, -1)) / sig.reshape(n, p, -1)

    def log_prob_batch(self, batch: "HistoryBatch", actions, weights=None, entropy_weight: float = 0.0):
        """Log-probabilities with residuals recomputed under current parameters.

        If ``weights`` is given, also returns the gradient of
        ``sum(weights * logp) + entropy_weight * sum(entropy)`` w.r.t. the head
        parameters.  ``weights`` may be a callable of the log-probabilities.
        """
        n, p = batch.mask.shape
        phi = self.model.coeffs
        sz = self.model.noise_std
        stacked = np.concatenate([batch.obs[:, None, :], batch.hist_obs], axis=1).reshape(n * (p + 1), -1)
        mu_all, ls_all = self.head.forward(stacked)
        mu_all = mu_all.reshape(n, p + 1, -1)
        ls_all = ls_all.reshape(n, p + 1, -1)
        mu0, ls0 = mu_all[:, 0], ls_all[:, 0]
        sig0 = np.exp(ls0)
        sig_h = np.maximum(np.exp(ls_all[:, 1:]), MIN_RESIDUAL_STD)
        u = (batch.hist_act - mu_all[:, 1:]) / sig_h
        w = phi[None, :, None] * batch.mask[:, :, None]
        f = np.sum(w * u, axis=1)
        mean = mu0 + sig0 * f
        std = sig0 * sz
        z = (actions - mean) / std
        logp = np.sum(-0.5 * z * z - np.log(std) - 0.5 * LOG_2PI, axis=-1)
        if weights is None:
            return logp
        if callable(weights):
            weights = weights(logp)
        c = np.asarray(weights, dtype=float)[:, None]
        d_mu = np.empty_like(mu_all)
        d_ls = np.empty_like(ls_all)
        d_mu[:, 0] = c * z / std
        d_ls[:, 0] = c * (z / std * sig0 * f + z * z - 1.0) + entropy_weight
        d_f = c * z / sz
        d_mu[:, 1:] = -w * d_f[:, None, :] / sig_h
        d_ls[:, 1:] = -w * d_f[:, None, :] * u
        grad = self.head.backward(d_mu.reshape(n * (p + 1), -1), d_ls.reshape(n * (p + 1), -1))
        return logp, grad

    def entropy_batch(self, obs) -> np.ndarray:
        _, log_std = self.head.forward(obs)
        return np.sum(log_std + np.log(self.model.noise_std) + 0.5 * (LOG_2PI + 1.0), axis=-1)


class GaussianPolicy:
    """Markov diagonal Gaussian policy ``N(mu(s), sigma(s)^2)``."""

    order = 0

    def __init__(self, head: PolicyHead):
        self.head = head

    @property
    def act_dim(self) -> int:
        return self.head.act_dim

    def distribution(self, obs) -> ActionDistribution:
        mu, log_std = self.head.forward(np.atleast_2d(obs))
        return ActionDistribution(mean=mu[0], std=np.exp(log_std[0]))

    def sample(self, obs, noise) -> tuple[np.ndarray, float]:
        mu, log_std = self.head.forward(np.atleast_2d(obs))
        action = mu[0] + np.exp(log_std[0]) * np.asarray(noise, dtype=float)
        return action, float(gaussian_log_prob(action, mu[0], log_std[0]))

    def act_batch(self, obs, hist_res, mask, noise):
        mu, log_std = self.head.forward(obs)
        sigma = np.exp(log_std)
        action = mu + sigma * noise
        return action, gaussian_log_prob(action, mu, log_std), np.zeros((obs.shape[0], 0, self.act_dim))

    def log_prob_batch(self, batch: "HistoryBatch", actions, weights=None, entropy_weight: float = 0.0):
        mu, log_std = self.head.forward(batch.obs)
        std = np.exp(log_std)
        z = (actions - mu) / std
        logp = np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)
        if weights is None:
            return logp
        if callable(weights):
            weights = weights(logp)
        c = np.asarray(weights, dtype=float)[:, None]
        grad = self.head.backward(c * z / std, c * (z * z - 1.0) + entropy_weight)
        return logp, grad

    def entropy_batch(self, obs) -> np.ndarray:
        _, log_std = self.head.forward(obs)
        return np.sum(log_std + 0.5 * (LOG_2PI + 1.0), axis=-1)


@dataclass
class HistoryBatch:
    """Arrays describing ``n`` extended states for batched evaluation."""

    obs: np.ndarray
    hist_obs: np.ndarray
    hist_act: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_states(cls, states) -> "HistoryBatch":
        return cls(
            obs=np.stack([s.current for s in states]),
            hist_obs=np.stack([s.hist_obs for s in states]),
            hist_act=np.stack([s.hist_act for s in states]),
            mask=np.stack([s.mask for s in states]),
        )

    def take(self, idx) -> "HistoryBatch":
        return HistoryBatch(self.obs[idx], self.hist_obs[idx], self.hist_act[idx], self.mask[idx])

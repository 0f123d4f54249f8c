"""Square arena task and the history-extended wrapper around it.

A point agent starts at the center of a 10x10 arena and must come within
0.5 units of a target placed uniformly on a circle of radius 2.5.  Actions
are commanded velocities clipped to ``[-1, 1]^2``; every step costs ``dt``,
so the return of an episode that reaches the target is minus its duration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBS_DIM = 6
ACT_DIM = 2


@dataclass(frozen=True)
class SquareParams:
    action_rate: float = 10.0
    arena_half: float = 5.0
    target_radius: float = 2.5
    done_dist: float = 0.5
    episode_cap_seconds: float = 1000.0
    max_speed: float = 1.0

    @property
    def dt(self) -> float:
        return 1.0 / self.action_rate

    @property
    def max_steps(self) -> int:
        # integer step counting keeps elapsed time exact at any rate
        return int(round(self.episode_cap_seconds * self.action_rate))


def observe(pos: np.ndarray, vel: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.concatenate([pos, vel, target - pos], axis=-1)


def advance(params: SquareParams, pos: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One step of direct velocity control with walls that clamp position."""
    vel = np.clip(action, -params.max_speed, params.max_speed)
    pos = np.clip(pos + vel * params.dt, -params.arena_half, params.arena_half)
    return pos, vel


def draw_target(params: SquareParams, rng: np.random.Generator, size=None) -> np.ndarray:
    psi = rng.uniform(0.0, 2.0 * np.pi, size=size)
    return params.target_radius * np.stack([np.cos(psi), np.sin(psi)], axis=-1)


class EpisodeDone(RuntimeError):
    pass


class SquareEnv:
    """Single Square environment.

    ``step`` returns ``(obs, reward, done, info)`` where ``info`` carries
    ``goal`` and ``timeout`` flags so time-limit terminations can be bootstrapped.
    """

    def __init__(self, action_rate: float = 10.0, seed: int | None = None, **kwargs):
        self.params = SquareParams(action_rate=action_rate, **kwargs)
        self.rng = np.random.default_rng(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.target = np.zeros(2)
        self.steps = 0
        self.done = True

    @property
    def dt(self) -> float:
        return self.params.dt

    @property
    def elapsed(self) -> float:
        return self.steps * self.params.dt

    @property
    def at_goal(self) -> bool:
        return bool(np.linalg.norm(self.pos - self.target) < self.params.done_dist)

    def reset(self, seed: int | None = None, target=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.target = draw_target(self.params, self.rng) if target is None else np.asarray(target, dtype=float)
        self.steps = 0
        self.done = self.at_goal
        return self.observation()

    def observation(self) -> np.ndarray:
        return observe(self.pos, self.vel, self.target)

    def step(self, action):
        if self.done:
            raise EpisodeDone("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=float)
        if action.shape != (ACT_DIM,):
            raise ValueError(f"action must have shape ({ACT_DIM},), got {action.shape}")
        self.pos, self.vel = advance(self.params, self.pos, action)
        self.steps += 1
        goal = self.at_goal
        timeout = not goal and self.steps >= self.params.max_steps
        self.done = goal or timeout
        return self.observation(), -self.params.dt, self.done, {"goal": goal, "timeout": timeout}

    def log_row(self, action, reward, done) -> dict:
        """Trajectory logging hook: one row per step."""
        return {
            "t": self.elapsed,
            "x": self.pos[0],
            "y": self.pos[1],
            "vx": self.vel[0],
            "vy": self.vel[1],
            "ax": action[0],
            "ay": action[1],
            "reward": reward,
            "done": done,
        }


class VecSquareEnv:
    """``n`` independent Square environments stepped in lockstep with auto-reset.

    After a terminal step the returned observation is already the first
    observation of the next episode; ``final_obs`` keeps the terminal one.
    """

    def __init__(self, n: int, action_rate: float = 10.0, seed: int | None = None, **kwargs):
        self.n = n
        self.params = SquareParams(action_rate=action_rate, **kwargs)
        self.rng = np.random.default_rng(seed)
        self.pos = np.zeros((n, 2))
        self.vel = np.zeros((n, 2))
        self.target = np.zeros((n, 2))
        self.steps = np.zeros(n, dtype=np.int64)

    @property
    def dt(self) -> float:
        return self.params.dt

    def reset(self) -> np.ndarray:
        self._reset_where(np.ones(self.n, dtype=bool))
        return observe(self.pos, self.vel, self.target)

    def _reset_where(self, mask: np.ndarray):
        k = int(mask.sum())
        if k == 0:
            return
        self.pos[mask] = 0.0
        self.vel[mask] = 0.0
        self.target[mask] = draw_target(self.params, self.rng, size=k)
        self.steps[mask] = 0

    def step(self, action: np.ndarray):
        """Returns ``(obs, reward, done, timeout, final_obs, lengths)``.

        ``lengths`` holds the step count of episodes that ended on this step
        (zero elsewhere).
        """
        self.pos, self.vel = advance(self.params, self.pos, action)
        self.steps += 1
        goal = np.linalg.norm(self.pos - self.target, axis=1) < self.params.done_dist
        timeout = ~goal & (self.steps >= self.params.max_steps)
        done = goal | timeout
        final_obs = observe(self.pos, self.vel, self.target)
        lengths = np.where(done, self.steps, 0)
        reward = np.full(self.n, -self.params.dt)
        self._reset_where(done)
        obs = observe(self.pos, self.vel, self.target) if done.any() else final_obs
        return obs, reward, done, timeout, final_obs, lengths


class HistoryWrapper:
    """Presents the environment as the history-extended MDP.

    The extended state carries the last ``p`` (observation, action, residual)
    entries.  Rewards and termination pass through unchanged.
    """

    def __init__(self, env: SquareEnv, p: int, act_dim: int = ACT_DIM):
        from .policy import ExtendedState

        self._initial = ExtendedState.initial
        self.env = env
        self.p = p
        self.act_dim = act_dim
        self.state = None

    def reset(self, seed: int | None = None, **kwargs):
        obs = self.env.reset(seed=seed, **kwargs)
        self.state = self._initial(obs, self.p, self.act_dim)
        return self.state

    def step(self, action, residual=None):
        obs, reward, done, info = self.env.step(action)
        self.state = self.state.push(action, residual, next_obs=obs)
        return self.state, reward, done, info

"""Experiment harness for the Square task: exploration, trajectories, learning.

Every experiment is a deterministic function of its seeds.  Policy specs
are strings: ``gaussian`` or ``arp:<p>:<alpha>``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .approximator import PolicyHead
from .ar_core import ArModel
from .envs import ACT_DIM, OBS_DIM, SquareEnv, SquareParams, VecSquareEnv
from .policy import ArPolicy, ExtendedState, GaussianPolicy
from .trainer import PpoTrainer, TrainConfig, make_policy

CSV_VERSION = "# arpex-v1"
DEFAULT_RATES = (5.0, 10.0, 25.0, 50.0, 100.0)
DEFAULT_SPECS = ("gaussian", "arp:3:0.5", "arp:3:0.8", "arp:3:0.9", "arp:3:0.95")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    p: int = 0
    alpha: float = 0.0

    @classmethod
    def parse(cls, text) -> "PolicySpec":
        if isinstance(text, PolicySpec):
            return text
        parts = str(text).strip().lower().split(":")
        if parts == ["gaussian"]:
            return cls("gaussian")
        if parts[0] == "arp" and len(parts) == 3:
            return cls("arp", int(parts[1]), float(parts[2]))
        raise ValueError(f"bad policy spec {text!r}; expected 'gaussian' or 'arp:<p>:<alpha>'")

    def __str__(self):
        return "gaussian" if self.kind == "gaussian" else f"arp:{self.p}:{self.alpha:g}"

    @property
    def train_spec(self):
        return "gaussian" if self.kind == "gaussian" else ("arp", self.p, self.alpha)

    def model(self) -> ArModel | None:
        return None if self.kind == "gaussian" else ArModel.binomial(self.p, self.alpha)


def random_policy(spec: PolicySpec, sigma_scale: float = 1.0):
    """Zero-mean policy with ``sigma = sigma_scale`` everywhere."""
    head = PolicyHead(OBS_DIM, ACT_DIM, hidden=(8,), init_log_std=math.log(sigma_scale))
    head.mean_net.params[...] = 0.0
    if spec.kind == "gaussian":
        return GaussianPolicy(head)
    return ArPolicy(head, spec.model())


# -- exploration ---------------------------------------------------------------


@dataclass
class ExplorationReport:
    action_rate: float
    policy: str
    sigma_scale: float
    total_sim_seconds: float
    episodes_completed: int
    episodes_timed_out: int
    mean_time: float
    median_time: float
    censored: bool
    seeds: list = field(default_factory=list)


@numba.njit(cache=True)
def _explore_kernel(phi, sigma, sz, dt, half, done_dist, radius, max_steps, noise, psi, state, hist, lengths):
    """Back-to-back episodes of a zero-mean random agent in one environment.

    ``state`` = [x, y, tx, ty, steps, t, next_psi, n_lengths] persists across
    chunks of ``noise``.  Goal episodes append their step count to
    ``lengths``, time-limited ones append minus the step count.
    """
    px, py, tx, ty = state[0], state[1], state[2], state[3]
    steps = int(state[4])
    t = int(state[5])
    ip = int(state[6])
    n_len = int(state[7])
    p = phi.shape[0]
    for i in range(noise.shape[0]):
        k_max = min(p, t)
        fx = 0.0
        fy = 0.0
        if k_max > 0:
            fx = 0.0 * hist[0, 0]
            fy = 0.0 * hist[0, 1]
            for k in range(k_max):
                fx = fx + phi[k] * hist[k, 0]
                fy = fy + phi[k] * hist[k, 1]
        ax = 0.0 + sigma * fx + (sigma * sz) * noise[i, 0]
        ay = 0.0 + sigma * fy + (sigma * sz) * noise[i, 1]
        for k in range(p - 1, 0, -1):
            hist[k, 0] = hist[k - 1, 0]
            hist[k, 1] = hist[k - 1, 1]
        if p > 0:
            hist[0, 0] = (ax - 0.0) / sigma
            hist[0, 1] = (ay - 0.0) / sigma
        t += 1
        vx = min(max(ax, -1.0), 1.0)
        vy = min(max(ay, -1.0), 1.0)
        px = min(max(px + vx * dt, -half), half)
        py = min(max(py + vy * dt, -half), half)
        steps += 1
        goal = math.sqrt((px - tx) * (px - tx) + (py - ty) * (py - ty)) < done_dist
        if goal or steps >= max_steps:
            lengths[n_len] = steps if goal else -steps
            n_len += 1
            px = 0.0
            py = 0.0
            tx = radius * math.cos(psi[ip])
            ty = radius * math.sin(psi[ip])
            ip += 1
            steps = 0
            t = 0
    state[0], state[1], state[2], state[3] = px, py, tx, ty
    state[4], state[5], state[6], state[7] = steps, t, ip, n_len


def explore_episodes(rate: float, spec, budget_seconds: float, seed: int, sigma_scale: float = 1.0, params: SquareParams | None = None, chunk: int = 1 << 20) -> np.ndarray:
    """Signed episode lengths in steps for one (rate, spec, seed) cell.

    The zero-mean agent's actions are a realization of the policy's noise
    process, independent of the state, so the rollout runs in a compiled
    loop.  Noise and target angles come from two streams seeded by ``seed``,
    matching :func:`explore_episodes_reference`.
    """
    spec = PolicySpec.parse(spec)
    params = params or SquareParams(action_rate=rate)
    model = spec.model()
    phi = np.zeros(0) if model is None else np.asarray(model.coeffs)
    sz = 1.0 if model is None else model.noise_std
    sigma = float(np.exp(np.log(sigma_scale)))
    total = int(round(budget_seconds * rate))
    noise_rng, target_rng = _streams(seed)
    max_eps = total // 2 + 2
    psi = target_rng.uniform(0.0, 2.0 * np.pi, size=min(max_eps, total + 1) + 1)
    state = np.array([0.0, 0.0, params.target_radius * math.cos(psi[0]), params.target_radius * math.sin(psi[0]), 0, 0, 1, 0])
    hist = np.zeros((max(len(phi), 1), 2))
    lengths = np.zeros(len(psi), dtype=np.int64)
    done = 0
    while done < total:
        c = min(chunk, total - done)
        _explore_kernel(phi, sigma, sz, params.dt, params.arena_half, params.done_dist, params.target_radius,
                        params.max_steps, noise_rng.standard_normal((c, 2)), psi, state, hist, lengths)
        done += c
    return lengths[: int(state[7])]


def explore_episodes_reference(rate: float, spec, budget_seconds: float, seed: int, sigma_scale: float = 1.0) -> np.ndarray:
    """Slow path through ``SquareEnv`` and the policy classes; same contract as :func:`explore_episodes`."""
    spec = PolicySpec.parse(spec)
    policy = random_policy(spec, sigma_scale)
    noise_rng, target_rng = _streams(seed)
    env = SquareEnv(action_rate=rate)
    env.rng = target_rng
    total = int(round(budget_seconds * rate))
    lengths = []
    obs = env.reset()
    state = ExtendedState.initial(obs, max(spec.p, 0), ACT_DIM) if spec.kind == "arp" else None
    for _ in range(total):
        noise = noise_rng.standard_normal(2)
        if state is None:
            action, _ = policy.sample(obs, noise)
        else:
            action, _, state = policy.sample(state, noise)
        obs, _, done, info = env.step(action)
        if state is not None:
            state = ExtendedState(obs, state.hist_obs, state.hist_act, state.hist_res, state.t, state.frozen)
        if done:
            lengths.append(env.steps if info["goal"] else -env.steps)
            obs = env.reset()
            if state is not None:
                state = ExtendedState.initial(obs, spec.p, ACT_DIM)
    return np.array(lengths, dtype=np.int64)


def _streams(seed):
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


def summarize_exploration(rate, spec, sigma_scale, budget_seconds, seeds, lengths_per_seed) -> ExplorationReport:
    lengths = np.concatenate(lengths_per_seed) if lengths_per_seed else np.zeros(0, dtype=np.int64)
    goal = lengths[lengths > 0]
    timeouts = lengths[lengths < 0]
    times = np.abs(lengths) / rate
    censored = goal.size == 0
    return ExplorationReport(
        action_rate=rate,
        policy=str(PolicySpec.parse(spec)),
        sigma_scale=sigma_scale,
        total_sim_seconds=budget_seconds * len(seeds),
        episodes_completed=int(goal.size),
        episodes_timed_out=int(timeouts.size),
        mean_time=float(budget_seconds) if censored else float(times.mean()),
        median_time=float(budget_seconds) if censored else float(np.median(times)),
        censored=censored,
        seeds=list(seeds),
    )


def run_exploration(rates=DEFAULT_RATES, specs=DEFAULT_SPECS, budget_seconds: float = 1e5, seeds=(0,), sigma_scale: float = 1.0) -> list[ExplorationReport]:
    """Mean time-to-target of the zero-mean random agent for every (rate, spec).

    Time-limited episodes count at the 1000 s cap; the report keeps them
    separate in ``episodes_timed_out``.
    """
    reports = []
    for rate in rates:
        for spec in specs:
            per_seed = [explore_episodes(rate, spec, budget_seconds, s, sigma_scale) for s in seeds]
            reports.append(summarize_exploration(rate, spec, sigma_scale, budget_seconds, seeds, per_seed))
    return reports


# -- trajectories --------------------------------------------------------------


def run_trajectories(rate: float, spec, duration_s: float = 10.0, n: int = 5, seed: int = 0, sigma_scale: float = 1.0) -> list[dict]:
    """``n`` fixed-length rollouts of the random agent with termination disabled.

    Rows are ``{run, t, x, y}`` including the start point.
    """
    spec = PolicySpec.parse(spec)
    policy = random_policy(spec, sigma_scale)
    rows = []
    steps = int(round(duration_s * rate))
    for run in range(n):
        noise_rng, target_rng = _streams(seed + run)
        env = SquareEnv(action_rate=rate, done_dist=0.0, episode_cap_seconds=max(duration_s, 1.0) * 2)
        env.rng = target_rng
        obs = env.reset()
        state = ExtendedState.initial(obs, spec.p, ACT_DIM) if spec.kind == "arp" else None
        rows.append({"run": run, "t": 0.0, "x": float(env.pos[0]), "y": float(env.pos[1])})
        for i in range(steps):
            noise = noise_rng.standard_normal(2)
            if state is None:
                action, _ = policy.sample(obs, noise)
            else:
                action, _, state = policy.sample(state, noise)
            obs, _, _, _ = env.step(action)
            if state is not None:
                state = ExtendedState(obs, state.hist_obs, state.hist_act, state.hist_res, state.t, state.frozen)
            rows.append({"run": run, "t": (i + 1) / rate, "x": float(env.pos[0]), "y": float(env.pos[1])})
    return rows


def bounding_box_areas(rows) -> np.ndarray:
    runs = sorted({r["run"] for r in rows})
    areas = []
    for run in runs:
        xs = np.array([r["x"] for r in rows if r["run"] == run])
        ys = np.array([r["y"] for r in rows if r["run"] == run])
        areas.append((xs.max() - xs.min()) * (ys.max() - ys.min()))
    return np.array(areas)


# -- learning ------------------------------------------------------------------


def evaluate(policy, rate: float, episodes: int = 32, seed: int = 0, episode_cap_seconds: float = 1000.0) -> np.ndarray:
    """Returns of the first episode of each of ``episodes`` parallel environments.

    Only first episodes count, so long episodes are not under-represented.
    """
    env = VecSquareEnv(episodes, action_rate=rate, seed=seed, episode_cap_seconds=episode_cap_seconds)
    rng = np.random.default_rng([seed, 3])
    obs = env.reset()
    p = policy.order
    hist_res = np.zeros((episodes, p, ACT_DIM))
    t = np.zeros(episodes, dtype=np.int64)
    returns = np.zeros(episodes)
    active = np.ones(episodes, dtype=bool)
    while active.any():
        mask = np.arange(p)[None, :] < np.minimum(t, p)[:, None]
        action, _, res = policy.act_batch(obs, hist_res, mask, rng.standard_normal((episodes, ACT_DIM)))
        obs, reward, done, _, _, _ = env.step(action)
        returns += np.where(active, reward, 0.0)
        if p:
            hist_res = np.concatenate([res[:, None], hist_res[:, :-1]], axis=1)
        t += 1
        active &= ~done
    return returns


@dataclass
class LearningRun:
    spec: str
    seed: int
    history: list
    initial_eval: float
    final_eval: float


def run_learning_seed(rate: float, spec, seed: int, config: TrainConfig | None = None, eval_episodes: int = 32, callback=None) -> LearningRun:
    spec = PolicySpec.parse(spec)
    config = config or TrainConfig()
    config = TrainConfig(**{**asdict(config), "action_rate": rate})
    policy = make_policy(spec.train_spec, config, np.random.default_rng([seed, 0]))
    trainer = PpoTrainer(policy, config, seed=seed)
    initial = float(np.mean(evaluate(policy, rate, eval_episodes, seed=10_000 + seed, episode_cap_seconds=config.episode_cap_seconds)))
    history = trainer.train(callback=callback)
    final = float(np.mean(evaluate(policy, rate, eval_episodes, seed=20_000 + seed, episode_cap_seconds=config.episode_cap_seconds)))
    return LearningRun(str(spec), seed, history, initial, final)


def run_learning(rate: float, spec, total_sim_seconds: float = 50_000.0, seeds=(0, 1, 2, 3, 4), config: TrainConfig | None = None, eval_episodes: int = 32) -> list[LearningRun]:
    config = config or TrainConfig()
    config = TrainConfig(**{**asdict(config), "total_sim_seconds": total_sim_seconds})
    return [run_learning_seed(rate, spec, s, config, eval_episodes) for s in seeds]


def learning_curve_rows(runs: list[LearningRun]) -> list[dict]:
    """Per-batch rolling mean return (last 100 episodes) averaged over seeds."""
    rows = []
    n_batches = min(len(r.history) for r in runs)
    for i in range(n_batches):
        recs = [r.history[i] for r in runs]
        rows.append({
            "sim_seconds": recs[0]["sim_seconds"],
            "mean_return": _nanmean([rec["rolling_return"] for rec in recs]),
            "mean_ep_len": _nanmean([rec["rolling_ep_len"] for rec in recs]),
            "kl": float(np.mean([rec["kl"] for rec in recs])),
            "clipfrac": float(np.mean([rec["clipfrac"] for rec in recs])),
            "explained_var": _nanmean([rec["explained_var"] for rec in recs]),
        })
    return rows


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=float)
    return float("nan") if np.all(np.isnan(values)) else float(np.nanmean(values))


# -- CSV -----------------------------------------------------------------------


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as f:
        f.write(CSV_VERSION + "\n")
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in columns})


def read_csv(path) -> list[dict]:
    with open(path) as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v

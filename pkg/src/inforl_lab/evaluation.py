"""Latent sweeps, code schedules and confusion matrices for trained policies.

Every rollout here uses the Gaussian mean (no sampling noise), so the same
seed always reproduces the same numbers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .envs import nearest_goal
from .errors import ConfigurationError, UndefinedMetricError


@dataclass
class Trajectory:
    positions: np.ndarray  # (steps + 1, 2), including the start
    codes: list
    actions: np.ndarray
    rewards: np.ndarray
    final_info: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.rewards)

    @property
    def final_position(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def code_vector(code, latent_kind: str, num_classes: int = 0) -> np.ndarray:
    if latent_kind == "categorical":
        v = np.zeros(num_classes)
        v[int(code)] = 1.0
        return v
    return np.atleast_1d(np.asarray(code, dtype=np.float64))


def run_episode(policy, env, code_at, seed: int, latent_kind: str = "uniform",
                num_classes: int = 0) -> Trajectory:
    """Deterministic rollout; ``code_at(step)`` gives the code fed at each step."""
    obs = env.reset(seed)
    positions = [_position(env)]
    codes, actions, rewards = [], [], []
    done = False
    step = 0
    info = {}
    while not done:
        code = code_at(step)
        a = policy.mode(np.concatenate([obs, code_vector(code, latent_kind, num_classes)]))
        res = env.step(a)
        codes.append(code)
        actions.append(np.clip(a, -1.0, 1.0))
        rewards.append(res.reward)
        positions.append(np.array([res.info["x"], res.info["y"]], dtype=np.float64))
        obs, done, info = res.observation, res.done, res.info
        step += 1
    return Trajectory(np.asarray(positions), codes, np.asarray(actions), np.asarray(rewards), info)


def _position(env) -> np.ndarray:
    if hasattr(env, "pos"):
        return np.array(env.pos, dtype=np.float64)
    return np.array([getattr(env, "x", 0.0), 0.0])


# metrics -------------------------------------------------------------------------


def movement_angle(trajectory) -> float:
    """Direction of the final position from the origin, degrees in [0, 360)."""
    pos = trajectory.final_position if isinstance(trajectory, Trajectory) else np.asarray(trajectory, dtype=np.float64)
    if pos.ndim == 2:
        pos = pos[-1]
    x, y = float(pos[0]), float(pos[1])
    if x == 0.0 and y == 0.0:
        raise UndefinedMetricError("movement angle is undefined when the episode ends at the origin")
    deg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if deg == 360.0 else deg


def mean_speed(trajectory, dt: float) -> float:
    """Total forward distance over elapsed time; ``trajectory`` is positions or x values."""
    if isinstance(trajectory, Trajectory):
        xs = trajectory.positions[:, 0]
    else:
        arr = np.asarray(trajectory, dtype=np.float64)
        xs = arr[:, 0] if arr.ndim == 2 else arr
    steps = len(xs) - 1
    if steps < 1:
        raise UndefinedMetricError("mean_speed needs at least one step")
    return float(np.sum(np.abs(np.diff(xs))) / (steps * dt))


def circular_mean_deg(angles) -> float:
    return float(stats.circmean(np.asarray(angles, dtype=np.float64), high=360.0, low=0.0)) % 360.0


def circular_std_deg(angles) -> float:
    return float(stats.circstd(np.asarray(angles, dtype=np.float64), high=360.0, low=0.0))


# sweeps ------------------------------------------------------------------------------


def code_grid(code_min: float, code_max: float, code_step: float) -> np.ndarray:
    if code_max < code_min:
        raise ConfigurationError("code_max must be >= code_min")
    if code_max == code_min:
        return np.array([float(code_min)])
    if code_step <= 0:
        raise ConfigurationError("code_step must be > 0")
    n = int(math.floor((code_max - code_min) / code_step + 1e-9)) + 1
    return np.round(code_min + code_step * np.arange(n), 10)


@dataclass
class SweepResult:
    metric: str
    codes: np.ndarray
    episodes_per_code: int
    metric_values: np.ndarray  # (n_codes, episodes)
    env_returns: np.ndarray  # (n_codes, episodes)
    final_positions: np.ndarray  # (n_codes, episodes, 2)
    trajectories: list = None

    @property
    def circular(self) -> bool:
        return self.metric == "angle"

    def metric_means(self) -> np.ndarray:
        if self.circular:
            return np.array([circular_mean_deg(v) for v in self.metric_values])
        return self.metric_values.mean(axis=1)

    def metric_stds(self) -> np.ndarray:
        if self.circular:
            return np.array([circular_std_deg(v) for v in self.metric_values])
        return self.metric_values.std(axis=1)

    def return_means(self) -> np.ndarray:
        return self.env_returns.mean(axis=1)

    def unwrapped_means(self) -> np.ndarray:
        """Per-code means in code order; angles unwrapped so neighbours differ by < 180 deg."""
        order = np.argsort(self.codes, kind="stable")
        means = self.metric_means()[order]
        if self.circular:
            means = np.unwrap(means, period=360.0)
        out = np.empty_like(means)
        out[order] = means
        return out

    def span(self) -> float:
        m = self.unwrapped_means()
        return float(m.max() - m.min())

    def rows(self):
        for i, code in enumerate(self.codes):
            yield {
                "code": float(code),
                "episodes": self.episodes_per_code,
                "metric_mean": float(self.metric_means()[i]),
                "metric_std": float(self.metric_stds()[i]),
                "env_return_mean": float(self.return_means()[i]),
            }


def _metric_fn(metric, env):
    if callable(metric):
        return metric
    if metric == "angle":
        return lambda traj: movement_angle(traj)
    if metric == "speed":
        return lambda traj: mean_speed(traj, env.spec.dt)
    raise ConfigurationError(f"unknown sweep metric {metric!r}")


def latent_sweep(policy, env, metric="angle", code_min: float = -0.25, code_max: float = 1.25,
                 code_step: float = 0.05, episodes_per_code: int = 10, seed: int = 0,
                 keep_trajectories: bool = False) -> SweepResult:
    """Fixed-code deterministic episodes over a grid of scalar codes (extrapolation included)."""
    if policy.input_size != env.spec.observation_dim + 1:
        raise ConfigurationError("latent_sweep needs a policy conditioned on a single continuous code")
    codes = code_grid(code_min, code_max, code_step)
    fn = _metric_fn(metric, env)
    n = len(codes)
    values = np.zeros((n, episodes_per_code))
    returns = np.zeros((n, episodes_per_code))
    finals = np.zeros((n, episodes_per_code, 2))
    trajs = [] if keep_trajectories else None
    for i, c in enumerate(codes):
        for e in range(episodes_per_code):
            traj = run_episode(policy, env, lambda _t, c=c: c, seed=seed + e)
            values[i, e] = fn(traj)
            returns[i, e] = traj.total_reward
            finals[i, e] = traj.final_position
            if keep_trajectories:
                trajs.append(traj)
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "custom")
    return SweepResult(name, codes, episodes_per_code, values, returns, finals, trajs)


def scheduled_code(step: int, code_start: float, code_delta: float, switch_every: int,
                   code_cap: float) -> float:
    raw = code_start + code_delta * (step // switch_every)
    if code_delta >= 0:
        raw = min(raw, code_cap)
    else:
        raw = max(raw, code_cap)
    return round(raw, 10)


def scheduled_code_rollout(policy, env, code_start: float = -0.25, code_delta: float = 0.05,
                           switch_every: int = 50, code_cap: float = 1.25, seed: int = 0) -> Trajectory:
    """Episode whose code steps by ``code_delta`` every ``switch_every`` steps, saturating at ``code_cap``."""
    if switch_every < 1:
        raise ConfigurationError("switch_every must be >= 1")
    return run_episode(
        policy, env,
        lambda t: scheduled_code(t, code_start, code_delta, switch_every, code_cap),
        seed=seed,
    )


def heading_change_deg(trajectory: Trajectory, step: int, window: int = 5) -> float:
    """Absolute change in movement heading across ``step`` (mean displacement over ``window`` steps each side)."""
    p = trajectory.positions
    lo, hi = max(step - window, 0), min(step + window, len(p) - 1)
    before = p[step] - p[lo]
    after = p[hi] - p[step]
    if not (np.any(before) and np.any(after)):
        return 0.0
    a = math.degrees(math.atan2(before[1], before[0]))
    b = math.degrees(math.atan2(after[1], after[0]))
    d = abs(b - a) % 360.0
    return min(d, 360.0 - d)


# confusion ---------------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: latent code index, columns: nearest goal at episode end

    @property
    def num_codes(self) -> int:
        return self.counts.shape[0]

    def diagonal_mass(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def best_assignment(self) -> tuple:
        """Code-to-goal relabelling with the largest matched mass (codes are unsupervised)."""
        k = self.num_codes
        return max(itertools.permutations(range(k)),
                   key=lambda perm: sum(self.counts[i, perm[i]] for i in range(k)))

    def matched_diagonal_mass(self) -> float:
        perm = self.best_assignment()
        return float(sum(self.counts[i, perm[i]] for i in range(self.num_codes)) / self.counts.sum())

    def rows(self):
        for i in range(self.counts.shape[0]):
            for j in range(self.counts.shape[1]):
                yield {"code_index": i, "goal_index": j, "count": int(self.counts[i, j])}


def confusion_eval(policy, env, num_codes: int, episodes_per_code: int = 100,
                   seed: int = 0) -> ConfusionMatrix:
    """Count, per categorical code, which goal the agent is nearest when the episode ends."""
    if not hasattr(env, "goals"):
        raise ConfigurationError("confusion_eval needs a multi-goal environment")
    if policy.input_size != env.spec.observation_dim + num_codes:
        raise ConfigurationError("policy is not conditioned on a categorical code of this size")
    counts = np.zeros((num_codes, env.num_goals), dtype=np.int64)
    for k in range(num_codes):
        for e in range(episodes_per_code):
            traj = run_episode(policy, env, lambda _t, k=k: k, seed=seed + e,
                               latent_kind="categorical", num_classes=num_codes)
            counts[k, nearest_goal(traj.final_position, env.goals)] += 1
    return ConfusionMatrix(counts)


# correlation ---------------------------------------------------------------------


def code_metric_correlation(sweep: SweepResult, with_flag: bool = False):
    """Spearman rank correlation between code and per-code mean metric.

    A constant metric has no defined correlation; it is reported as 0.0 and,
    with ``with_flag=True``, the second return value is ``False``.
    """
    if len(np.unique(sweep.codes)) < 3:
        raise ConfigurationError("correlation needs at least 3 distinct codes")
    means = sweep.unwrapped_means()
    if np.ptp(means) == 0.0:
        return (0.0, False) if with_flag else 0.0
    rho = float(stats.spearmanr(sweep.codes, means).statistic)
    return (rho, True) if with_flag else rho

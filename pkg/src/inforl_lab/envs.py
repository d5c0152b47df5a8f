"""Kinematic point-agent environments with direction-, speed- and goal-agnostic rewards.

All three share ``reset(seed) -> observation`` and
``step(action) -> StepResult``.  Actions live in the box [-1, 1]^action_dim;
out-of-box actions are clipped, non-finite ones raise.

Observation layouts:

* ``point_direction``: (x, y, t/T)
* ``line_speed``: (last dx/dt / v_max, t/T)
* ``multi_goal_reach``: (x, y, g1x, g1y, ..., gKx, gKy)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, EnvironmentFault


@dataclass
class EnvSpec:
    name: str
    observation_dim: int
    action_dim: int
    horizon: int = 100
    dt: float = 0.05
    v_max: float = 2.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def _checked_action(action, dim: int) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] != dim:
        raise EnvironmentFault(f"expected action of dim {dim}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise EnvironmentFault(f"non-finite action {a!r}")
    return np.clip(a, -1.0, 1.0)


class PointDirectionEnv:
    """Planar point rewarded for speed whenever it moves away from the origin."""

    name = "point_direction"

    def __init__(self, horizon: int = 100, dt: float = 0.05, v_max: float = 2.0):
        self.spec = EnvSpec(self.name, 3, 2, horizon, dt, v_max)
        self.pos = np.zeros(2)
        self.t = 0

    def reset(self, seed: int = 0) -> np.ndarray:
        self.pos = np.zeros(2)
        self.t = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([self.pos[0], self.pos[1], self.t / self.spec.horizon])

    def step(self, action) -> StepResult:
        a = _checked_action(action, 2)
        s = self.spec
        x0, y0 = self.pos
        x1 = x0 + a[0] * s.v_max * s.dt
        y1 = y0 + a[1] * s.v_max * s.dt
        reward = kernels.point_direction_reward(x0, y0, x1, y1, s.dt)
        self.pos = np.array([x1, y1])
        self.t += 1
        done = self.t >= s.horizon
        return StepResult(self._obs(), reward, done, {"x": x1, "y": y1})


class LineSpeedEnv:
    """1-D runner rewarded 1 per step while its step length exceeds a threshold."""

    name = "line_speed"

    def __init__(self, horizon: int = 100, dt: float = 0.05, v_max: float = 2.0,
                 d_threshold: float = 0.02):
        self.spec = EnvSpec(self.name, 2, 1, horizon, dt, v_max, {"d_threshold": d_threshold})
        self.d_threshold = d_threshold
        self.x = 0.0
        self.last_dx = 0.0
        self.t = 0

    def reset(self, seed: int = 0) -> np.ndarray:
        self.x = 0.0
        self.last_dx = 0.0
        self.t = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        s = self.spec
        return np.array([self.last_dx / s.dt / s.v_max, self.t / s.horizon])

    def step(self, action) -> StepResult:
        a = _checked_action(action, 1)
        s = self.spec
        x0 = self.x
        x1 = x0 + max(a[0], 0.0) * s.v_max * s.dt
        reward = kernels.line_speed_reward(x0, x1, self.d_threshold)
        self.last_dx = x1 - x0
        self.x = x1
        self.t += 1
        done = self.t >= s.horizon
        return StepResult(self._obs(), reward, done, {"x": x1, "y": 0.0, "dx": self.last_dx})


GOAL_LAYOUTS = ("sectors", "uniform")


class MultiGoalReachEnv:
    """Planar reacher with K interchangeable goals on a circle; dense -min distance reward.

    ``goal_layout="uniform"`` draws every goal angle independently;
    ``"sectors"`` draws goal k uniformly on the k-th of K equal arcs.
    Both reject placements closer than ``min_separation``.
    """

    name = "multi_goal_reach"
    max_placement_tries = 10_000

    def __init__(self, num_goals: int = 2, horizon: int = 100, dt: float = 0.05,
                 v_max: float = 2.0, goal_radius: float = 1.0, min_separation: float = 0.5,
                 goal_epsilon: float = 0.05, goal_layout: str = "sectors"):
        if num_goals < 1:
            raise ConfigurationError("num_goals must be >= 1")
        if goal_layout not in GOAL_LAYOUTS:
            raise ConfigurationError(f"goal_layout must be one of {GOAL_LAYOUTS}, got {goal_layout!r}")
        self.spec = EnvSpec(
            self.name, 2 + 2 * num_goals, 2, horizon, dt, v_max,
            {"num_goals": num_goals, "goal_radius": goal_radius,
             "min_separation": min_separation, "goal_epsilon": goal_epsilon,
             "goal_layout": goal_layout},
        )
        self.goal_layout = goal_layout
        self.num_goals = num_goals
        self.goal_radius = goal_radius
        self.min_separation = min_separation
        self.goal_epsilon = goal_epsilon
        self.pos = np.zeros(2)
        self.goals = np.zeros((num_goals, 2))
        self.t = 0

    def place_goals(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(self.max_placement_tries):
            theta = rng.uniform(0.0, 2.0 * math.pi, size=self.num_goals)
            if self.goal_layout == "sectors":
                # goal k lands on arc [k, k+1) * 2pi/K, so its index means a region of the plane
                theta = (np.arange(self.num_goals) + theta / (2.0 * math.pi)) * (2.0 * math.pi / self.num_goals)
            goals = self.goal_radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
            if self.num_goals == 1 or kernels.min_pairwise_distance(goals) >= self.min_separation:
                return goals
        raise ConfigurationError(
            f"could not place {self.num_goals} goals with separation {self.min_separation}"
        )

    def reset(self, seed: int = 0) -> np.ndarray:
        self.goals = self.place_goals(np.random.default_rng(seed))
        self.pos = np.zeros(2)
        self.t = 0
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.goals.reshape(-1)])

    def step(self, action) -> StepResult:
        a = _checked_action(action, 2)
        s = self.spec
        self.pos = self.pos + a * s.v_max * s.dt
        dists = kernels.goal_distances(self.pos[0], self.pos[1], self.goals)
        d = float(np.min(dists))
        self.t += 1
        done = d < self.goal_epsilon or self.t >= s.horizon
        info = {"x": self.pos[0], "y": self.pos[1], "goal_distances": dists}
        return StepResult(self._obs(), -d, done, info)


def nearest_goal(final_position, goals) -> int:
    """Index of the goal closest to ``final_position``; ties go to the lowest index."""
    goals = np.asarray(goals, dtype=np.float64).reshape(-1, 2)
    if goals.shape[0] < 1:
        raise ConfigurationError("nearest_goal needs at least one goal")
    p = np.asarray(final_position, dtype=np.float64)
    return int(kernels.nearest_index(p[0], p[1], goals))


ENV_NAMES = ("point_direction", "line_speed", "multi_goal_reach")


def make_env(name: str, **params):
    if name == "point_direction":
        return PointDirectionEnv(**params)
    if name == "line_speed":
        return LineSpeedEnv(**params)
    if name == "multi_goal_reach":
        return MultiGoalReachEnv(**params)
    raise ConfigurationError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")

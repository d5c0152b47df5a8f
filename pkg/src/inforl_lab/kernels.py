"""Hot scalar/loop kernels shared by the environments, the trainer and eval.

Every kernel is written so the same body runs under numba and under the
interpreter; see :mod:`inforl_lab._accel` for the switch.
"""

import math

import numpy as np

from ._accel import njit


@njit
def gae_kernel(rewards, values, dones, last_value, gamma, lam):
    # values[t] = V(s_t); last_value bootstraps the step after the final one
    n = rewards.shape[0]
    adv = np.empty(n)
    next_adv = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


@njit
def point_direction_reward(x0, y0, x1, y1, dt):
    n0 = math.sqrt(x0 * x0 + y0 * y0)
    n1 = math.sqrt(x1 * x1 + y1 * y1)
    if n1 > n0:
        dx = x1 - x0
        dy = y1 - y0
        return math.sqrt(dx * dx + dy * dy) / dt
    return 0.0


@njit
def line_speed_reward(x0, x1, d_threshold):
    if x1 - x0 > d_threshold:
        return 1.0
    return 0.0


@njit
def goal_distances(px, py, goals):
    k = goals.shape[0]
    out = np.empty(k)
    for i in range(k):
        dx = px - goals[i, 0]
        dy = py - goals[i, 1]
        out[i] = math.sqrt(dx * dx + dy * dy)
    return out


@njit
def nearest_index(px, py, goals):
    # strict < keeps the lowest index on ties
    best = 0
    best_d = math.inf
    for i in range(goals.shape[0]):
        dx = px - goals[i, 0]
        dy = py - goals[i, 1]
        d = math.sqrt(dx * dx + dy * dy)
        if d < best_d:
            best_d = d
            best = i
    return best


@njit
def min_pairwise_distance(points):
    best = math.inf
    n = points.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            dx = points[i, 0] - points[j, 0]
            dy = points[i, 1] - points[j, 1]
            d = math.sqrt(dx * dx + dy * dy)
            if d < best:
                best = d
    return best

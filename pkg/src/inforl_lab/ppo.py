"""On-policy PPO: rollout collection, GAE, clipped-surrogate and value updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, NonFiniteError, NumericalAbort, UsageError
from .numerics import (
    Adam,
    GaussianHead,
    Mlp,
    clip,
    clip_grad_norm,
    exp,
    mean,
    minimum,
    square,
    tsum,
)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    steps_per_batch: int = 2048
    policy_lr: float = 3e-4
    value_lr: float = 3e-4
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    reward_scale: float = 1.0

    def validate(self):
        checks = [
            (0.0 < self.gamma <= 1.0, "gamma must be in (0, 1]"),
            (0.0 <= self.gae_lambda <= 1.0, "gae_lambda must be in [0, 1]"),
            (self.clip_eps > 0.0, "clip_eps must be > 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.minibatch_size >= 1, "minibatch_size must be >= 1"),
            (self.steps_per_batch >= 1, "steps_per_batch must be >= 1"),
            (self.policy_lr > 0 and self.value_lr > 0, "learning rates must be > 0"),
            (self.entropy_coef >= 0.0, "entropy_coef must be >= 0"),
            (self.max_grad_norm >= 0.0, "max_grad_norm must be >= 0 (0 disables clipping)"),
            (self.reward_scale > 0.0, "reward_scale must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        return self


class GaussianPolicy:
    """Mean network plus a state-independent log std."""

    def __init__(self, mean_net: Mlp, head: GaussianHead | None = None):
        self.mean_net = mean_net
        self.head = head or GaussianHead(mean_net.output_size)

    @property
    def input_size(self):
        return self.mean_net.input_size

    @property
    def action_dim(self):
        return self.mean_net.output_size

    def parameters(self):
        return self.mean_net.parameters() + [self.head.log_std]

    def named_parameters(self):
        out = dict(self.mean_net.named_parameters())
        out["log_std"] = self.head.log_std
        return out

    def mode(self, inputs) -> np.ndarray:
        return self.mean_net.predict(inputs)

    def act(self, inputs, rng: np.random.Generator) -> np.ndarray:
        return self.head.sample(self.mean_net.predict(inputs), rng)

    def log_prob(self, inputs, actions):
        return self.head.log_prob(self.mean_net.forward(inputs), actions)


@dataclass
class Transition:
    observation: np.ndarray
    latent_code: np.ndarray
    action: np.ndarray
    log_prob_old: float
    value_pred: float
    reward_env: float
    reward_post: float
    done: bool


@dataclass
class RolloutBatch:
    """Column-oriented storage for one batch of transitions, in collection order."""

    observations: np.ndarray
    latents: np.ndarray
    codes: list
    actions: np.ndarray
    env_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards_env: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray
    last_value: float = 0.0
    rewards_post: np.ndarray = None
    advantages: np.ndarray = None
    returns: np.ndarray = None
    episode_returns: list = field(default_factory=list)

    def __post_init__(self):
        if self.rewards_post is None:
            self.rewards_post = np.zeros(len(self))

    def __len__(self):
        return int(self.rewards_env.shape[0])

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.observations, self.latents], axis=1)

    def transitions(self):
        for i in range(len(self)):
            yield Transition(
                self.observations[i], self.latents[i], self.actions[i], float(self.log_probs[i]),
                float(self.values[i]), float(self.rewards_env[i]), float(self.rewards_post[i]),
                bool(self.dones[i]),
            )


def collect_rollout(policy: GaussianPolicy, value_net: Mlp, env, latent_sampler, steps: int,
                    action_rng: np.random.Generator, env_rng: np.random.Generator) -> RolloutBatch:
    """Run ``steps`` environment steps, one latent code per episode.

    ``latent_sampler()`` returns an object with ``as_vector()``.  Episodes are
    started fresh (reset seeds drawn from ``env_rng``); an episode still
    running when the budget ends is bootstrapped with the value estimate.
    """
    obs_dim = env.spec.observation_dim
    act_dim = env.spec.action_dim
    if steps == 0:
        return RolloutBatch(
            np.zeros((0, obs_dim)), np.zeros((0, policy.input_size - obs_dim)), [],
            np.zeros((0, act_dim)), np.zeros((0, act_dim)), np.zeros(0), np.zeros(0),
            np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64),
        )
    observations, latents, codes, actions, env_actions = [], [], [], [], []
    rewards, dones, episode_ids, episode_returns = [], [], [], []
    need_reset = True
    episode = -1
    obs = code = code_vec = None
    ep_return = 0.0
    for _ in range(steps):
        if need_reset:
            obs = env.reset(int(env_rng.integers(0, 2**31 - 1)))
            code = latent_sampler()
            code_vec = code.as_vector()
            episode += 1
            ep_return = 0.0
        if obs.shape[0] + code_vec.shape[0] != policy.input_size:
            raise ConfigurationError(
                f"policy input {policy.input_size} != observation {obs.shape[0]} + latent {code_vec.shape[0]}"
            )
        inp = np.concatenate([obs, code_vec])
        a = policy.act(inp, action_rng)
        res = env.step(a)
        observations.append(obs)
        latents.append(code_vec)
        codes.append(code)
        actions.append(a)
        env_actions.append(np.clip(a, -1.0, 1.0))
        rewards.append(res.reward)
        dones.append(1.0 if res.done else 0.0)
        episode_ids.append(episode)
        ep_return += res.reward
        if res.done:
            episode_returns.append(ep_return)
        obs = res.observation
        need_reset = res.done
    obs_arr = np.asarray(observations)
    lat_arr = np.asarray(latents)
    inputs = np.concatenate([obs_arr, lat_arr], axis=1)
    act_arr = np.asarray(actions)
    log_probs = policy.head.log_prob(policy.mean_net.predict(inputs), act_arr).data
    values = value_net.predict(inputs)[:, 0]
    last_value = 0.0
    if not need_reset:
        last_value = float(value_net.predict(np.concatenate([obs, code_vec]))[0])
    return RolloutBatch(
        obs_arr, lat_arr, codes, act_arr, np.asarray(env_actions), log_probs, values,
        np.asarray(rewards, dtype=np.float64), np.asarray(dones), np.asarray(episode_ids),
        last_value=last_value, episode_returns=episode_returns,
    )


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float, last_value: float = 0.0):
    """Generalized advantage estimates and value targets.

    ``dones[t]`` marks that the episode ended after step ``t`` (no bootstrap
    across it); ``last_value`` bootstraps past the final step otherwise.
    """
    r = np.ascontiguousarray(rewards, dtype=np.float64)
    v = np.ascontiguousarray(values, dtype=np.float64)
    d = np.ascontiguousarray(dones, dtype=np.float64)
    if not (r.shape == v.shape == d.shape) or r.ndim != 1:
        raise UsageError(f"compute_gae length mismatch: {r.shape}, {v.shape}, {d.shape}")
    adv = kernels.gae_kernel(r, v, d, float(last_value), float(gamma), float(gae_lambda))
    return adv, adv + v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.shape[0] < 2:
        return adv - adv.mean() if adv.shape[0] else adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, advantages, clip_eps: float):
    """Per-sample ``min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)``."""
    return minimum(ratio * advantages, clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages)


def policy_loss(policy: GaussianPolicy, inputs, actions, old_log_probs, advantages,
                clip_eps: float, entropy_coef: float = 0.0):
    ratio = exp(policy.log_prob(inputs, actions) - old_log_probs)
    loss = -mean(clipped_surrogate(ratio, advantages, clip_eps))
    if entropy_coef:
        loss = loss - entropy_coef * policy.head.entropy()
    return loss, ratio


def value_loss(value_net: Mlp, inputs, returns):
    pred = tsum(value_net.forward(inputs), axis=-1)
    return mean(square(pred - returns))


class PpoLearner:
    """Policy, value net and their optimizers; owns every PPO-side parameter."""

    def __init__(self, policy: GaussianPolicy, value_net: Mlp, config: PpoConfig):
        self.policy = policy
        self.value_net = value_net
        self.config = config
        self.policy_opt = Adam(policy.parameters(), lr=config.policy_lr)
        self.value_opt = Adam(value_net.parameters(), lr=config.value_lr)

    def update(self, batch: RolloutBatch, rng: np.random.Generator) -> dict:
        return ppo_update(self, batch, self.config, rng)


def ppo_update(learner: PpoLearner, batch: RolloutBatch, config: PpoConfig,
               rng: np.random.Generator) -> dict:
    """Epochs of shuffled minibatch updates; one Adam step per loss per minibatch."""
    if batch.advantages is None or batch.returns is None:
        raise UsageError("ppo_update needs advantages/returns; run compute_gae first")
    n = len(batch)
    inputs = batch.inputs
    adv = normalize_advantages(batch.advantages)
    policy, value_net = learner.policy, learner.value_net
    stats = {"policy_loss": [], "value_loss": [], "clip_fraction": [], "approx_kl": []}
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            try:
                pl, ratio = policy_loss(policy, inputs[idx], batch.actions[idx], batch.log_probs[idx],
                                        adv[idx], config.clip_eps, config.entropy_coef)
                pl.backward()
                clip_grad_norm(learner.policy_opt.params, config.max_grad_norm)
                learner.policy_opt.step()
                vl = value_loss(value_net, inputs[idx], batch.returns[idx])
                vl.backward()
                clip_grad_norm(learner.value_opt.params, config.max_grad_norm)
                learner.value_opt.step()
            except NonFiniteError as exc:
                raise NumericalAbort(
                    f"non-finite value during PPO update: {exc}",
                    diagnostics={"epoch": epoch, "minibatch_start": start},
                ) from exc
            r = ratio.data
            stats["policy_loss"].append(pl.item())
            stats["value_loss"].append(vl.item())
            stats["clip_fraction"].append(float(np.mean(np.abs(r - 1.0) > config.clip_eps)))
            stats["approx_kl"].append(float(np.mean((r - 1.0) - np.log(r))))
    out = {k: float(np.mean(v)) if v else 0.0 for k, v in stats.items()}
    for k in ("policy_loss", "value_loss"):
        if not np.isfinite(out[k]):
            raise NumericalAbort(f"{k} is not finite", diagnostics=out)
    return out

"""Latent-conditioned PPO with a state-action posterior reward.

Each iteration:

1. sample one latent code per episode from a fixed prior and roll out the
   policy on the concatenation ``[observation; code]``;
2. score every (state, action) with the current posterior network and turn
   that into a dense reward ``r_env + lam * r_post``;
3. run GAE + PPO on the combined reward;
4. fit the posterior to the codes of the same batch.

Rewards are always computed before the posterior is updated.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import InfoRlConfig, RunConfig
from .envs import make_env
from .errors import ConfigurationError, NonFiniteError, NumericalAbort
from .numerics import (
    LOG_2PI,
    Adam,
    Mlp,
    Tensor,
    clip_grad_norm,
    log_softmax,
    log_softmax_array,
    mean,
    square,
    take_along_last,
)
from .ppo import GaussianPolicy, PpoLearner, RolloutBatch, collect_rollout, compute_gae


# latent codes --------------------------------------------------------------


@dataclass(frozen=True)
class LatentCode:
    """Either a continuous vector or a categorical index (one-hot for networks)."""

    kind: str
    value: object
    num_classes: int = 0

    @classmethod
    def continuous(cls, values) -> "LatentCode":
        vals = tuple(float(v) for v in np.atleast_1d(values))
        # sampled codes live in [0,1]; evaluation sweeps beyond it feed raw vectors instead
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise ConfigurationError(f"continuous code {vals} outside [0, 1]")
        return cls("uniform", vals)

    @classmethod
    def categorical(cls, index: int, num_classes: int) -> "LatentCode":
        if not 0 <= index < num_classes:
            raise ConfigurationError(f"category {index} outside 0..{num_classes - 1}")
        return cls("categorical", int(index), int(num_classes))

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def as_vector(self) -> np.ndarray:
        if self.is_categorical:
            v = np.zeros(self.num_classes)
            v[self.value] = 1.0
            return v
        return np.array(self.value, dtype=np.float64)


@dataclass(frozen=True)
class LatentPrior:
    kind: str = "uniform"
    dim: int = 1
    num_classes: int = 2

    @classmethod
    def from_config(cls, info: InfoRlConfig) -> "LatentPrior":
        return cls(info.prior, info.latent_dim, info.num_classes)

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    @property
    def vector_dim(self) -> int:
        return self.num_classes if self.is_categorical else self.dim

    def entropy(self) -> float:
        # differential entropy of Uniform(0,1)^d is 0
        return math.log(self.num_classes) if self.is_categorical else 0.0

    def sample(self, rng: np.random.Generator) -> LatentCode:
        return sample_latent(self, rng)


def sample_latent(prior: LatentPrior, rng: np.random.Generator) -> LatentCode:
    if prior.is_categorical:
        return LatentCode.categorical(int(rng.integers(0, prior.num_classes)), prior.num_classes)
    return LatentCode.continuous(rng.uniform(0.0, 1.0, size=prior.dim))


def augment_observation(obs, code) -> np.ndarray:
    vec = code.as_vector() if isinstance(code, LatentCode) else np.atleast_1d(np.asarray(code, dtype=np.float64))
    return np.concatenate([np.asarray(obs, dtype=np.float64), vec])


# posterior -------------------------------------------------------------------


class PosteriorNet:
    """Predicts the latent code from a (state, action) pair."""

    def __init__(self, obs_dim: int, action_dim: int, prior: LatentPrior, hidden, rng):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.prior = prior
        self.net = Mlp([obs_dim + action_dim, *hidden, prior.vector_dim], rng)

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return self.net.named_parameters()

    def _inputs(self, observations, actions) -> np.ndarray:
        return np.concatenate([np.atleast_2d(observations), np.atleast_2d(actions)], axis=1)

    def predict(self, observations, actions) -> np.ndarray:
        return self.net.predict(self._inputs(observations, actions))

    def forward(self, observations, actions) -> Tensor:
        return self.net.forward(self._inputs(observations, actions))


def _resolve_reward_mode(prior: LatentPrior, mode: str) -> str:
    if mode == "auto":
        return "log_likelihood" if prior.is_categorical else "neg_mse"
    return mode


def posterior_reward(prediction, code: LatentCode, mode: str = "auto") -> float:
    """Score for one transition: ``-||pred - c||^2`` or ``log softmax(pred)[c]``."""
    prediction = np.asarray(prediction, dtype=np.float64).reshape(-1)
    if code.is_categorical:
        if prediction.shape[0] != code.num_classes:
            raise ConfigurationError(
                f"categorical code with {code.num_classes} classes vs prediction of size {prediction.shape[0]}"
            )
        if mode in ("auto", "log_likelihood"):
            return float(log_softmax_array(prediction)[code.value])
        diff = prediction - code.as_vector()
        return float(-np.dot(diff, diff))
    if mode == "log_likelihood":
        raise ConfigurationError("log_likelihood posterior reward needs a categorical code")
    target = code.as_vector()
    if prediction.shape != target.shape:
        raise ConfigurationError(f"continuous code of dim {target.shape[0]} vs prediction of size {prediction.shape[0]}")
    diff = prediction - target
    return float(-np.dot(diff, diff))


def batch_posterior_rewards(predictions: np.ndarray, latents: np.ndarray, prior: LatentPrior,
                            mode: str = "auto") -> np.ndarray:
    """Vectorised :func:`posterior_reward` over a batch (``latents`` are network-form vectors)."""
    mode = _resolve_reward_mode(prior, mode)
    if mode == "log_likelihood":
        idx = np.argmax(latents, axis=1)
        return log_softmax_array(predictions, axis=1)[np.arange(len(idx)), idx]
    diff = predictions - latents
    return -np.sum(diff * diff, axis=1)


def combined_reward(r_env, r_post, lam: float):
    return r_env + lam * r_post


def posterior_loss(batch: RolloutBatch, posterior: PosteriorNet, loss: str = "mse",
                   index=None) -> Tensor:
    """Mean squared error (or cross-entropy) between predicted and sampled codes."""
    obs, act, lat = batch.observations, batch.env_actions, batch.latents
    if index is not None:
        obs, act, lat = obs[index], act[index], lat[index]
    if len(lat) == 0:
        raise ConfigurationError("posterior_loss on an empty batch")
    pred = posterior.forward(obs, act)
    if loss == "cross_entropy":
        return -mean(take_along_last(log_softmax(pred), np.argmax(lat, axis=1)))
    return mean(square(pred - lat))


def mi_lower_bound(batch: RolloutBatch, posterior: PosteriorNet, prior: LatentPrior) -> float:
    """Batch estimate of ``E[log q(c | s, a)] + H(c)``.

    Categorical priors use the softmax likelihood; continuous priors use a
    unit-variance Gaussian centred at the prediction.
    """
    if len(batch) == 0:
        raise ConfigurationError("mi_lower_bound on an empty batch")
    pred = posterior.predict(batch.observations, batch.env_actions)
    if prior.is_categorical:
        idx = np.argmax(batch.latents, axis=1)
        loglik = log_softmax_array(pred, axis=1)[np.arange(len(idx)), idx]
    else:
        diff = pred - batch.latents
        loglik = -0.5 * np.sum(diff * diff, axis=1) - 0.5 * prior.dim * LOG_2PI
    return float(np.mean(loglik)) + prior.entropy()


# training ----------------------------------------------------------------------


LOG_COLUMNS = (
    "iteration",
    "env_return_mean",
    "posterior_reward_mean",
    "mi_bound",
    "policy_loss",
    "value_loss",
    "posterior_loss",
    "wall_clock_s",
)

RNG_STREAMS = (
    "init_policy",
    "init_value",
    "init_posterior",
    "env",
    "action",
    "latent",
    "ppo_shuffle",
    "posterior_shuffle",
)


def build_env(config: RunConfig):
    return make_env(config.env.name, **config.env.env_kwargs())


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: Mlp
    posterior: PosteriorNet | None
    log: list = field(default_factory=list)


class InfoRlTrainer:
    """Holds every piece of training state so runs can be checkpointed and resumed."""

    def __init__(self, config: RunConfig, env=None):
        self.config = config.validate()
        self.env = env if env is not None else build_env(config)
        self.prior = LatentPrior.from_config(config.info)
        seeds = np.random.SeedSequence(config.run.seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, seeds)}
        obs_dim = self.env.spec.observation_dim
        act_dim = self.env.spec.action_dim
        in_dim = obs_dim + self.prior.vector_dim
        net = config.net
        mean_net = Mlp([in_dim, *net.policy_hidden, act_dim], self.rngs["init_policy"],
                       output_gain=net.policy_output_gain)
        self.policy = GaussianPolicy(mean_net)
        self.value_net = Mlp([in_dim, *net.value_hidden, 1], self.rngs["init_value"])
        self.learner = PpoLearner(self.policy, self.value_net, config.ppo)
        self.posterior = None
        self.posterior_opt = None
        if config.info.enabled:
            self.posterior = PosteriorNet(obs_dim, act_dim, self.prior, net.posterior_hidden,
                                          self.rngs["init_posterior"])
            self.posterior_opt = Adam(self.posterior.parameters(), lr=config.info.posterior_lr)
        self.iteration = 0
        self.log_rows = []
        self.last_batch = None

    @property
    def result(self) -> TrainResult:
        return TrainResult(self.policy, self.value_net, self.posterior, list(self.log_rows))

    def sample_code(self) -> LatentCode:
        return sample_latent(self.prior, self.rngs["latent"])

    def collect(self, steps: int | None = None) -> RolloutBatch:
        return collect_rollout(
            self.policy, self.value_net, self.env, self.sample_code,
            self.config.ppo.steps_per_batch if steps is None else steps,
            self.rngs["action"], self.rngs["env"],
        )

    def _posterior_step(self, batch: RolloutBatch) -> float:
        info = self.config.info
        rng = self.rngs["posterior_shuffle"]
        n = len(batch)
        losses = []
        for _ in range(info.posterior_epochs):
            order = rng.permutation(n)
            for start in range(0, n, info.posterior_minibatch):
                idx = order[start:start + info.posterior_minibatch]
                loss = posterior_loss(batch, self.posterior, info.posterior_loss, idx)
                loss.backward()
                clip_grad_norm(self.posterior_opt.params, self.config.ppo.max_grad_norm)
                self.posterior_opt.step()
                losses.append(loss.item())
        return float(np.mean(losses)) if losses else float("nan")

    def step(self) -> dict:
        """One pass of the loop in the module docstring; returns the log row."""
        cfg = self.config
        t0 = time.perf_counter()
        try:
            batch = self.collect()
            mi = float("nan")
            if self.posterior is not None:
                pred = self.posterior.predict(batch.observations, batch.env_actions)
                batch.rewards_post = batch_posterior_rewards(pred, batch.latents, self.prior,
                                                             cfg.info.posterior_reward)
                mi = mi_lower_bound(batch, self.posterior, self.prior)
                rewards = combined_reward(batch.rewards_env, batch.rewards_post, cfg.info.lam)
            else:
                rewards = batch.rewards_env
            rewards = rewards * cfg.ppo.reward_scale
            batch.advantages, batch.returns = compute_gae(
                rewards, batch.values, batch.dones, cfg.ppo.gamma, cfg.ppo.gae_lambda, batch.last_value
            )
            stats = self.learner.update(batch, self.rngs["ppo_shuffle"])
            post_loss = float("nan")
            if self.posterior is not None:
                post_loss = self._posterior_step(batch)
        except NonFiniteError as exc:
            raise NumericalAbort(f"iteration {self.iteration}: {exc}", iteration=self.iteration) from exc
        except NumericalAbort as exc:
            exc.iteration = self.iteration
            raise
        returns = batch.episode_returns or [float(np.sum(batch.rewards_env))]
        row = {
            "iteration": self.iteration,
            "env_return_mean": float(np.mean(returns)),
            "posterior_reward_mean": float(np.mean(batch.rewards_post)) if self.posterior is not None else float("nan"),
            "mi_bound": mi,
            "policy_loss": stats["policy_loss"],
            "value_loss": stats["value_loss"],
            "posterior_loss": post_loss,
            "wall_clock_s": time.perf_counter() - t0 if cfg.run.record_wall_clock else 0.0,
        }
        for key in ("env_return_mean", "policy_loss", "value_loss"):
            if not math.isfinite(row[key]):
                raise NumericalAbort(f"{key} is not finite at iteration {self.iteration}",
                                     iteration=self.iteration, diagnostics=row)
        self.iteration += 1
        self.last_batch = batch
        self.log_rows.append(row)
        return row

    def run(self, iterations: int | None = None, callback=None) -> TrainResult:
        total = self.config.run.iterations if iterations is None else iterations
        while self.iteration < total:
            row = self.step()
            if callback is not None:
                callback(self, row)
        return self.result


def train_inforl(config: RunConfig, env=None, iterations: int | None = None, callback=None) -> TrainResult:
    """Train from scratch; the run is fully determined by ``config`` (seed included)."""
    return InfoRlTrainer(config, env).run(iterations, callback)

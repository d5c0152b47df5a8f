"""Latent-conditioned PPO that learns several near-optimal behaviours for one task."""

from ._accel import NUMBA_ENABLED
from .config import RunConfig, load_preset
from .envs import LineSpeedEnv, MultiGoalReachEnv, PointDirectionEnv, make_env, nearest_goal
from .inforl import InfoRlTrainer, LatentCode, LatentPrior, PosteriorNet, train_inforl

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "RunConfig",
    "load_preset",
    "LineSpeedEnv",
    "MultiGoalReachEnv",
    "PointDirectionEnv",
    "make_env",
    "nearest_goal",
    "InfoRlTrainer",
    "LatentCode",
    "LatentPrior",
    "PosteriorNet",
    "train_inforl",
]

"""Run configuration: typed dataclasses <-> flat dotted-key TOML documents.

A config file is TOML whose keys all live under one of the sections
``env``, ``net``, ``ppo``, ``info`` or ``run``, e.g.::

    env.name = "multi_goal_reach"
    env.num_goals = 2
    info.prior = "categorical"

Unknown keys and wrongly typed values are errors.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .ppo import PpoConfig


@dataclass
class EnvConfig:
    name: str = "point_direction"
    horizon: int = 100
    dt: float = 0.05
    v_max: float = 2.0
    d_threshold: float = 0.02
    num_goals: int = 2
    goal_radius: float = 1.0
    min_separation: float = 0.5
    goal_epsilon: float = 0.05
    goal_layout: str = "sectors"

    def env_kwargs(self) -> dict:
        common = {"horizon": self.horizon, "dt": self.dt, "v_max": self.v_max}
        if self.name == "line_speed":
            common["d_threshold"] = self.d_threshold
        elif self.name == "multi_goal_reach":
            common.update(num_goals=self.num_goals, goal_radius=self.goal_radius,
                          min_separation=self.min_separation, goal_epsilon=self.goal_epsilon,
                          goal_layout=self.goal_layout)
        return common


@dataclass
class NetConfig:
    policy_hidden: list = field(default_factory=lambda: [256, 256])
    value_hidden: list = field(default_factory=lambda: [256, 256])
    posterior_hidden: list = field(default_factory=lambda: [256, 256])
    policy_output_gain: float = 0.01


@dataclass
class InfoRlConfig:
    enabled: bool = True
    lam: float = 1.0
    prior: str = "uniform"
    latent_dim: int = 1
    num_classes: int = 2
    posterior_lr: float = 3e-4
    posterior_epochs: int = 5
    posterior_minibatch: int = 64
    posterior_reward: str = "auto"
    posterior_loss: str = "mse"

    def validate(self):
        if self.lam < 0:
            raise ConfigurationError("info.lam must be >= 0")
        if self.prior not in ("uniform", "categorical"):
            raise ConfigurationError(f"info.prior must be 'uniform' or 'categorical', got {self.prior!r}")
        if self.latent_dim < 1 or self.num_classes < 1:
            raise ConfigurationError("info.latent_dim and info.num_classes must be >= 1")
        if self.posterior_reward not in ("auto", "neg_mse", "log_likelihood"):
            raise ConfigurationError(f"unknown info.posterior_reward {self.posterior_reward!r}")
        if self.posterior_loss not in ("mse", "cross_entropy"):
            raise ConfigurationError(f"unknown info.posterior_loss {self.posterior_loss!r}")
        if self.posterior_loss == "cross_entropy" and self.prior != "categorical":
            raise ConfigurationError("info.posterior_loss = 'cross_entropy' needs a categorical prior")
        if self.posterior_reward == "log_likelihood" and self.prior != "categorical":
            raise ConfigurationError("info.posterior_reward = 'log_likelihood' needs a categorical prior")
        if self.posterior_lr <= 0 or self.posterior_epochs < 0 or self.posterior_minibatch < 1:
            raise ConfigurationError("invalid posterior optimisation settings")
        return self


@dataclass
class RunSettings:
    seed: int = 0
    iterations: int = 100
    checkpoint_every: int = 10
    record_wall_clock: bool = False


SECTIONS = {
    "env": EnvConfig,
    "net": NetConfig,
    "ppo": PpoConfig,
    "info": InfoRlConfig,
    "run": RunSettings,
}


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    info: InfoRlConfig = field(default_factory=InfoRlConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def validate(self) -> "RunConfig":
        from .envs import ENV_NAMES

        if self.env.name not in ENV_NAMES:
            raise ConfigurationError(f"env.name must be one of {ENV_NAMES}, got {self.env.name!r}")
        if self.env.horizon < 1 or not self.env.dt > 0:
            raise ConfigurationError("env.horizon must be >= 1 and env.dt > 0")
        for key in ("policy_hidden", "value_hidden", "posterior_hidden"):
            sizes = getattr(self.net, key)
            if not sizes or any(s < 1 for s in sizes):
                raise ConfigurationError(f"net.{key} must be a non-empty list of positive ints")
        self.ppo.validate()
        self.info.validate()
        if self.run.iterations < 0 or self.run.checkpoint_every < 0:
            raise ConfigurationError("run.iterations and run.checkpoint_every must be >= 0")
        return self

    # flat <-> structured ------------------------------------------------------

    def to_flat(self) -> dict:
        out = {}
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                out[f"{section}.{f.name}"] = list(value) if isinstance(value, list) else value
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        cfg = cls()
        for key, value in flat.items():
            cfg.set(key, value)
        return cfg.validate()

    def set(self, key: str, value):
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigurationError(f"unknown config key {key!r}")
        obj = getattr(self, section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if name not in fields:
            raise ConfigurationError(f"unknown config key {key!r}")
        default = getattr(SECTIONS[section](), name)
        setattr(obj, name, _coerce(key, value, default))

    def with_overrides(self, assignments) -> "RunConfig":
        cfg = RunConfig.from_flat(self.to_flat())
        for item in assignments or ():
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigurationError(f"override {item!r} is not of the form key=value")
            cfg.set(key.strip(), _parse_value(raw.strip()))
        return cfg.validate()

    # text form ------------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        current = None
        for key, value in self.to_flat().items():
            section = key.split(".", 1)[0]
            if current is not None and section != current:
                lines.append("")
            current = section
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"config is not valid TOML: {exc}") from exc
        return cls.from_flat(_flatten(doc))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.dumps())


def _flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in doc.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, list):
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return list(value)
    raise ConfigurationError(
        f"config key {key!r} expects {type(default).__name__}, got {value!r}"
    )


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise ConfigurationError("non-finite float in config")
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigurationError(f"cannot serialise {value!r}")


PRESET_DIR = Path(__file__).parent / "presets"


def preset_path(name: str) -> Path:
    path = PRESET_DIR / (name if name.endswith(".cfg") else name + ".cfg")
    if not path.exists():
        raise ConfigurationError(f"no preset named {name!r}")
    return path


def load_preset(name: str) -> RunConfig:
    return RunConfig.load(preset_path(name))

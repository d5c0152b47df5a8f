"""Versioned JSON checkpoints holding everything needed for a bit-exact resume.

Floats go through ``json`` (shortest round-trip ``repr``), so every
parameter, optimizer moment and RNG state survives save/load unchanged,
and save -> load -> save yields the same bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import CheckpointError, ConfigurationError

FORMAT = "inforl-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    iteration: int
    params: dict  # "policy.layer0.weight" -> ndarray
    optimizers: dict = field(default_factory=dict)  # name -> {"step_count", "first_moment", "second_moment"}
    rng: dict = field(default_factory=dict)  # stream name -> bit generator state
    log: list = field(default_factory=list)
    version: int = VERSION


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _block(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _unblock(block: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in block["shape"])
        data = np.asarray(block["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed parameter block {name!r}: {exc}") from exc


def to_document(ckpt: Checkpoint) -> dict:
    return {
        "format": FORMAT,
        "version": ckpt.version,
        "config": ckpt.config.to_flat(),
        "iteration": ckpt.iteration,
        "params": {name: _block(arr) for name, arr in ckpt.params.items()},
        "optimizers": {
            name: {
                "step_count": st["step_count"],
                "first_moment": [_block(m) for m in st["first_moment"]],
                "second_moment": [_block(v) for v in st["second_moment"]],
            }
            for name, st in ckpt.optimizers.items()
        },
        "rng": ckpt.rng,
        "log": ckpt.log,
    }


def dumps(ckpt: Checkpoint) -> str:
    return json.dumps(to_document(ckpt), sort_keys=True, separators=(",", ":")) + "\n"


def loads(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON (corrupt or truncated): {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not an inforl checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')!r} is not supported (expected {VERSION})")
    try:
        config = RunConfig.from_flat(doc["config"])
        optimizers = {
            name: {
                "step_count": int(st["step_count"]),
                "first_moment": [_unblock(b, name) for b in st["first_moment"]],
                "second_moment": [_unblock(b, name) for b in st["second_moment"]],
            }
            for name, st in doc["optimizers"].items()
        }
        return Checkpoint(
            config=config,
            iteration=int(doc["iteration"]),
            params={name: _unblock(b, name) for name, b in doc["params"].items()},
            optimizers=optimizers,
            rng=doc["rng"],
            log=doc["log"],
            version=doc["version"],
        )
    except (KeyError, TypeError, AttributeError, ConfigurationError) as exc:
        raise CheckpointError(f"checkpoint is missing or has invalid fields: {exc}") from exc


def save_checkpoint(path, ckpt: Checkpoint):
    atomic_write_text(path, dumps(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(text)


# trainer <-> checkpoint -------------------------------------------------------


def _named_modules(trainer) -> dict:
    out = {"policy": trainer.policy, "value": trainer.value_net}
    if trainer.posterior is not None:
        out["posterior"] = trainer.posterior
    return out


def _optimizers(trainer) -> dict:
    out = {"policy": trainer.learner.policy_opt, "value": trainer.learner.value_opt}
    if trainer.posterior_opt is not None:
        out["posterior"] = trainer.posterior_opt
    return out


def capture(trainer) -> Checkpoint:
    params = {}
    for prefix, module in _named_modules(trainer).items():
        for name, tensor in module.named_parameters().items():
            params[f"{prefix}.{name}"] = tensor.data.copy()
    optimizers = {
        name: {
            "step_count": opt.state.step_count,
            "first_moment": [m.copy() for m in opt.state.first_moment],
            "second_moment": [v.copy() for v in opt.state.second_moment],
        }
        for name, opt in _optimizers(trainer).items()
    }
    rng = {name: g.bit_generator.state for name, g in trainer.rngs.items()}
    return Checkpoint(trainer.config, trainer.iteration, params, optimizers, rng,
                      [dict(row) for row in trainer.log_rows])


def restore(ckpt: Checkpoint, config: RunConfig | None = None):
    """Rebuild a trainer from a checkpoint; ``config`` may only differ in ``run.*`` keys."""
    from .inforl import InfoRlTrainer

    cfg = ckpt.config
    if config is not None:
        a, b = cfg.to_flat(), config.to_flat()
        changed = [k for k in a if a[k] != b[k] and not k.startswith("run.")]
        if changed:
            raise ConfigurationError(f"resume cannot change {', '.join(changed)}")
        cfg = config
    trainer = InfoRlTrainer(cfg)
    for prefix, module in _named_modules(trainer).items():
        for name, tensor in module.named_parameters().items():
            key = f"{prefix}.{name}"
            if key not in ckpt.params:
                raise CheckpointError(f"checkpoint lacks parameter {key}")
            arr = ckpt.params[key]
            if arr.shape != tensor.data.shape:
                raise CheckpointError(f"shape mismatch for {key}: {arr.shape} vs {tensor.data.shape}")
            # in place: keeps the memory layout from init, which BLAS summation order depends on
            tensor.data[...] = arr
    for name, opt in _optimizers(trainer).items():
        st = ckpt.optimizers.get(name)
        if st is None:
            raise CheckpointError(f"checkpoint lacks optimizer state {name}")
        if len(st["first_moment"]) != len(opt.params):
            raise CheckpointError(f"optimizer state {name} does not match the model")
        opt.state.step_count = st["step_count"]
        opt.state.first_moment = [m.copy() for m in st["first_moment"]]
        opt.state.second_moment = [v.copy() for v in st["second_moment"]]
    for name, gen in trainer.rngs.items():
        if name not in ckpt.rng:
            raise CheckpointError(f"checkpoint lacks rng stream {name}")
        gen.bit_generator.state = ckpt.rng[name]
    trainer.iteration = ckpt.iteration
    trainer.log_rows = [dict(row) for row in ckpt.log]
    return trainer

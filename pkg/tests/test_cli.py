import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from inforl_lab import checkpoint as ckpt_io
from inforl_lab.cli import main
from inforl_lab.config import RunConfig, load_preset
from inforl_lab.errors import CheckpointError, ConfigurationError, NumericalAbort
from inforl_lab.inforl import LOG_COLUMNS, InfoRlTrainer

TINY = """
env.name = "{env}"
env.horizon = 25
net.policy_hidden = [8]
net.value_hidden = [8]
net.posterior_hidden = [8]
ppo.steps_per_batch = 100
ppo.minibatch_size = 50
ppo.epochs = 2
info.prior = "{prior}"
info.num_classes = 2
run.iterations = {iters}
run.checkpoint_every = 2
"""


def write_cfg(tmp_path, env="point_direction", prior="uniform", iters=2, name="tiny.cfg"):
    path = tmp_path / name
    path.write_text(TINY.format(env=env, prior=prior, iters=iters))
    return path


def train(tmp_path, out="run", **kw):
    cfg = write_cfg(tmp_path, **kw)
    code = main(["-q", "train", "--config", str(cfg), "--out", str(tmp_path / out)])
    assert code == 0
    return tmp_path / out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# train / resume ------------------------------------------------------------------


def test_train_smoke(tmp_path):
    run = train(tmp_path, iters=1)
    rows = read_csv(run / "train_log.csv")
    assert rows[0] == list(LOG_COLUMNS)
    assert len(rows) == 2 and rows[1][0] == "0"
    assert (run / "checkpoints" / "final.json").exists()
    assert RunConfig.load(run / "config.cfg").env.horizon == 25


def test_train_logs_are_byte_identical(tmp_path):
    a = train(tmp_path, out="a", iters=3)
    b = train(tmp_path, out="b", iters=3)
    assert (a / "train_log.csv").read_bytes() == (b / "train_log.csv").read_bytes()
    assert (a / "checkpoints" / "final.json").read_bytes() == (b / "checkpoints" / "final.json").read_bytes()


def test_seed_flag_changes_run(tmp_path):
    cfg = write_cfg(tmp_path, iters=1)
    assert main(["-q", "train", "--config", str(cfg), "--out", str(tmp_path / "s0")]) == 0
    assert main(["-q", "train", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "s7")]) == 0
    assert RunConfig.load(tmp_path / "s7" / "config.cfg").run.seed == 7
    assert (tmp_path / "s0" / "train_log.csv").read_bytes() != (tmp_path / "s7" / "train_log.csv").read_bytes()


@pytest.mark.parametrize("env,prior", [("point_direction", "uniform"), ("multi_goal_reach", "categorical")])
def test_resume_matches_uninterrupted(tmp_path, env, prior):
    full = train(tmp_path, out="full", env=env, prior=prior, iters=4)
    ck = full / "checkpoints" / "iter_000002.json"
    code = main(["-q", "resume", "--checkpoint", str(ck), "--out", str(tmp_path / "resumed"),
                 "--set", "run.iterations=4"])
    assert code == 0
    resumed = tmp_path / "resumed"
    assert (full / "train_log.csv").read_bytes() == (resumed / "train_log.csv").read_bytes()
    a = ckpt_io.load_checkpoint(full / "checkpoints" / "final.json")
    b = ckpt_io.load_checkpoint(resumed / "checkpoints" / "final.json")
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert read_csv(resumed / "train_log.csv")[3][0] == "2"


def test_resume_rejects_non_run_overrides(tmp_path, capsys):
    run = train(tmp_path)
    code = main(["resume", "--checkpoint", str(run / "checkpoints" / "final.json"), "--set", "info.lam=3"])
    assert code == 1
    assert "run.*" in capsys.readouterr().err


def test_unknown_config_key_is_named(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x"), "--set", "ppo.learning_rate=1"])
    assert code == 1
    assert "ppo.learning_rate" in capsys.readouterr().err
    bad = tmp_path / "bad.cfg"
    bad.write_text('env.name = "point_direction"\nenv.horizn = 3\n')
    assert main(["train", "--config", str(bad)]) == 1
    assert "env.horizn" in capsys.readouterr().err


def test_bad_usage_exit_codes(tmp_path):
    assert main([]) == 1
    assert main(["train"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["--help"]) == 0


def test_numerical_abort_exit_code_keeps_checkpoint(tmp_path, monkeypatch):
    real_step = InfoRlTrainer.step

    def flaky(self):
        if self.iteration == 2:
            raise NumericalAbort("synthetic NaN", iteration=2)
        return real_step(self)

    monkeypatch.setattr(InfoRlTrainer, "step", flaky)
    cfg = write_cfg(tmp_path, iters=4)
    assert main(["-q", "train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    assert (tmp_path / "r" / "checkpoints" / "iter_000002.json").exists()
    assert not (tmp_path / "r" / "checkpoints" / "final.json").exists()
    assert len(read_csv(tmp_path / "r" / "train_log.csv")) == 3


# checkpoints ---------------------------------------------------------------------


def test_checkpoint_round_trip_bytes(tmp_path):
    run = train(tmp_path, prior="categorical", env="multi_goal_reach")
    path = run / "checkpoints" / "final.json"
    ck = ckpt_io.load_checkpoint(path)
    again = tmp_path / "again.json"
    ckpt_io.save_checkpoint(again, ck)
    assert again.read_bytes() == path.read_bytes()
    trainer = ckpt_io.restore(ck)
    assert ckpt_io.dumps(ckpt_io.capture(trainer)) == path.read_text()


def test_checkpoint_faults(tmp_path):
    run = train(tmp_path)
    text = (run / "checkpoints" / "final.json").read_text()
    trunc = tmp_path / "trunc.json"
    trunc.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointError):
        ckpt_io.load_checkpoint(trunc)
    with pytest.raises(CheckpointError):
        ckpt_io.loads(text.replace('"version":1', '"version":99'))
    with pytest.raises(CheckpointError):
        ckpt_io.loads('{"format": "something-else"}')
    with pytest.raises(CheckpointError):
        ckpt_io.load_checkpoint(tmp_path / "nope.json")
    assert main(["eval-sweep", "--checkpoint", str(trunc)]) == 1


def test_restore_refuses_changed_hyperparameters(tmp_path):
    run = train(tmp_path)
    ck = ckpt_io.load_checkpoint(run / "checkpoints" / "final.json")
    with pytest.raises(ConfigurationError):
        ckpt_io.restore(ck, ck.config.with_overrides(["info.lam=2.0"]))
    ckpt_io.restore(ck, ck.config.with_overrides(["run.iterations=9"]))


# evaluation commands ---------------------------------------------------------------


def _svg_ok(path):
    text = path.read_text()
    assert text.startswith('<?xml version="1.0" encoding="UTF-8"?>')
    root = ET.fromstring(text.encode())
    assert root.tag.endswith("svg")


def test_eval_sweep_outputs(tmp_path, capsys):
    run = train(tmp_path)
    out = tmp_path / "sweep"
    assert main(["eval-sweep", "--checkpoint", str(run / "checkpoints" / "final.json"), "--out", str(out),
                 "--episodes", "2"]) == 0
    agg = read_csv(out / "sweep.csv")
    assert agg[0] == ["code", "episodes", "metric_mean", "metric_std", "env_return_mean"]
    assert len(agg) == 32
    eps = read_csv(out / "sweep_episodes.csv")
    assert eps[0] == ["code", "episode", "metric", "final_x", "final_y", "total_env_reward"]
    assert len(eps) == 1 + 31 * 2
    _svg_ok(out / "sweep.svg")
    assert "spearman=" in capsys.readouterr().out


def test_eval_sweep_speed_on_line_speed(tmp_path):
    run = train(tmp_path, env="line_speed")
    out = tmp_path / "sweep"
    assert main(["-q", "eval-sweep", "--checkpoint", str(run / "checkpoints" / "final.json"), "--out", str(out),
                 "--code-min", "0", "--code-max", "1", "--code-step", "0.5", "--episodes", "1"]) == 0
    assert len(read_csv(out / "sweep.csv")) == 4


def test_eval_confusion_outputs(tmp_path, capsys):
    run = train(tmp_path, env="multi_goal_reach", prior="categorical")
    out = tmp_path / "conf"
    assert main(["eval-confusion", "--checkpoint", str(run / "checkpoints" / "final.json"), "--out", str(out)]) == 0
    rows = read_csv(out / "confusion.csv")
    assert rows[0] == ["code_index", "goal_index", "count"]
    counts = np.zeros((2, 2), int)
    for i, j, c in rows[1:]:
        counts[int(i), int(j)] = int(c)
    assert np.array_equal(counts.sum(axis=1), [100, 100])
    _svg_ok(out / "confusion.svg")
    assert "matched_diagonal_mass=" in capsys.readouterr().out


def test_protocol_variant_mismatch(tmp_path, capsys):
    cont = train(tmp_path, out="c")
    cat = train(tmp_path, out="k", env="multi_goal_reach", prior="categorical")
    assert main(["eval-confusion", "--checkpoint", str(cont / "checkpoints" / "final.json")]) == 1
    assert main(["eval-sweep", "--checkpoint", str(cat / "checkpoints" / "final.json")]) == 1
    assert main(["eval-schedule", "--checkpoint", str(cat / "checkpoints" / "final.json")]) == 1
    assert "categorical" in capsys.readouterr().err


def test_eval_schedule_outputs(tmp_path):
    run = train(tmp_path, iters=1)
    out = tmp_path / "sched"
    assert main(["-q", "eval-schedule", "--checkpoint", str(run / "checkpoints" / "final.json"), "--out", str(out),
                 "--code-start", "-0.25", "0.5", "--switch-every", "10"]) == 0
    rows = read_csv(out / "trajectory_00.csv")
    assert rows[0] == ["step", "x", "y", "code", "action_0", "action_1", "reward"]
    assert float(rows[1][3]) == -0.25 and float(rows[11][3]) == pytest.approx(-0.2)
    assert (out / "trajectory_01.csv").exists()
    _svg_ok(out / "schedule.svg")


def test_dump_trajectory(tmp_path):
    run = train(tmp_path, env="multi_goal_reach", prior="categorical", iters=1)
    out = tmp_path / "traj"
    ck = str(run / "checkpoints" / "final.json")
    assert main(["-q", "dump-trajectory", "--checkpoint", ck, "--code", "1", "--out", str(out)]) == 0
    rows = read_csv(out / "trajectory_code1.csv")
    assert rows[0] == ["step", "x", "y", "code", "action_0", "action_1", "reward"]
    assert {r[3] for r in rows[1:]} == {"1"}
    _svg_ok(out / "trajectory_code1.svg")
    assert main(["-q", "dump-trajectory", "--checkpoint", ck, "--code", "2", "--out", str(out)]) == 1
    assert main(["-q", "dump-trajectory", "--checkpoint", ck, "--code", "0.5", "--out", str(out)]) == 1


def test_evaluation_is_repeatable(tmp_path):
    run = train(tmp_path, env="multi_goal_reach", prior="categorical")
    ck = str(run / "checkpoints" / "final.json")
    for d in ("a", "b"):
        assert main(["-q", "eval-confusion", "--checkpoint", ck, "--out", str(tmp_path / d), "--episodes", "5"]) == 0
    assert (tmp_path / "a" / "confusion.csv").read_bytes() == (tmp_path / "b" / "confusion.csv").read_bytes()


# config --------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["point_direction", "line_speed", "multi_goal_2", "multi_goal_3", "multi_goal_4"])
def test_presets_load_and_round_trip(name):
    cfg = load_preset(name)
    assert RunConfig.loads(cfg.dumps()) == cfg


def test_config_type_errors():
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides(["env.horizon=2.5"])
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides(["info.lam=-1"])
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides(["info.prior=gaussian"])
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides(["noequals"])
    with pytest.raises(ConfigurationError):
        RunConfig.loads("env.name = [unclosed")
    cfg = RunConfig().with_overrides(["ppo.gamma=1", "net.policy_hidden=[4, 4]"])
    assert cfg.ppo.gamma == 1.0 and isinstance(cfg.ppo.gamma, float)

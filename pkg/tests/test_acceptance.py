"""Acceptance criteria 1-9, one PASS/FAIL line each (shown in the pytest summary).

Criteria 5-8 train the bundled presets for three seeds each (about 20-30
minutes on one core); they are marked ``slow`` and run by default.
"""

import functools
import math
import statistics
import time

import numpy as np
import pytest

from inforl_lab import kernels
from inforl_lab.cli import main
from inforl_lab.config import load_preset
from inforl_lab.envs import LineSpeedEnv, PointDirectionEnv
from inforl_lab.evaluation import code_metric_correlation, confusion_eval, latent_sweep
from inforl_lab.inforl import InfoRlTrainer
from inforl_lab.ppo import compute_gae

from test_numerics import max_rel_grad_error
from test_ppo import gae_oracle

SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def trained(preset: str, seed: int) -> InfoRlTrainer:
    trainer = InfoRlTrainer(load_preset(preset).with_overrides([f"run.seed={seed}"]))
    trainer.run()
    return trainer


def env_steps(trainer) -> int:
    return trainer.iteration * trainer.config.ppo.steps_per_batch


# 1-4: exact oracles ------------------------------------------------------------------


def test_criterion_1_gradient_correctness(acceptance_report):
    t0 = time.perf_counter()
    worst = max(max_rel_grad_error(1000 + i) for i in range(100))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10.0
    acceptance_report(1, ok, f"100 random MLP/loss instances, max rel err {worst:.2e} (< 1e-4), {elapsed:.2f}s (< 10s)")
    assert ok


def test_criterion_2_reward_equations(acceptance_report):
    checks = {
        "(0,0)->(0.1,0) dt=0.05 gives 2.0": kernels.point_direction_reward(0.0, 0.0, 0.1, 0.0, 0.05) == 2.0,
        "(1,0)->(0.9,0) norm decrease gives 0": kernels.point_direction_reward(1.0, 0.0, 0.9, 0.0, 0.05) == 0.0,
        "zero step gives 0": kernels.point_direction_reward(0.3, 0.4, 0.3, 0.4, 0.05) == 0.0,
        "dx=0.2 > 0.05 gives 1": kernels.line_speed_reward(0.0, 0.2, 0.05) == 1.0,
        "dx=0.05 = threshold gives 0": kernels.line_speed_reward(0.0, 0.05, 0.05) == 0.0,
    }
    env = PointDirectionEnv()
    env.reset(0)
    checks["env step (1,0) from origin gives 2.0"] = env.step([1.0, 0.0]).reward == 2.0
    env.pos = np.array([1.0, 0.0])
    checks["env step toward origin gives 0"] = env.step([-1.0, 0.0]).reward == 0.0
    line = LineSpeedEnv(d_threshold=0.05)
    line.reset(0)
    r = line.step([0.5])
    checks["env dx exactly 0.05 gives 0"] = r.info["dx"] == 0.05 and r.reward == 0.0
    checks["env negative action gives 0"] = line.step([-1.0]).reward == 0.0
    failed = [k for k, v in checks.items() if not v]
    acceptance_report(2, not failed, f"{len(checks) - len(failed)}/{len(checks)} exact equalities"
                      + (f", failed: {failed}" if failed else ""))
    assert not failed


def test_criterion_3_gae_oracle(acceptance_report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = (rng.random(n) < 0.15).astype(float)
        gamma, lam, last = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0), rng.normal()
        adv, _ = compute_gae(r, v, d, gamma, lam, last)
        worst = max(worst, float(np.max(np.abs(adv - gae_oracle(r, v, d, gamma, lam, last)))))
    acceptance_report(3, worst < 1e-10, f"1000 sequences (len <= 20), max abs err {worst:.2e} (< 1e-10)")
    assert worst < 1e-10


def test_criterion_4_lambda_zero_is_plain_ppo(acceptance_report):
    results = []
    for preset in ("point_direction", "multi_goal_2"):
        base = load_preset(preset).with_overrides(["run.seed=11"])
        a = InfoRlTrainer(base.with_overrides(["info.lam=0.0"]))
        b = InfoRlTrainer(base.with_overrides(["info.enabled=false"]))
        a.run(5)
        b.run(5)
        same = all(np.array_equal(x.data, y.data) for x, y in zip(a.policy.parameters(), b.policy.parameters()))
        results.append((preset, same))
    ok = all(s for _, s in results)
    acceptance_report(4, ok, "after 5 iterations, bit-identical policy params: "
                      + ", ".join(f"{p}={s}" for p, s in results))
    assert ok


# 5-8: training runs ----------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_multi_goal_confusion(acceptance_report):
    lines, ok = [], True
    for k, bar in ((2, 0.80), (3, 0.70)):
        masses = []
        for seed in SEEDS:
            tr = trained(f"multi_goal_{k}", seed)
            assert env_steps(tr) <= 500_000
            cm = confusion_eval(tr.policy, tr.env, k, episodes_per_code=100)
            masses.append(cm.matched_diagonal_mass())
        med = statistics.median(masses)
        ok &= med >= bar
        lines.append(f"K={k} median {med:.3f} (>= {bar}) seeds {[round(m, 3) for m in masses]}")
    acceptance_report(5, ok, "matched diagonal mass, 100 episodes/code, <= 500k steps: " + "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_6_direction_sweep(acceptance_report):
    spans, rhos = [], []
    for seed in SEEDS:
        tr = trained("point_direction", seed)
        sweep = latent_sweep(tr.policy, tr.env, "angle", 0.0, 1.0, 0.05, episodes_per_code=10)
        spans.append(sweep.span())
        rhos.append(abs(code_metric_correlation(sweep)))
    span, rho = statistics.median(spans), statistics.median(rhos)
    ok = span >= 90.0 and rho >= 0.8
    acceptance_report(6, ok, f"median angle span {span:.1f} deg (>= 90), median |spearman| {rho:.3f} (>= 0.8); "
                      f"spans {[round(s, 1) for s in spans]} |rho| {[round(r, 3) for r in rhos]}")
    assert ok


def speed_profile(trainer):
    """Speed ratio over reliably rewarded codes in [0,1] and relative spread of per-code returns."""
    sweep = latent_sweep(trainer.policy, trainer.env, "speed", 0.0, 1.0, 0.05, episodes_per_code=10)
    speeds, returns = sweep.metric_means(), sweep.return_means()
    # a code is reliably rewarded when its return is within 10% of the best code's
    good = returns >= 0.9 * returns.max()
    ratio = float(speeds[good].max() / speeds[good].min()) if speeds[good].min() > 0 else math.inf
    spread = float((returns.max() - returns.min()) / returns.max())
    return ratio, spread


@pytest.mark.slow
def test_criterion_7_speed_sweep(acceptance_report):
    ratios, spreads = [], []
    for seed in SEEDS:
        ratio, spread = speed_profile(trained("line_speed", seed))
        ratios.append(ratio)
        spreads.append(spread)
    ratio, spread = statistics.median(ratios), statistics.median(spreads)
    ok = ratio >= 2.0 and spread <= 0.10
    acceptance_report(7, ok, f"median fastest/slowest speed {ratio:.2f} (>= 2), median return spread "
                      f"{spread:.3f} (<= 0.10); ratios {[round(r, 2) for r in ratios]} spreads {[round(s, 3) for s in spreads]}")
    assert ok


@pytest.mark.slow
def test_criterion_8_mi_bound(acceptance_report):
    problems, checked = [], 0
    runs = [(f"multi_goal_{k}", k) for k in (2, 3)] + [("point_direction", None), ("line_speed", None)]
    for preset, k in runs:
        for seed in SEEDS:
            mi = np.array([row["mi_bound"] for row in trained(preset, seed).log_rows])
            checked += 1
            if k is not None and np.any(mi > math.log(k) + 1e-9):
                problems.append(f"{preset}/s{seed} exceeds log K")
            if not mi[-10:].mean() > mi[:10].mean():
                problems.append(f"{preset}/s{seed} final {mi[-10:].mean():.3f} <= first {mi[:10].mean():.3f}")
    acceptance_report(8, not problems, f"{checked} runs: bound <= log K every iteration (categorical), "
                      f"final-10 mean > first-10 mean" + (f"; failures {problems}" if problems else ""))
    assert not problems


# 9: reproducibility --------------------------------------------------------------


def test_criterion_9_reproducibility(acceptance_report, tmp_path):
    args = ["-q", "train", "--config", "multi_goal_2", "--set", "run.iterations=6", "--set", "run.checkpoint_every=3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    same_log = (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()
    assert main(["-q", "resume", "--checkpoint", str(tmp_path / "a" / "checkpoints" / "iter_000003.json"),
                 "--out", str(tmp_path / "r")]) == 0
    from inforl_lab.checkpoint import load_checkpoint

    full = load_checkpoint(tmp_path / "a" / "checkpoints" / "final.json")
    resumed = load_checkpoint(tmp_path / "r" / "checkpoints" / "final.json")
    same_params = full.params.keys() == resumed.params.keys() and all(
        np.array_equal(full.params[n], resumed.params[n]) for n in full.params)
    same_resumed_log = (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "r" / "train_log.csv").read_bytes()
    ok = same_log and same_params and same_resumed_log
    acceptance_report(9, ok, f"repeat run logs byte-identical={same_log}; resume from iter 3 -> params bit-exact="
                      f"{same_params}, log identical={same_resumed_log}")
    assert ok

"""Time the hot kernels and one training iteration with and without numba.

    python benchmarks/bench_kernels.py            # both modes, side by side
    python benchmarks/bench_kernels.py --worker   # one mode (set INFORL_DISABLE_NUMBA yourself)

Each mode runs in its own interpreter because the flag is read at import.
Results are also checked for bitwise agreement between the two modes.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat=5, number=1):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            out = fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times), out


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=np.float64)).tobytes())
    return h.hexdigest()[:16]


def worker():
    from inforl_lab import NUMBA_ENABLED, kernels
    from inforl_lab.config import RunConfig
    from inforl_lab.envs import MultiGoalReachEnv, PointDirectionEnv
    from inforl_lab.inforl import InfoRlTrainer
    from inforl_lab.ppo import compute_gae

    rng = np.random.default_rng(0)
    n = 2048
    r, v = rng.normal(size=n), rng.normal(size=n)
    d = (rng.random(n) < 0.01).astype(np.float64)
    compute_gae(r, v, d, 0.99, 0.95)  # compile outside the timer
    results = {}

    t, (adv, _) = _best(lambda: compute_gae(r, v, d, 0.99, 0.95), number=20)
    results["gae_2048"] = (t, _digest(adv))

    pts = rng.normal(size=(4000, 4))

    def rewards():
        return [kernels.point_direction_reward(a, b, c, e, 0.05) for a, b, c, e in pts]

    rewards()
    t, out = _best(rewards)
    results["point_reward_x4000"] = (t, _digest(out))

    def env_steps(env_cls, **kw):
        env = env_cls(**kw)
        acts = np.random.default_rng(1).uniform(-1, 1, size=(2000, 2))

        def run():
            env.reset(3)
            out = []
            for a in acts:
                res = env.step(a)
                out.append(res.reward)
                if res.done:
                    env.reset(3)
            return out

        run()
        return run

    t, out = _best(env_steps(PointDirectionEnv))
    results["point_env_2000_steps"] = (t, _digest(out))
    t, out = _best(env_steps(MultiGoalReachEnv, num_goals=3))
    results["reach_env_2000_steps"] = (t, _digest(out))

    cfg = RunConfig().with_overrides([
        'env.name="multi_goal_reach"', 'info.prior="categorical"', "info.num_classes=2",
        "net.policy_hidden=[64,64]", "net.value_hidden=[64,64]", "net.posterior_hidden=[64,64]",
        "ppo.minibatch_size=256",
    ])
    InfoRlTrainer(cfg).step()

    def iteration():
        tr = InfoRlTrainer(cfg)
        tr.step()
        return [p.data for p in tr.policy.parameters()]

    t, params = _best(iteration, repeat=3)
    results["train_iteration_2048"] = (t, _digest(*params))
    json.dump({"numba": NUMBA_ENABLED, "results": results}, sys.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--worker", action="store_true")
    args = ap.parse_args()
    if args.worker:
        worker()
        return
    runs = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, INFORL_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--worker"], env=env, capture_output=True,
                              text=True, check=True)
        runs[label] = json.loads(proc.stdout)
    if not runs["numba"]["numba"]:
        print("numba is not installed; only the numpy path was measured")
    a, b = runs["numba"]["results"], runs["numpy"]["results"]
    print(f"{'case':<24}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>9}  same bits")
    for case in a:
        ta, tb = a[case][0] * 1e3, b[case][0] * 1e3
        print(f"{case:<24}{ta:>12.3f}{tb:>12.3f}{tb / ta:>8.1f}x  {a[case][1] == b[case][1]}")


if __name__ == "__main__":
    main()

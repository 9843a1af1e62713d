"""
Learning a narrow peak next to a wide one
=========================================

The bandit pays 0.6 around a = -1 (wide bump) and 1.0 around a = 1.5 (narrow
bump).  A single Gaussian tends to settle on the wide bump.  A Bit-RNF
policy starts with its two components on either side and can move its
weight onto the narrow one.  After training both policies are evaluated
with their analytic mean and with sampled actions.

Takes a minute or two: ``python3 demos/03_bandit.py [seed]``.
"""
import sys
import time

import numpy as np

from bitrnf.policy import ConditionerConfig, conditioner_forward
from bitrnf.rl import A2CTrainer, TrainConfig, bandit_reward, evaluate, make_env

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
env = make_env("bimodal_bandit")

grid = np.linspace(-3, 3, 60001)
print(f"best action on a grid: {grid[np.argmax(bandit_reward(grid))]:.3f}, "
      f"reward {bandit_reward(grid).max():.4f}\n")

for kind in ("bit_rnf", "normal"):
    pcfg = ConditionerConfig(env.state_dim, env.action_dim, kind=kind, tau=0.8)
    tcfg = TrainConfig(steps=30000, rollout=16, lr=5e-4, seed=seed)
    t0 = time.perf_counter()
    trainer = A2CTrainer(env, pcfg, tcfg).train()
    secs = time.perf_counter() - t0

    params = trainer.policy_params.arrays()
    dist = conditioner_forward(np.zeros((1, 2)), params, pcfg)
    print(f"{kind}: trained for {trainer.step_count} steps in {secs:.0f}s")
    print("  component locations:", np.round(dist.loc[0, :, 0], 3))
    print("  component weights:  ", np.round(dist.weights[0], 3))
    print("  analytic mean action:", np.round(dist.mean()[0, 0], 3))
    for mode in ("mean", "sample"):
        rep = evaluate(params, pcfg, env, 100, mode, np.random.default_rng([seed, 1]))
        print(f"  eval {mode:6s}: average {rep['mean']:.3f}, worst {rep['min']:.3f}")
    print()

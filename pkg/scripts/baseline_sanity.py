"""Baseline SAC on the distractor-free reacher, scored against the references.

usage: python scripts/baseline_sanity.py [--steps N] [--seeds 0,1,2,3]
"""

import argparse

from cip.agent import AgentConfig
from cip.experiments import DESK_SEEDS, DESK_STEPS, normalized_score, reference_returns, run_one

p = argparse.ArgumentParser()
p.add_argument("--steps", type=int, default=DESK_STEPS)
p.add_argument("--seeds", default=",".join(map(str, DESK_SEEDS)))
args = p.parse_args()

ref = reference_returns("reacher")
cfg = AgentConfig(total_steps=args.steps)
for seed in (int(s) for s in args.seeds.split(",")):
    r = run_one("reacher", "sac", seed, cfg)
    score = normalized_score(r["final20"], ref)
    print(f"seed={seed} final20={r['final20']:8.2f} normalized={score:6.1f} ({r['wallclock_s']:.0f}s)",
          flush=True)

"""CIP vs SAC and ablations on the distractor and dead-actuator reachers.

usage: python scripts/directional.py [--steps N] [--seeds 0,1,2,3]
"""

import argparse
import json

from cip.agent import AgentConfig
from cip.experiments import (
    DESK_SEEDS,
    DESK_STEPS,
    DIRECTIONAL_ENVS,
    DIRECTIONAL_MODES,
    directional,
    directional_verdict,
)

p = argparse.ArgumentParser()
p.add_argument("--steps", type=int, default=DESK_STEPS)
p.add_argument("--seeds", default=",".join(map(str, DESK_SEEDS)))
p.add_argument("--envs", default=",".join(DIRECTIONAL_ENVS))
p.add_argument("--modes", default=",".join(DIRECTIONAL_MODES))
args = p.parse_args()

table = directional(args.envs.split(","), [int(s) for s in args.seeds.split(",")],
                    args.modes.split(","), AgentConfig(total_steps=args.steps),
                    log=lambda m: print(m, flush=True))
print(json.dumps(directional_verdict(table), indent=2))

"""Random and scripted-controller reference returns for every preset.

These anchor the normalized score (0 = random, 100 = scripted).
"""

from cip.envs import PRESETS
from cip.experiments import reference_returns

for name in PRESETS:
    ref = reference_returns(name)
    print(f"{name:20s} random={ref['random']:9.2f} scripted={ref['scripted']:9.2f}")

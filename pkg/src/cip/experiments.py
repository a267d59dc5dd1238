"""Desk-scale experiment runners shared by scripts/ and the acceptance suite.

Results are cached as JSON keyed by the run description and a hash of the
package source, so an unchanged codebase never retrains.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .agent import ABLATIONS, AgentConfig, return_auc, train
from .envs import make_env_spec, rollout_returns

DEFAULT_CACHE = Path(os.environ.get("CIP_CACHE_DIR", Path.home() / ".cache" / "cip"))

# Step budget for the desk-scale comparisons: 30k steps x 32 runs fits a
# 3 h single-core budget; 100k does not.
DESK_STEPS = 30_000
DESK_SEEDS = (0, 1, 2, 3)
DIRECTIONAL_ENVS = ("distractor_reacher", "dead_actuator")
DIRECTIONAL_MODES = ("cip", "sac", "no_aug", "no_emp")


def desk_config(**overrides) -> AgentConfig:
    return AgentConfig(total_steps=DESK_STEPS, **overrides)


def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def reference_returns(env: str, episodes: int = 20, seed: int = 12345) -> dict:
    spec = make_env_spec(env)
    return {
        "random": float(rollout_returns(spec, "random", episodes, seed).mean()),
        "scripted": float(rollout_returns(spec, "scripted", episodes, seed).mean()),
    }


def normalized_score(ret: float, ref: dict) -> float:
    """100 at the scripted controller, 0 at the random policy; clipped below at 0."""
    span = ref["scripted"] - ref["random"]
    return max(0.0, 100.0 * (ret - ref["random"]) / span)


def optimality_gap(scores) -> float:
    return float(np.mean([max(0.0, 1.0 - s / 100.0) for s in scores]))


def run_one(env: str, mode: str, seed: int, config: AgentConfig,
            cache_dir: Path | None = DEFAULT_CACHE) -> dict:
    cfg = dataclasses.replace(ABLATIONS[mode](config), seed=seed)
    desc = {"env": env, "mode": mode, "config": cfg.to_dict(), "source": source_digest()}
    key = hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()[:24]
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{key}.json"
        if path.exists():
            return json.loads(path.read_text())
    res = train(cfg, make_env_spec(env))
    returns = [r["return"] for r in res.records]
    out = {
        **desc,
        "returns": returns,
        "success": [r["success"] for r in res.records],
        "auc": return_auc(res.records),
        "final20": float(np.mean(returns[-20:])) if returns else float("nan"),
        "omega": res.state.omega.tolist(),
        "uncontrollable": list(res.state.u_set.indices) if res.state.u_set else None,
        "augmented": res.augmented,
        "refits": [{"step": sn.step, "uncontrollable": sn.doc["state_uncontrollable"],
                    "omega": sn.doc["omega"]} for sn in res.snapshots],
        "wallclock_s": res.records[-1]["wallclock_s"] if res.records else 0.0,
    }
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(out))
        tmp.replace(path)
    return out


def directional(envs, seeds, modes, config: AgentConfig, cache_dir=DEFAULT_CACHE,
                log=print) -> dict:
    """AUC table ``{env: {mode: [auc per seed]}}`` plus the raw runs."""
    table: dict = {}
    for env in envs:
        table[env] = {}
        for mode in modes:
            aucs = []
            for seed in seeds:
                r = run_one(env, mode, seed, config, cache_dir)
                aucs.append(r["auc"])
                if log:
                    log(f"{env:20s} {mode:7s} seed={seed} auc={r['auc']:9.2f} "
                        f"final20={r['final20']:8.2f} ({r['wallclock_s']:.0f}s)")
            table[env][mode] = aucs
    return table


def directional_verdict(table: dict) -> dict:
    """Per env: CIP >= SAC seed count, and whether each ablation's mean AUC <= CIP's."""
    out = {}
    for env, row in table.items():
        cip = np.asarray(row["cip"])
        v = {"cip_mean": float(cip.mean())}
        if "sac" in row:
            v["wins_vs_sac"] = int((cip >= np.asarray(row["sac"])).sum())
            v["sac_mean"] = float(np.mean(row["sac"]))
        for ab in ("no_aug", "no_emp"):
            if ab in row:
                v[f"{ab}_mean"] = float(np.mean(row[ab]))
                v[f"{ab}_le_cip"] = bool(np.mean(row[ab]) <= cip.mean())
        out[env] = v
    return out

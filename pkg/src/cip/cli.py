"""Command-line entry point: ``cip {train,discover,augment,semgen,eval}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import METRIC_COLUMNS, AgentConfig, TrainingError, train
from .augment import augment_batch
from .causal import (
    DEFAULT_THETA,
    DegenerateInputError,
    fit_action_reward_weights,
    matrices_from_json,
    matrices_to_json,
    save_matrices,
    uncontrollable_set,
)
from .envs import (
    PRESETS,
    CyclicGraphError,
    MalformedRowError,
    SemSpec,
    TransitionBatch,
    make_env_spec,
    read_jsonl,
    sem_generate,
    write_jsonl,
    write_sem_csv,
)
from .experiments import normalized_score, reference_returns, source_digest
from .numkit import save_checkpoint

log = logging.getLogger("cip")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config and manifest


def load_config(path: str | Path | None) -> AgentConfig:
    if path is None:
        return AgentConfig()
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{p}: config must be a JSON object")
    return config_from_dict(doc, str(p))


def config_from_dict(doc: dict, where: str = "config") -> AgentConfig:
    fields = {f.name: f for f in dataclasses.fields(AgentConfig)}
    defaults = AgentConfig()
    for k, v in doc.items():
        if k not in fields:
            raise CliError(f"{where}: unknown field {k!r}")
        want = type(getattr(defaults, k))
        ok = {
            bool: isinstance(v, bool),
            int: isinstance(v, int) and not isinstance(v, bool),
            float: isinstance(v, (int, float)) and not isinstance(v, bool),
            tuple: isinstance(v, list) and all(isinstance(h, int) and h > 0 for h in v),
        }[want]
        if not ok:
            raise CliError(f"{where}: field {k!r} has invalid value {v!r}")
    try:
        return AgentConfig(**doc)
    except ValueError as exc:
        raise CliError(f"{where}: {exc}") from exc


@dataclass
class RunManifest:
    env: str
    config: dict
    seeds: list[int]
    baseline: bool
    content_hash: str
    layout: dict[str, dict[str, str]] = field(default_factory=dict)
    references: dict[str, float] = field(default_factory=dict)

    @staticmethod
    def hash_for(env: str, config: dict, baseline: bool) -> str:
        doc = json.dumps({"env": env, "config": config, "baseline": baseline,
                          "source": source_digest()}, sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# helpers


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise CliError(f"invalid seed list {text!r}") from exc
    if not seeds or len(set(seeds)) != len(seeds):
        raise CliError(f"seed list must be nonempty and unique: {text!r}")
    return seeds


def _check_output(path: Path, overwrite: bool) -> None:
    if path.exists() and not overwrite:
        raise CliError(f"{path} exists; pass --overwrite to replace it")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(path: Path, records: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def read_metrics_csv(path: Path) -> list[dict]:
    """Strict reader: fixed header, no ragged rows, every cell numeric."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != METRIC_COLUMNS:
        raise CliError(f"{path}: unexpected header")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRIC_COLUMNS):
            raise CliError(f"{path}:{i}: expected {len(METRIC_COLUMNS)} fields, got {len(row)}")
        try:
            out.append({c: float(v) for c, v in zip(METRIC_COLUMNS, row)})
        except ValueError as exc:
            raise CliError(f"{path}:{i}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, total_steps=args.steps)
    if args.env not in PRESETS:
        raise CliError(f"unknown environment {args.env!r}; choose from {sorted(PRESETS)}")
    seeds = parse_seeds(args.seeds)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise CliError(f"{out} is not empty; pass --overwrite to replace it")
    spec = make_env_spec(args.env)
    run_cfg = cfg.baseline() if args.baseline else cfg
    manifest = RunManifest(
        args.env, run_cfg.to_dict(), seeds, bool(args.baseline),
        RunManifest.hash_for(args.env, run_cfg.to_dict(), bool(args.baseline)),
        references=reference_returns(args.env),
    )
    for seed in seeds:
        d = out / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        seed_cfg = dataclasses.replace(run_cfg, seed=seed)
        try:
            res = train(seed_cfg, spec)
        except TrainingError as exc:
            raise CliError(f"seed {seed}: training failed at {exc}") from exc
        files = {"metrics": d / "metrics.csv", "matrices": d / "matrices.json",
                 "checkpoint": d / "checkpoint.bin"}
        write_metrics_csv(files["metrics"], res.records)
        final = res.snapshots[-1].doc if res.snapshots else None
        save_matrices(files["matrices"], {
            "final": final,
            "snapshots": [{"step": s.step, "digest": s.digest} for s in res.snapshots],
        })
        save_checkpoint(files["checkpoint"], res.state.networks())
        manifest.layout[str(seed)] = {k: str(v.relative_to(out)) for k, v in files.items()}
        read_metrics_csv(files["metrics"])
        print(f"seed {seed}: {len(res.records)} episodes -> {d}")
    manifest.save(out / "manifest.json")
    for files in manifest.layout.values():
        for rel in files.values():
            if not (out / rel).is_file():
                raise CliError(f"missing output {out / rel}")
    return 0


def cmd_discover(args) -> int:
    out = Path(args.out)
    _check_output(out, args.overwrite)
    try:
        batch = read_jsonl(args.transitions)
    except FileNotFoundError as exc:
        raise CliError(f"transitions file not found: {args.transitions}") from exc
    except MalformedRowError as exc:
        raise CliError(str(exc)) from exc
    min_n = 0 if args.allow_small else args.min_samples
    try:
        m, w = fit_action_reward_weights(batch, min_samples=min_n)
    except DegenerateInputError as exc:
        msg = str(exc)
        if "at least" in msg and not args.allow_small:
            msg += " (pass --allow-small to fit anyway)"
        raise CliError(msg) from exc
    doc = matrices_to_json(m, w, args.theta)
    save_matrices(out, doc)
    matrices_from_json(json.loads(out.read_text()))
    print(f"fitted on {m.fitted_on} transitions; uncontrollable = {doc['uncontrollable']}")
    return 0


def cmd_augment(args) -> int:
    out = Path(args.out)
    _check_output(out, args.overwrite)
    try:
        batch = read_jsonl(args.transitions)
        m, _, theta = matrices_from_json(json.loads(Path(args.matrices).read_text()))
    except FileNotFoundError as exc:
        raise CliError(f"file not found: {exc.filename}") from exc
    except (MalformedRowError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(str(exc)) from exc
    if m.d_S != batch.s.shape[1] or m.d_A != batch.a.shape[1]:
        raise CliError("matrices do not match the transition dimensions")
    if args.theta is not None:
        theta = args.theta
    res = augment_batch(batch, uncontrollable_set(m, theta), args.rate, args.seed)
    full = TransitionBatch.concat([batch, res.synthetic]) if res.added else batch
    write_jsonl(out, full, with_synthetic=True)
    read_jsonl(out)
    print(f"sources={res.sources} skipped={res.skipped} added={res.added}")
    return 0


def cmd_semgen(args) -> int:
    out = Path(args.out)
    _check_output(out, args.overwrite)
    try:
        spec = SemSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except FileNotFoundError as exc:
        raise CliError(f"SEM spec not found: {args.spec}") from exc
    except CyclicGraphError as exc:
        raise CliError(f"cyclic SEM: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid SEM spec: {exc}") from exc
    if args.n < 0:
        raise CliError("n must be >= 0")
    X = sem_generate(spec, args.n, args.seed)
    write_sem_csv(out, X, spec.B.shape[0])
    return 0


EVAL_COLUMNS = ("task", "seed", "final_return", "normalized_score", "optimality_gap")


def cmd_eval(args) -> int:
    root = Path(args.metrics_dir)
    files = sorted(root.glob("seed_*/metrics.csv")) if root.is_dir() else []
    if not files:
        raise CliError(f"no metrics files under {root}")
    man_path = root / "manifest.json"
    if man_path.is_file():
        man = RunManifest.load(man_path)
        env, refs = man.env, man.references or reference_returns(man.env)
    else:
        if args.env is None:
            raise CliError(f"{root} has no manifest.json; pass --env")
        env, refs = args.env, reference_returns(args.env)
    rows = []
    for f in files:
        recs = read_metrics_csv(f)
        if not recs:
            raise CliError(f"{f}: no episodes")
        final = float(np.mean([r["return"] for r in recs[-args.last:]]))
        score = normalized_score(final, refs)
        rows.append((env, f.parent.name.removeprefix("seed_"), final, score,
                     max(0.0, 1.0 - score / 100.0)))
    mean_score = float(np.mean([r[3] for r in rows]))
    gap = float(np.mean([r[4] for r in rows]))
    rows.append((env, "all", float(np.mean([r[2] for r in rows])), mean_score, gap))
    out = Path(args.out) if args.out else root / "summary.csv"
    _check_output(out, args.overwrite or out == root / "summary.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    print(f"{env}: normalized score {mean_score:.1f}, optimality gap {gap:.3f}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cip", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--out", required=out_required, help="output file or directory")
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    t = sub.add_parser("train", help="train CIP (or the SAC baseline) on one env")
    t.add_argument("--config", help="JSON document with AgentConfig fields")
    t.add_argument("--env", default="distractor_reacher", help="environment preset")
    t.add_argument("--seeds", "--seed", default="0", help="comma-separated, e.g. 0,1,2,3")
    t.add_argument("--steps", type=int, help="override total_steps")
    t.add_argument("--baseline", action="store_true", help="run the SAC baseline")
    common(t)
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("discover", help="fit reward-row causal matrices from JSONL transitions")
    d.add_argument("transitions", help="JSON-lines transition dump")
    d.add_argument("--theta", type=float, default=DEFAULT_THETA, help="threshold on standardized coefficients")
    d.add_argument("--min-samples", type=int, default=AgentConfig().causal_sample_size)
    d.add_argument("--allow-small", action="store_true", help="accept fewer than --min-samples rows")
    common(d)
    d.set_defaults(fn=cmd_discover)

    a = sub.add_parser("augment", help="counterfactually augment JSONL transitions")
    a.add_argument("transitions", help="JSON-lines transition dump")
    a.add_argument("--matrices", required=True, help="output of `cip discover`")
    a.add_argument("--rate", type=float, default=0.5, help="fraction of real rows used as sources")
    a.add_argument("--theta", type=float, help="defaults to the theta stored with the matrices")
    a.add_argument("--seed", type=int, default=0)
    common(a)
    a.set_defaults(fn=cmd_augment)

    s = sub.add_parser("semgen", help="sample a linear SEM to CSV")
    s.add_argument("spec", help="SEM spec JSON {B, noise, scale}")
    s.add_argument("--n", type=int, required=True, help="rows to draw")
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(fn=cmd_semgen)

    e = sub.add_parser("eval", help="normalized score and optimality gap of a train output dir")
    e.add_argument("metrics_dir", help="output directory of `cip train`")
    e.add_argument("--env", help="needed only without a manifest")
    e.add_argument("--last", type=int, default=20, help="episodes averaged per seed")
    common(e, out_required=False)
    e.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

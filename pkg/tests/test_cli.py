import csv
import json

import numpy as np
import pytest

from cip.agent import METRIC_COLUMNS
from cip.cli import RunManifest, main, read_metrics_csv, write_metrics_csv
from cip.envs import SemSpec, TransitionBatch, write_jsonl
from cip.experiments import reference_returns

TINY = {"hidden": [8, 8], "batch_size": 16, "warmup_steps": 100, "causal_sample_size": 300,
        "local_buffer_size": 600, "causal_update_interval": 200, "total_steps": 600}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_missing_config(tmp_path, capsys):
    code = run("train", "--config", tmp_path / "nope.json", "--out", tmp_path / "o")
    assert code != 0 and "nope.json" in capsys.readouterr().err


@pytest.mark.parametrize("doc,field", [({"gamma": 1.5}, "gamma"), ({"alpha": "x"}, "alpha"),
                                       ({"lerning_rate": 1}, "lerning_rate")])
def test_invalid_config_field(tmp_path, capsys, doc, field):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert run("train", "--config", p, "--out", tmp_path / "o") != 0
    assert field in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("train")
    (d / "cfg.json").write_text(json.dumps(TINY))
    assert run("train", "--config", d / "cfg.json", "--env", "distractor_reacher",
               "--seeds", "0,1", "--out", d / "out") == 0
    return d


def test_train_layout_and_manifest(trained_dir):
    out = trained_dir / "out"
    for s in (0, 1):
        for f in ("metrics.csv", "matrices.json", "checkpoint.bin"):
            assert (out / f"seed_{s}" / f).is_file()
    man = RunManifest.load(out / "manifest.json")
    assert man.seeds == [0, 1] and man.env == "distractor_reacher" and not man.baseline
    assert RunManifest.from_json(man.to_json()) == man
    assert man.config["total_steps"] == 600 and set(man.layout) == {"0", "1"}
    recs = read_metrics_csv(out / "seed_0" / "metrics.csv")
    assert len(recs) == 3
    doc = json.loads((out / "seed_0" / "matrices.json").read_text())
    assert doc["final"]["uncontrollable"] is not None and doc["snapshots"]


def _primary(out):
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file():
            if p.name == "metrics.csv":
                rows = list(csv.reader(p.open()))
                k = rows[0].index("wallclock_s")
                files[p.name + str(p.parent)] = [r[:k] + r[k + 1:] for r in rows]
            else:
                files[p.name + str(p.parent)] = p.read_bytes()
    return files


def test_train_idempotent_with_overwrite(trained_dir, capsys):
    out = trained_dir / "out"
    before = _primary(out)
    assert run("train", "--config", trained_dir / "cfg.json", "--seeds", "0,1", "--out", out) != 0
    assert "--overwrite" in capsys.readouterr().err
    assert run("train", "--config", trained_dir / "cfg.json", "--env", "distractor_reacher",
               "--seeds", "0,1", "--out", out, "--overwrite") == 0
    assert _primary(out) == before


def test_baseline_flag_same_schema(trained_dir):
    out = trained_dir / "base"
    assert run("train", "--config", trained_dir / "cfg.json", "--seeds", "0", "--out", out,
               "--baseline") == 0
    with open(out / "seed_0" / "metrics.csv") as fh:
        assert next(csv.reader(fh)) == list(METRIC_COLUMNS)
    assert RunManifest.load(out / "manifest.json").baseline
    assert json.loads((out / "seed_0" / "matrices.json").read_text())["final"] is None


# --- discover / augment --------------------------------------------------------


def sem_transitions(n=10_000, seed=0, const_r=False):
    """s1..s3, a1..a2 roots; r = 0.8 s1 - 0.6 a1 + 0.5 s2 + noise."""
    p = 6
    B = np.zeros((p, p))
    B[5, 0], B[5, 3], B[5, 1] = 0.8, -0.6, 0.5
    spec = SemSpec(B, ["uniform"] * p, [0.5] * p, reward_index=5)
    from cip.envs import sem_generate

    X = sem_generate(spec, n, seed)
    r = np.full(n, 1.0) if const_r else X[:, 5]
    return TransitionBatch(X[:, :3], X[:, 3:5], r, X[:, :3] * 0.5, np.zeros(n, dtype=bool)), B


def test_discover_matches_sem(tmp_path):
    b, B = sem_transitions()
    write_jsonl(tmp_path / "t.jsonl", b)
    assert run("discover", tmp_path / "t.jsonl", "--out", tmp_path / "m.json") == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    np.testing.assert_allclose(doc["m_s_to_r"], B[5, :3], atol=0.07)
    np.testing.assert_allclose(doc["m_a_to_r"], B[5, 3:5], atol=0.07)
    assert doc["uncontrollable"] == [2]
    assert run("discover", tmp_path / "t.jsonl", "--out", tmp_path / "m0.json", "--theta", 0) == 0
    assert json.loads((tmp_path / "m0.json").read_text())["uncontrollable"] == []


def test_discover_constant_reward(tmp_path, capsys):
    b, _ = sem_transitions(n=500, const_r=True)
    write_jsonl(tmp_path / "t.jsonl", b)
    assert run("discover", tmp_path / "t.jsonl", "--out", tmp_path / "m.json", "--allow-small") != 0
    err = capsys.readouterr().err
    assert "'r'" in err and "line" not in err and ":" not in err.split("'r'")[1]


def test_discover_small_and_malformed(tmp_path, capsys):
    b, _ = sem_transitions(n=500)
    write_jsonl(tmp_path / "t.jsonl", b)
    assert run("discover", tmp_path / "t.jsonl", "--out", tmp_path / "m.json") != 0
    assert "--allow-small" in capsys.readouterr().err
    assert run("discover", tmp_path / "t.jsonl", "--out", tmp_path / "m.json", "--allow-small") == 0
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    lines[6] = "{not json"
    (tmp_path / "bad.jsonl").write_text("\n".join(lines))
    assert run("discover", tmp_path / "bad.jsonl", "--out", tmp_path / "m2.json", "--allow-small") != 0
    assert ":7:" in capsys.readouterr().err


def test_augment_command(tmp_path, capsys):
    b, _ = sem_transitions(n=2000)
    write_jsonl(tmp_path / "t.jsonl", b)
    run("discover", tmp_path / "t.jsonl", "--out", tmp_path / "m.json", "--allow-small")
    capsys.readouterr()
    assert run("augment", tmp_path / "t.jsonl", "--matrices", tmp_path / "m.json",
               "--out", tmp_path / "aug.jsonl", "--rate", 0.5) == 0
    summary = capsys.readouterr().out
    assert "sources=1000" in summary
    added = int(summary.split("added=")[1])
    rows = [json.loads(x) for x in (tmp_path / "aug.jsonl").read_text().splitlines()]
    assert len(rows) == 2000 + added and sum(r["synthetic"] for r in rows) == added
    src_s = {tuple(r["s"][:2]) for r in rows[:2000]}
    for r in rows[2000:]:  # only the uncontrollable dim s3 may differ from a real row
        assert tuple(r["s"][:2]) in src_s
    first = (tmp_path / "aug.jsonl").read_bytes()
    assert run("augment", tmp_path / "t.jsonl", "--matrices", tmp_path / "m.json",
               "--out", tmp_path / "aug.jsonl", "--rate", 0.5, "--overwrite") == 0
    assert (tmp_path / "aug.jsonl").read_bytes() == first


# --- semgen --------------------------------------------------------------------


def write_spec(path, cyclic=False):
    B = [[0, 0.9 if cyclic else 0, 0], [0.7, 0, 0], [0, -0.5, 0]]
    path.write_text(json.dumps({"B": B, "noise": ["uniform"] * 3, "scale": [1, 1, 1]}))


def test_semgen(tmp_path):
    write_spec(tmp_path / "s.json")
    assert run("semgen", tmp_path / "s.json", "--n", 0, "--out", tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_text() == "x1,x2,x3\n"
    for name in ("a.csv", "b.csv"):
        assert run("semgen", tmp_path / "s.json", "--n", 100, "--seed", 4, "--out", tmp_path / name) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.reader((tmp_path / "a.csv").open()))
    assert len(rows) == 101 and all(len(r) == 3 for r in rows)


def test_semgen_cyclic(tmp_path, capsys):
    write_spec(tmp_path / "c.json", cyclic=True)
    assert run("semgen", tmp_path / "c.json", "--n", 10, "--out", tmp_path / "x.csv") != 0
    assert "cycl" in capsys.readouterr().err


# --- eval ----------------------------------------------------------------------


def fake_run(root, env, returns_by_seed):
    refs = reference_returns(env)
    for seed, ret in returns_by_seed.items():
        d = root / f"seed_{seed}"
        d.mkdir(parents=True)
        recs = [{c: 0.0 for c in METRIC_COLUMNS} | {"return": ret, "episode": i} for i in range(25)]
        write_metrics_csv(d / "metrics.csv", recs)
    RunManifest(env, {}, list(returns_by_seed), False, "x", {}, refs).save(root / "manifest.json")
    return refs


def summary(root):
    rows = list(csv.DictReader((root / "summary.csv").open()))
    return rows[-1]


@pytest.mark.parametrize("where,score,gap", [("scripted", 100.0, 0.0), ("random", 0.0, 1.0),
                                             ("mid", 50.0, 0.5)])
def test_eval_definitions(tmp_path, where, score, gap):
    refs = reference_returns("reacher")
    ret = {"scripted": refs["scripted"], "random": refs["random"],
           "mid": 0.5 * (refs["scripted"] + refs["random"])}[where]
    fake_run(tmp_path, "reacher", {0: ret, 1: ret})
    assert run("eval", tmp_path) == 0
    row = summary(tmp_path)
    assert row["seed"] == "all"
    assert abs(float(row["normalized_score"]) - score) < 1e-9
    assert abs(float(row["optimality_gap"]) - gap) < 1e-9


def test_eval_empty_dir(tmp_path):
    assert run("eval", tmp_path) != 0


def test_strict_reader_rejects_ragged(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(",".join(METRIC_COLUMNS) + "\n1,2,3\n")
    with pytest.raises(Exception, match="expected"):
        read_metrics_csv(p)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cip.envs import (
    PRESETS,
    CyclicGraphError,
    EnvSpec,
    MalformedRowError,
    PointMassEnv,
    SemSpec,
    TransitionBatch,
    collect_random,
    make_env_spec,
    random_sem,
    read_jsonl,
    read_sem_csv,
    reward_fn,
    rollout_returns,
    sem_generate,
    sem_reward_mask,
    uncontrollable_ground_truth,
    write_jsonl,
    write_sem_csv,
)


def test_presets_dimensions():
    dr = PRESETS["distractor_reacher"]
    assert (dr.d_S, dr.d_A) == (12, 2)
    assert uncontrollable_ground_truth(dr) == list(range(4, 12))
    da = PRESETS["dead_actuator"]
    assert da.ground_truth_a_mask.tolist() == [1, 1, 0, 0, 0, 0]
    assert PRESETS["force_reacher"].d_S == 14


def test_spec_validation():
    with pytest.raises(ValueError):
        EnvSpec(distractor_ar_coeff=1.0)
    with pytest.raises(ValueError):
        EnvSpec(kinematics="teleport")
    with pytest.raises(KeyError):
        make_env_spec("nope")


@given(st.integers(0, 10_000), st.sampled_from(sorted(PRESETS)))
def test_reward_ignores_masked_dims(seed, name):
    spec = PRESETS[name]
    rng = np.random.default_rng(seed)
    s = PointMassEnv(spec, seed).reset()
    a = rng.uniform(-1, 1, spec.d_A)
    s2, a2 = s.copy(), a.copy()
    s2[spec.ground_truth_s_mask == 0] = rng.standard_normal(int((spec.ground_truth_s_mask == 0).sum()))
    a2[spec.ground_truth_a_mask == 0] = rng.uniform(-1, 1, int((spec.ground_truth_a_mask == 0).sum()))
    assert reward_fn(spec, s, a) == reward_fn(spec, s2, a2)


def test_step_reward_matches_reward_fn_and_clamps():
    spec = PRESETS["distractor_reacher"]
    env = PointMassEnv(spec, 3)
    s = env.reset()
    a = np.array([2.0, -0.5])
    s2, r, done = env.step(a)
    assert r == reward_fn(spec, s, np.clip(a, -1, 1))
    assert env.clamped_actions == 1 and not done


def test_episode_horizon():
    spec = EnvSpec(episode_horizon=5)
    env = PointMassEnv(spec, 0)
    env.reset()
    flags = [env.step(np.zeros(2))[2] for _ in range(5)]
    assert flags == [False] * 4 + [True]


def test_env_determinism():
    a = collect_random(PRESETS["distractor_reacher"], 300, 7)
    b = collect_random(PRESETS["distractor_reacher"], 300, 7)
    assert a.s.tobytes() == b.s.tobytes() and a.r.tobytes() == b.r.tobytes()


def test_distractor_stationary_variance():
    spec = PRESETS["distractor_reacher"]
    data = collect_random(spec, 5000, 1)
    d = data.s[:, spec.distractor_slice]
    c, rho = spec.distractor_noise, spec.distractor_ar_coeff
    expected = (c * c / 3.0) / (1 - rho * rho)  # AR(1) with U[-c, c] innovations
    np.testing.assert_allclose(d.var(axis=0), expected, rtol=0.15)


def test_scripted_beats_random():
    for name in ("reacher", "dead_actuator", "force_reacher"):
        spec = PRESETS[name]
        assert rollout_returns(spec, "scripted", 5).mean() > rollout_returns(spec, "random", 5).mean() + 50


def test_jsonl_roundtrip(tmp_path):
    b = collect_random(PRESETS["reacher"], 20, 0)
    b.synthetic[3] = True
    write_jsonl(tmp_path / "t.jsonl", b, with_synthetic=True)
    back = read_jsonl(tmp_path / "t.jsonl")
    for f in ("s", "a", "r", "s_next", "done", "synthetic"):
        assert np.array_equal(getattr(b, f), getattr(back, f))


def test_jsonl_malformed_line_number(tmp_path):
    b = collect_random(PRESETS["reacher"], 3, 0)
    write_jsonl(tmp_path / "t.jsonl", b)
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    lines[1] = '{"s": [1, 2], "a": [0]}'
    (tmp_path / "t.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRowError, match=r":2:"):
        read_jsonl(tmp_path / "t.jsonl")


def test_transition_batch_indexing():
    b = collect_random(PRESETS["reacher"], 10, 0)
    t = b[4]
    assert np.array_equal(t.s, b.s[4]) and t.r == b.r[4]
    again = TransitionBatch.from_transitions([b[i] for i in range(10)])
    assert np.array_equal(again.s_next, b.s_next)
    assert b.variables().shape == (10, b.s.shape[1] + b.a.shape[1] + 1)


# --- SEM -----------------------------------------------------------------------


def chain_spec():
    B = np.zeros((3, 3))
    B[1, 0] = 0.8
    B[2, 1] = -0.6
    return SemSpec(B, ["uniform", "laplace", "uniform"], [1.0, 0.5, 0.7], reward_index=2)


def test_sem_cycle_rejected():
    B = np.array([[0, 0.5], [0.5, 0]])
    with pytest.raises(CyclicGraphError):
        SemSpec(B, ["uniform"] * 2, [1.0, 1.0])


def test_sem_moments():
    spec = chain_spec()
    X = sem_generate(spec, 200_000, 0)
    # closed-form variances of the chain
    v0 = 1.0
    v1 = 0.64 * v0 + 0.25
    v2 = 0.36 * v1 + 0.49
    np.testing.assert_allclose(X.var(axis=0), [v0, v1, v2], rtol=0.02)
    assert sem_reward_mask(spec).tolist() == [0, 1, 0]


def test_sem_deterministic_and_csv(tmp_path):
    spec = chain_spec()
    write_sem_csv(tmp_path / "a.csv", sem_generate(spec, 50, 3))
    write_sem_csv(tmp_path / "b.csv", sem_generate(spec, 50, 3))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_sem_csv(tmp_path / "a.csv")
    assert back.tobytes() == sem_generate(spec, 50, 3).tobytes()


def test_sem_header_only(tmp_path):
    spec = chain_spec()
    write_sem_csv(tmp_path / "e.csv", sem_generate(spec, 0, 0), spec.p)
    assert (tmp_path / "e.csv").read_text() == "x1,x2,x3\n"


@given(st.integers(0, 10_000), st.integers(2, 8))
def test_random_sem_is_acyclic_and_bounded(seed, p):
    spec = random_sem(p, np.random.default_rng(seed))
    nz = np.abs(spec.B[spec.B != 0])
    assert np.all((nz >= 0.5) & (nz <= 1.0))
    pos = {j: k for k, j in enumerate(spec.order)}
    for j, k in zip(*np.nonzero(spec.B)):
        assert pos[k] < pos[j]
    assert SemSpec.from_dict(spec.to_dict()).B.tobytes() == spec.B.tobytes()

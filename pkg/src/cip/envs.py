"""Synthetic factored MDPs with known reward structure, and a linear SEM sampler.

The point-mass reacher state is laid out as ``[pos(2), goal(2), distractors(k)]``
for velocity kinematics, or ``[pos(2), vel(2), goal(2), distractors(k)]`` for
force kinematics. Reward is ``-||pos' - goal||`` on the successor position, so
it depends on the task dims and on the live action dims only. Distractors are
independent AR(1) processes with uniform innovations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class CyclicGraphError(ValueError):
    pass


class MalformedRowError(ValueError):
    pass


# ---------------------------------------------------------------------------
# transitions


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    synthetic: bool = False


@dataclass
class TransitionBatch:
    s: np.ndarray  # (n, d_S)
    a: np.ndarray  # (n, d_A)
    r: np.ndarray  # (n,)
    s_next: np.ndarray
    done: np.ndarray
    synthetic: np.ndarray = None

    def __post_init__(self):
        if self.synthetic is None:
            self.synthetic = np.zeros(len(self.r), dtype=bool)

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]),
            bool(self.synthetic[i]),
        )

    def take(self, idx) -> "TransitionBatch":
        return TransitionBatch(
            self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx],
            self.synthetic[idx],
        )

    @classmethod
    def from_transitions(cls, items: Sequence[Transition]) -> "TransitionBatch":
        return cls(
            np.array([t.s for t in items], dtype=np.float64),
            np.array([t.a for t in items], dtype=np.float64),
            np.array([t.r for t in items], dtype=np.float64),
            np.array([t.s_next for t in items], dtype=np.float64),
            np.array([t.done for t in items], dtype=bool),
            np.array([t.synthetic for t in items], dtype=bool),
        )

    @classmethod
    def concat(cls, parts: Sequence["TransitionBatch"]) -> "TransitionBatch":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("s", "a", "r", "s_next", "done", "synthetic")))

    def variables(self) -> np.ndarray:
        """Columns ``[s^1..s^dS, a^1..a^dA, r]`` as used for causal discovery."""
        return np.column_stack([self.s, self.a, self.r])


TRAJECTORY_FORMAT_VERSION = 1


def write_jsonl(path: str | Path, batch: TransitionBatch, with_synthetic: bool = False) -> None:
    with open(path, "w") as fh:
        for i in range(len(batch)):
            row = {
                "s": batch.s[i].tolist(),
                "a": batch.a[i].tolist(),
                "r": float(batch.r[i]),
                "s_next": batch.s_next[i].tolist(),
                "done": bool(batch.done[i]),
            }
            if with_synthetic:
                row["synthetic"] = bool(batch.synthetic[i])
            fh.write(json.dumps(row) + "\n")


def read_jsonl(path: str | Path) -> TransitionBatch:
    items = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                t = Transition(
                    np.asarray(row["s"], dtype=np.float64),
                    np.asarray(row["a"], dtype=np.float64),
                    float(row["r"]),
                    np.asarray(row["s_next"], dtype=np.float64),
                    bool(row["done"]),
                    bool(row.get("synthetic", False)),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRowError(f"{path}:{lineno}: malformed transition ({exc})") from exc
            if items and (t.s.shape != items[0].s.shape or t.a.shape != items[0].a.shape
                          or t.s_next.shape != t.s.shape):
                raise MalformedRowError(f"{path}:{lineno}: dimensions differ from line 1")
            if not (np.isfinite(t.s).all() and np.isfinite(t.a).all() and np.isfinite(t.r)
                    and np.isfinite(t.s_next).all()):
                raise MalformedRowError(f"{path}:{lineno}: non-finite value")
            items.append(t)
    if not items:
        raise MalformedRowError(f"{path}: no transitions")
    return TransitionBatch.from_transitions(items)


# ---------------------------------------------------------------------------
# point-mass environments


@dataclass(frozen=True)
class EnvSpec:
    name: str = "reacher"
    n_distractors: int = 0
    n_actions: int = 2
    n_live_actions: int = 2
    kinematics: str = "velocity"  # "velocity": pos' = pos + dt*speed*a ; "force": see step
    dt: float = 0.05
    speed: float = 3.0
    gain: float = 10.0
    drag: float = 2.0
    vmax: float = 2.0
    episode_horizon: int = 200
    distractor_ar_coeff: float = 0.9
    distractor_noise: float = 0.75  # innovations ~ U[-c, c]
    start_low: float = -0.9
    start_high: float = -0.3
    goal_low: float = 0.3
    goal_high: float = 0.9
    sparse: bool = False
    success_radius: float = 0.1

    def __post_init__(self):
        if self.kinematics not in ("velocity", "force"):
            raise ValueError(f"unknown kinematics {self.kinematics!r}")
        if not 0 < self.distractor_ar_coeff < 1:
            raise ValueError("distractor_ar_coeff must lie in (0, 1)")
        if not 1 <= self.n_live_actions <= self.n_actions:
            raise ValueError("need 1 <= n_live_actions <= n_actions")
        if self.n_live_actions != 2:
            raise ValueError("the point mass has exactly two live (x, y) actuators")
        if self.n_distractors < 0 or self.episode_horizon < 1:
            raise ValueError("n_distractors must be >= 0 and episode_horizon >= 1")

    @property
    def n_task(self) -> int:
        return 4 if self.kinematics == "velocity" else 6

    @property
    def d_S(self) -> int:
        return self.n_task + self.n_distractors

    @property
    def d_A(self) -> int:
        return self.n_actions

    @property
    def goal_slice(self) -> slice:
        return slice(2, 4) if self.kinematics == "velocity" else slice(4, 6)

    @property
    def distractor_slice(self) -> slice:
        return slice(self.n_task, self.d_S)

    @property
    def ground_truth_s_mask(self) -> np.ndarray:
        m = np.zeros(self.d_S, dtype=int)
        m[: self.n_task] = 1
        return m

    @property
    def ground_truth_a_mask(self) -> np.ndarray:
        m = np.zeros(self.d_A, dtype=int)
        m[: self.n_live_actions] = 1
        return m

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "reacher": EnvSpec(name="reacher"),
    "distractor_reacher": EnvSpec(name="distractor_reacher", n_distractors=8),
    "dead_actuator": EnvSpec(name="dead_actuator", n_actions=6, speed=5.0),
    "sparse_reacher": EnvSpec(name="sparse_reacher", n_distractors=8, sparse=True),
    "force_reacher": EnvSpec(name="force_reacher", kinematics="force", n_distractors=8),
}


def make_env_spec(name: str, **overrides) -> EnvSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown environment {name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[name].to_dict()
    base.update(overrides)
    return EnvSpec(**base)


def ground_truth_masks(spec: EnvSpec) -> tuple[np.ndarray, np.ndarray]:
    return spec.ground_truth_s_mask, spec.ground_truth_a_mask


def uncontrollable_ground_truth(spec: EnvSpec) -> list[int]:
    return [int(i) for i in np.flatnonzero(spec.ground_truth_s_mask == 0)]


def _task_next(spec: EnvSpec, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Successor of the task block (everything except distractors)."""
    if spec.kinematics == "velocity":
        pos = np.clip(s[0:2] + spec.dt * spec.speed * a[0:2], -1.0, 1.0)
        return np.concatenate([pos, s[2:4]])
    # semi-implicit Euler so the action reaches pos' within one step
    vel = np.clip(s[2:4] + spec.dt * (spec.gain * a[0:2] - spec.drag * s[2:4]), -spec.vmax, spec.vmax)
    pos = np.clip(s[0:2] + spec.dt * vel, -1.0, 1.0)
    return np.concatenate([pos, vel, s[4:6]])


def distance_after(spec: EnvSpec, s: np.ndarray, a: np.ndarray) -> float:
    nxt = _task_next(spec, s, a)
    return float(np.linalg.norm(nxt[0:2] - s[spec.goal_slice]))


def reward_fn(spec: EnvSpec, s: np.ndarray, a: np.ndarray) -> float:
    """Reward of taking ``a`` in ``s``; reads task dims and live actions only."""
    d = distance_after(spec, s, a)
    if spec.sparse:
        return 1.0 if d < spec.success_radius else 0.0
    return -d


class PointMassEnv:
    """Single-owner environment instance. ``step`` clamps out-of-range actions
    and counts them in ``clamped_actions``."""

    def __init__(self, spec: EnvSpec, seed: int | np.random.SeedSequence = 0):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.state: np.ndarray | None = None
        self.t = 0
        self.clamped_actions = 0

    def _distractor_innovation(self) -> np.ndarray:
        c = self.spec.distractor_noise
        return self.rng.uniform(-c, c, self.spec.n_distractors)

    def reset(self) -> np.ndarray:
        sp = self.spec
        pos = self.rng.uniform(sp.start_low, sp.start_high, 2)
        goal = self.rng.uniform(sp.goal_low, sp.goal_high, 2)
        task = [pos, goal] if sp.kinematics == "velocity" else [pos, np.zeros(2), goal]
        # burn in from zero; rho**200 makes the start indistinguishable from stationarity
        dist = np.zeros(sp.n_distractors)
        for _ in range(200):
            dist = sp.distractor_ar_coeff * dist + self._distractor_innovation()
        self.state = np.concatenate(task + [dist])
        self.t = 0
        return self.state.copy()

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        sp = self.spec
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (sp.d_A,):
            raise ValueError(f"action must have shape ({sp.d_A},), got {a.shape}")
        if np.any(np.abs(a) > 1.0):
            self.clamped_actions += 1
            a = np.clip(a, -1.0, 1.0)
        s = self.state
        r = reward_fn(sp, s, a)
        dist = sp.distractor_ar_coeff * s[sp.distractor_slice] + self._distractor_innovation()
        self.state = np.concatenate([_task_next(sp, s, a), dist])
        self.t += 1
        return self.state.copy(), r, self.t >= sp.episode_horizon

    def success(self) -> bool:
        s = self.state
        return bool(np.linalg.norm(s[0:2] - s[self.spec.goal_slice]) < self.spec.success_radius)


def env_reset(spec: EnvSpec, seed: int) -> np.ndarray:
    return PointMassEnv(spec, seed).reset()


def scripted_action(spec: EnvSpec, s: np.ndarray) -> np.ndarray:
    """Proportional controller used as the 'solved' reference."""
    a = np.zeros(spec.d_A)
    err = s[spec.goal_slice] - s[0:2]
    if spec.kinematics == "velocity":
        a[:2] = err / (spec.dt * spec.speed)
    else:
        a[:2] = (8.0 * err - 1.5 * s[2:4]) / spec.gain * spec.drag
    return np.clip(a, -1.0, 1.0)


def rollout_returns(spec: EnvSpec, policy: str, episodes: int = 20, seed: int = 12345) -> np.ndarray:
    """Episode returns for the bundled ``"random"`` or ``"scripted"`` policy."""
    ss = np.random.SeedSequence(seed)
    env_seed, act_seed = ss.spawn(2)
    env = PointMassEnv(spec, env_seed)
    rng = np.random.default_rng(act_seed)
    out = []
    for _ in range(episodes):
        s = env.reset()
        total, done = 0.0, False
        while not done:
            if policy == "random":
                a = rng.uniform(-1.0, 1.0, spec.d_A)
            elif policy == "scripted":
                a = scripted_action(spec, s)
            else:
                raise ValueError(policy)
            s, r, done = env.step(a)
            total += r
        out.append(total)
    return np.array(out)


def collect_random(spec: EnvSpec, n: int, seed: int) -> TransitionBatch:
    """``n`` transitions from a uniform random policy (episodes chained)."""
    ss = np.random.SeedSequence(seed)
    env_seed, act_seed = ss.spawn(2)
    env = PointMassEnv(spec, env_seed)
    rng = np.random.default_rng(act_seed)
    S, A, R, S2, D = [], [], [], [], []
    s = env.reset()
    for _ in range(n):
        a = rng.uniform(-1.0, 1.0, spec.d_A)
        s2, r, done = env.step(a)
        S.append(s); A.append(a); R.append(r); S2.append(s2); D.append(done)
        s = env.reset() if done else s2
    return TransitionBatch(np.array(S), np.array(A), np.array(R), np.array(S2), np.array(D, dtype=bool))


# ---------------------------------------------------------------------------
# linear non-Gaussian SEMs

NOISE_KINDS = ("uniform", "laplace", "gaussian")


@dataclass
class SemSpec:
    """``x_j = sum_k B[j, k] x_k + e_j``; ``scale`` is the std of each ``e_j``."""

    B: np.ndarray
    noise: list[str]
    scale: list[float]
    reward_index: int | None = None
    order: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.float64)
        p = self.p
        if self.B.shape != (p, p):
            raise ValueError(f"B must be square, got {self.B.shape}")
        if len(self.noise) != p or len(self.scale) != p:
            raise ValueError("need one noise kind and scale per variable")
        for kind in self.noise:
            if kind not in NOISE_KINDS:
                raise ValueError(f"unknown noise kind {kind!r}")
        if not all(np.isfinite(s) and s > 0 for s in self.scale):
            raise ValueError("noise scales must be finite and positive")
        if self.reward_index is not None and not 0 <= self.reward_index < p:
            raise ValueError("reward_index out of range")
        self.order = topological_order(self.B)

    @property
    def p(self) -> int:
        return len(self.B)

    def to_dict(self) -> dict:
        return {"p": self.p, "B": self.B.tolist(), "noise": list(self.noise),
                "scale": [float(s) for s in self.scale], "reward_index": self.reward_index}

    @classmethod
    def from_dict(cls, d: dict) -> "SemSpec":
        return cls(np.asarray(d["B"], dtype=np.float64), list(d["noise"]),
                   [float(s) for s in d["scale"]], d.get("reward_index"))


def topological_order(B: np.ndarray) -> list[int]:
    """Order in which every variable follows its parents; raises on cycles."""
    parents = [set(np.flatnonzero(B[j])) for j in range(len(B))]
    order, placed = [], set()
    while len(order) < len(B):
        ready = [j for j in range(len(B)) if j not in placed and parents[j] <= placed]
        if not ready:
            raise CyclicGraphError("coefficient matrix has a directed cycle")
        for j in ready:
            order.append(j)
            placed.add(j)
    return order


def _noise(kind: str, scale: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "uniform":
        h = np.sqrt(3.0) * scale
        return rng.uniform(-h, h, n)
    if kind == "laplace":
        return rng.laplace(0.0, scale / np.sqrt(2.0), n)
    return rng.normal(0.0, scale, n)


def sem_generate(spec: SemSpec, n: int, seed: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    X = np.zeros((n, spec.p))
    E = np.column_stack([_noise(k, s, n, rng) for k, s in zip(spec.noise, spec.scale)]) if n else X
    for j in spec.order:
        X[:, j] = X @ spec.B[j] + E[:, j]
    return X


def sem_reward_mask(spec: SemSpec) -> np.ndarray:
    if spec.reward_index is None:
        raise ValueError("SEM has no reward variable")
    return (spec.B[spec.reward_index] != 0).astype(int)


def random_sem(
    p: int,
    rng: np.random.Generator,
    edge_prob: float = 0.3,
    coef_low: float = 0.5,
    coef_high: float = 1.0,
    noise: str | None = None,
    scale_low: float = 0.5,
    scale_high: float = 1.0,
) -> SemSpec:
    """Random DAG under a hidden permutation with |coefficients| in [low, high]."""
    perm = rng.permutation(p)
    B = np.zeros((p, p))
    for a in range(p):
        for b in range(a):
            if rng.random() < edge_prob:
                B[perm[a], perm[b]] = rng.uniform(coef_low, coef_high) * rng.choice([-1.0, 1.0])
    kinds = [noise or str(rng.choice(["uniform", "laplace"])) for _ in range(p)]
    scales = rng.uniform(scale_low, scale_high, p).tolist()
    return SemSpec(B, kinds, scales)


def write_sem_csv(path: str | Path, X: np.ndarray, p: int | None = None) -> None:
    p = X.shape[1] if X.ndim == 2 and X.size else p
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(p)])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def read_sem_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedRowError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
    return np.array(body, dtype=np.float64).reshape(len(body), len(header))

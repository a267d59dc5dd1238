"""Soft actor-critic with causally weighted empowerment, plus the plain SAC baseline.

One loop serves both agents. The baseline is the same loop with uniform
action weights, no augmentation and the ordinary entropy bonus, so any
difference between runs on one seed comes from the CIP branches alone.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .augment import augment_buffer
from .causal import (
    ActionWeights,
    CausalMatrices,
    DegenerateInputError,
    UncontrollableSet,
    fit_action_reward_weights,
    fit_state_reward_mask,
    matrices_to_json,
    uncontrollable_set,
)
from .empower import InverseDynamicsModel, fit_inverse_dynamics, head
from .envs import EnvSpec, PointMassEnv, TransitionBatch
from .numkit import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    MlpParams,
    adam_step,
    all_finite,
    gaussian_head_sample,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    polyak,
)
from .replay import ReplayBuffer

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step", "episode", "return", "success", "critic_loss", "policy_loss",
    "inverse_nll", "empowerment_mean", "synthetic_fraction", "wallclock_s",
)


class TrainingError(RuntimeError):
    """A fatal error inside the loop, tagged with the step and phase."""

    def __init__(self, step: int, phase: str, cause: Exception):
        super().__init__(f"step {step}, {phase}: {type(cause).__name__}: {cause}")
        self.step, self.phase, self.cause = step, phase, cause


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 3e-4
    batch_size: int = 256
    alpha: float = 0.2
    tau: float = 0.005
    causal_update_interval: int = 1000
    causal_sample_size: int = 10000
    theta: float = 0.05
    augment_rate: float = 0.5
    total_steps: int = 100_000
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    warmup_steps: int = 1000
    target_update_interval: int = 2
    replay_size: int = 1_000_000
    local_buffer_size: int = 20_000
    w_min: float = 0.02
    use_empowerment: bool = True
    use_action_weights: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        errs = []
        if not 0.0 <= self.gamma < 1.0:
            errs.append("gamma must lie in [0, 1)")
        if self.alpha < 0:
            errs.append("alpha must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            errs.append("tau must lie in (0, 1]")
        if self.lr <= 0:
            errs.append("lr must be > 0")
        if not 0.0 <= self.augment_rate <= 1.0:
            errs.append("augment_rate must lie in [0, 1]")
        if self.theta < 0:
            errs.append("theta must be >= 0")
        for name in ("batch_size", "causal_update_interval", "causal_sample_size",
                     "target_update_interval", "replay_size", "local_buffer_size"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be >= 1")
        for name in ("total_steps", "warmup_steps"):
            if getattr(self, name) < 0:
                errs.append(f"{name} must be >= 0")
        if self.local_buffer_size < self.causal_sample_size:
            errs.append("local_buffer_size must be >= causal_sample_size")
        if errs:
            raise ValueError("; ".join(errs))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "AgentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**doc)

    def baseline(self) -> "AgentConfig":
        """The controlled SAC comparison for this configuration."""
        return dataclasses.replace(self, use_empowerment=False, use_action_weights=False,
                                   augment_rate=0.0)


@dataclass
class AgentState:
    policy: MlpParams
    q1: MlpParams
    q2: MlpParams
    q1_target: MlpParams
    q2_target: MlpParams
    policy_opt: AdamState
    q1_opt: AdamState
    q2_opt: AdamState
    inverse: InverseDynamicsModel
    config: AgentConfig
    d_S: int
    d_A: int
    weights: ActionWeights
    matrices: CausalMatrices | None = None
    u_set: UncontrollableSet | None = None
    replay: ReplayBuffer | None = None
    local: ReplayBuffer | None = None
    step: int = 0
    grad_steps: int = 0
    rejected_targets: int = 0

    @classmethod
    def create(cls, config: AgentConfig, d_S: int, d_A: int, rng: np.random.Generator
               ) -> "AgentState":
        h = list(config.hidden)
        policy = init_mlp([d_S, *h, 2 * d_A], rng, output_scale=0.1)
        q1 = init_mlp([d_S + d_A, *h, 1], rng)
        q2 = init_mlp([d_S + d_A, *h, 1], rng)
        inverse = InverseDynamicsModel.create(d_S, d_A, rng, config.hidden, config.lr)
        return cls(
            policy, q1, q2, q1.copy(), q2.copy(),
            AdamState.for_params(policy), AdamState.for_params(q1), AdamState.for_params(q2),
            inverse, config, d_S, d_A, ActionWeights.uniform(d_A),
            replay=ReplayBuffer(config.replay_size, d_S, d_A),
            local=ReplayBuffer(config.local_buffer_size, d_S, d_A),
        )

    @property
    def omega(self) -> np.ndarray:
        return self.weights.omega

    def networks(self) -> dict[str, MlpParams]:
        return {
            "policy": self.policy, "q1": self.q1, "q2": self.q2,
            "q1_target": self.q1_target, "q2_target": self.q2_target,
            "inverse_dynamics": self.inverse.params,
        }


# ---------------------------------------------------------------------------
# losses and updates


@dataclass
class TargetInfo:
    y: np.ndarray
    empowerment: np.ndarray | None  # per-sample estimate, CIP only


def critic_target(batch: TransitionBatch, st: AgentState, noise: np.ndarray) -> TargetInfo:
    """Soft Bellman target with the empowerment bonus.

    ``a' ~ pi(.|s')`` is drawn with the supplied standard-normal ``noise``.
    The inverse-model part of the bonus is evaluated on the realized
    ``(s, a, s')``; the policy part at the fresh ``a'``.
    """
    cfg = st.config
    mean, log_std = head(st.policy, batch.s_next)
    nxt = gaussian_head_sample(mean, log_std, noise)
    x2 = np.concatenate([batch.s_next, nxt.action], axis=1)
    q_next = np.minimum(mlp_forward(st.q1_target, x2), mlp_forward(st.q2_target, x2))[:, 0]
    emp = None
    if cfg.use_empowerment:
        inv_lp = st.inverse.log_prob(batch.s, batch.a, batch.s_next)
        emp = (st.omega * (inv_lp - nxt.per_dim_log_prob)).sum(axis=1)
    boot = q_next
    if cfg.alpha != 0.0:
        if cfg.use_empowerment:
            bonus = emp
        else:
            bonus = -(st.omega * nxt.per_dim_log_prob).sum(axis=1)
        boot = q_next + cfg.alpha * bonus
    y = batch.r + cfg.gamma * (1.0 - batch.done) * boot
    return TargetInfo(y, emp)


def _critic_step(q: MlpParams, opt: AdamState, x: np.ndarray, y: np.ndarray, lr: float):
    pred, cache = mlp_forward_cached(q, x)
    err = pred[:, 0] - y
    grads, _ = mlp_backward(q, cache, (2.0 / len(y)) * err[:, None])
    q, opt = adam_step(q, grads, opt, lr)
    return q, opt, float(np.mean(err * err))


def update_critics(batch: TransitionBatch, st: AgentState, y: np.ndarray) -> float | None:
    """One Adam step per critic on the squared TD error; returns the mean of both losses."""
    if not np.isfinite(y).all():
        st.rejected_targets += 1
        log.warning("non-finite critic target at step %d, update rejected", st.step)
        return None
    x = np.concatenate([batch.s, batch.a], axis=1)
    lr = st.config.lr
    st.q1, st.q1_opt, l1 = _critic_step(st.q1, st.q1_opt, x, y, lr)
    st.q2, st.q2_opt, l2 = _critic_step(st.q2, st.q2_opt, x, y, lr)
    return 0.5 * (l1 + l2)


QFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def twin_q(st: AgentState) -> QFn:
    """``min(Q1, Q2)(s, a)`` and its gradient with respect to ``a``."""

    def fn(s, a):
        x = np.concatenate([s, a], axis=1)
        p1, c1 = mlp_forward_cached(st.q1, x)
        p2, c2 = mlp_forward_cached(st.q2, x)
        pick1 = p1[:, 0] <= p2[:, 0]
        q = np.where(pick1, p1[:, 0], p2[:, 0])
        _, g1 = mlp_backward(st.q1, c1, pick1[:, None].astype(float), need_params=False)
        _, g2 = mlp_backward(st.q2, c2, (~pick1)[:, None].astype(float), need_params=False)
        return q, (g1 + g2)[:, st.d_S:]

    return fn


def policy_loss_and_grad(
    s: np.ndarray,
    st: AgentState,
    noise: np.ndarray,
    q_fn: QFn | None = None,
    s_next: np.ndarray | None = None,
):
    """Loss ``-mean(minQ(s, a~) + alpha * e(s, a~))`` and its policy gradient.

    In ``e`` the inverse-model log-density is a constant (gradient stopped);
    the policy log-density is differentiated through the reparameterized
    sample. With ``alpha == 0`` the entropy branch is skipped entirely.
    """
    cfg = st.config
    q_fn = q_fn or twin_q(st)
    n, d = s.shape[0], st.d_A
    out, cache = mlp_forward_cached(st.policy, s)
    mean, ls_raw = out[:, :d], out[:, d:]
    log_std = np.clip(ls_raw, LOG_STD_MIN, LOG_STD_MAX)
    sample = gaussian_head_sample(mean, log_std, noise)
    a, sigma = sample.action, np.exp(log_std)
    q, dq_da = q_fn(s, a)
    objective = q
    # d loss / d raw through Q, then into mean and log_std
    g_raw = (-dq_da / n) * (1.0 - a * a)
    g_mean = g_raw
    g_ls = g_raw * sigma * noise
    if cfg.alpha != 0.0:
        w = st.omega
        lp = sample.per_dim_log_prob
        bonus = -(w * lp).sum(axis=1)
        if cfg.use_empowerment and s_next is not None:
            bonus = bonus + (w * st.inverse.log_prob(s, a, s_next)).sum(axis=1)
        objective = q + cfg.alpha * bonus
        # d lp / d mean = 2a ; d lp / d log_std = -1 + 2a sigma noise
        c = (cfg.alpha / n) * w
        g_mean = g_mean + c * 2.0 * a
        g_ls = g_ls + c * (-1.0 + 2.0 * a * sigma * noise)
    g_ls = g_ls * ((ls_raw > LOG_STD_MIN) & (ls_raw < LOG_STD_MAX))
    grads, _ = mlp_backward(st.policy, cache, np.concatenate([g_mean, g_ls], axis=1))
    return -float(objective.mean()), grads


def update_policy(batch: TransitionBatch, st: AgentState, noise: np.ndarray,
                  q_fn: QFn | None = None) -> float:
    loss, grads = policy_loss_and_grad(batch.s, st, noise, q_fn, batch.s_next)
    st.policy, st.policy_opt = adam_step(st.policy, grads, st.policy_opt, st.config.lr)
    return loss


def act(st: AgentState, s: np.ndarray, noise: np.ndarray) -> np.ndarray:
    mean, log_std = head(st.policy, s)
    return gaussian_head_sample(mean, log_std, noise).action


def act_deterministic(st: AgentState, s: np.ndarray) -> np.ndarray:
    return np.tanh(head(st.policy, s)[0])


# ---------------------------------------------------------------------------
# training loop


@dataclass
class CausalSnapshot:
    step: int
    digest: str
    doc: dict


@dataclass
class TrainResult:
    records: list[dict]
    state: AgentState
    snapshots: list[CausalSnapshot] = field(default_factory=list)
    augmented: int = 0
    augment_skipped: int = 0
    skipped_refits: int = 0


# spawn layout shared by every mode so streams line up across agents
_STREAMS = ("env", "explore", "init", "sample", "target_noise", "policy_noise", "augment")


def _streams(seed: int) -> dict[str, np.random.Generator]:
    kids = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(k) for name, k in zip(_STREAMS, kids)}


def _mean_or_nan(xs: list) -> float:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else float("nan")


def _is_cip(cfg: AgentConfig) -> bool:
    return cfg.use_empowerment or cfg.use_action_weights or cfg.augment_rate > 0


def _refit(st: AgentState, rng: np.random.Generator, marks: dict, result: TrainResult) -> None:
    cfg = st.config
    window = cfg.causal_sample_size
    # Step 1: state -> reward mask, then counterfactual augmentation
    try:
        m_s = fit_state_reward_mask(st.local.recent(window))
    except DegenerateInputError as exc:
        # e.g. a window spanning one episode has a constant goal; keep the old snapshot
        log.warning("step %d: causal refit skipped (%s)", st.step, exc)
        result.skipped_refits += 1
        return
    st.u_set = uncontrollable_set(m_s, cfg.theta)
    if cfg.augment_rate > 0:
        res = augment_buffer(st.local, m_s, cfg.theta, cfg.augment_rate,
                             seed=int(rng.integers(2**63)), window=window,
                             since=marks["aug"], also_into=st.replay)
        result.augmented += res.added
        result.augment_skipped += res.skipped
    marks["aug"] = st.local.added
    # Step 2: action -> reward weights on the post-augmentation buffer
    try:
        m, w = fit_action_reward_weights(st.local.recent(window), w_min=cfg.w_min)
    except DegenerateInputError as exc:
        log.warning("step %d: action-weight refit skipped (%s)", st.step, exc)
        result.skipped_refits += 1
        return
    st.matrices = m
    if cfg.use_action_weights:
        st.weights = w
    doc = matrices_to_json(m, st.weights, cfg.theta,
                           {"step": st.step, "state_mask_fit": m_s.m_s_to_r.tolist(),
                            "state_uncontrollable": list(st.u_set.indices)})
    result.snapshots.append(CausalSnapshot(st.step, m.digest(), doc))


def iter_train(config: AgentConfig, env_spec: EnvSpec) -> Iterator[tuple[dict, AgentState]]:
    """Run the loop, yielding ``(episode record, state)`` after each episode."""
    result = TrainResult([], None)  # type: ignore[arg-type]
    yield from _loop(config, env_spec, result)


def _loop(cfg: AgentConfig, spec: EnvSpec, result: TrainResult):
    rngs = _streams(cfg.seed)
    st = AgentState.create(cfg, spec.d_S, spec.d_A, rngs["init"])
    result.state = st
    cip = _is_cip(cfg)
    env = PointMassEnv(spec, rngs["env"])
    marks = {"aug": 0}
    t0 = time.perf_counter()
    s = env.reset() if cfg.total_steps > 0 else None
    ep, ep_ret = 0, 0.0
    acc: dict[str, list] = {"critic": [], "policy": [], "nll": [], "emp": []}
    phase = "act"
    try:
        for t in range(cfg.total_steps):
            st.step = t
            phase = "act"
            if t < cfg.warmup_steps:
                a = rngs["explore"].uniform(-1.0, 1.0, spec.d_A)
            else:
                a = act(st, s, rngs["explore"].standard_normal(spec.d_A))
            s2, r, done = env.step(a)
            # the horizon is a time limit, not a terminal state: keep bootstrapping
            terminal = done and env.t < spec.episode_horizon
            st.replay.add(s, a, r, s2, terminal)
            if cip:
                st.local.add(s, a, r, s2, terminal)
            ep_ret += r

            if cip and (t + 1) % cfg.causal_update_interval == 0 \
                    and len(st.local) >= cfg.causal_sample_size:
                phase = "causal refit"
                _refit(st, rngs["augment"], marks, result)

            if t >= cfg.warmup_steps:
                phase = "gradient step"
                batch = st.replay.sample(cfg.batch_size, rngs["sample"])
                if cip:
                    st.inverse, nll = fit_inverse_dynamics(st.inverse, batch)
                    acc["nll"].append(nll)
                tgt_noise = rngs["target_noise"].standard_normal((cfg.batch_size, spec.d_A))
                info = critic_target(batch, st, tgt_noise)
                acc["critic"].append(update_critics(batch, st, info.y))
                if info.empowerment is not None:
                    acc["emp"].append(float(info.empowerment.mean()))
                pol_noise = rngs["policy_noise"].standard_normal((cfg.batch_size, spec.d_A))
                acc["policy"].append(update_policy(batch, st, pol_noise))
                st.grad_steps += 1
                if st.grad_steps % cfg.target_update_interval == 0:
                    st.q1_target = polyak(st.q1_target, st.q1, cfg.tau)
                    st.q2_target = polyak(st.q2_target, st.q2, cfg.tau)
                if not (all_finite(st.policy) and all_finite(st.q1) and all_finite(st.q2)):
                    raise FloatingPointError("non-finite network parameters")

            if done:
                rec = {
                    "step": t + 1,
                    "episode": ep,
                    "return": ep_ret,
                    "success": int(env.success()),
                    "critic_loss": _mean_or_nan(acc["critic"]),
                    "policy_loss": _mean_or_nan(acc["policy"]),
                    "inverse_nll": _mean_or_nan(acc["nll"]),
                    "empowerment_mean": _mean_or_nan(acc["emp"]),
                    "synthetic_fraction": st.replay.synthetic_fraction(),
                    "wallclock_s": time.perf_counter() - t0,
                    "causal_digest": st.matrices.digest() if st.matrices is not None else "",
                }
                result.records.append(rec)
                yield rec, st
                ep, ep_ret = ep + 1, 0.0
                acc = {k: [] for k in acc}
                s = env.reset()
            else:
                s = s2
        st.step = cfg.total_steps
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise TrainingError(st.step, phase, exc) from exc


def train(config: AgentConfig, env_spec: EnvSpec,
          on_episode: Callable[[dict], None] | None = None) -> TrainResult:
    result = TrainResult([], None)  # type: ignore[arg-type]
    for rec, _ in _loop(config, env_spec, result):
        if on_episode is not None:
            on_episode(rec)
    return result


def train_baseline_sac(config: AgentConfig, env_spec: EnvSpec,
                       on_episode: Callable[[dict], None] | None = None) -> TrainResult:
    return train(config.baseline(), env_spec, on_episode)


ABLATIONS = {
    "cip": lambda c: c,
    "sac": AgentConfig.baseline,
    "no_aug": lambda c: dataclasses.replace(c, augment_rate=0.0),
    "no_emp": lambda c: dataclasses.replace(c, use_empowerment=False, use_action_weights=False),
}


def return_auc(records: list[dict]) -> float:
    """Mean episode return over the run (area under the per-episode curve / episodes)."""
    if not records:
        return float("nan")
    return float(np.mean([r["return"] for r in records]))

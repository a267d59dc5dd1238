"""Inverse dynamics model and the causally weighted empowerment estimate.

Both the policy and the inverse model are diagonal Gaussians over the raw
(pre-tanh) action. Log-densities are taken in squashed-action space for both,
so the tanh Jacobian cancels in their difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .causal import ActionWeights
from .envs import TransitionBatch
from .numkit import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    MlpParams,
    adam_step,
    clamp_log_std,
    gaussian_head_sample,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    squashed_log_prob,
)

ATANH_CLIP = 1.0 - 1e-6


def head(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a ``2*d_A`` output into ``(mean, clamped log_std)``."""
    out = mlp_forward(params, x)
    d = out.shape[-1] // 2
    return out[..., :d], clamp_log_std(out[..., d:])


def _omega(w: ActionWeights | np.ndarray) -> np.ndarray:
    return np.asarray(w.omega if isinstance(w, ActionWeights) else w, dtype=np.float64)


@dataclass
class InverseDynamicsModel:
    params: MlpParams
    opt: AdamState
    d_S: int
    d_A: int
    lr: float = 3e-4
    rejected: int = 0

    @classmethod
    def create(cls, d_S: int, d_A: int, rng: np.random.Generator, hidden=(64, 64),
               lr: float = 3e-4) -> "InverseDynamicsModel":
        params = init_mlp([2 * d_S, *hidden, 2 * d_A], rng, output_scale=0.1)
        return cls(params, AdamState.for_params(params), d_S, d_A, lr)

    def __post_init__(self):
        if self.params.input_dim != 2 * self.d_S or self.params.output_dim != 2 * self.d_A:
            raise ValueError("inverse model must map 2*d_S inputs to 2*d_A outputs")

    def inputs(self, s: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        return np.concatenate([s, s_next], axis=-1)

    def distribution(self, s: np.ndarray, s_next: np.ndarray):
        return head(self.params, self.inputs(s, s_next))

    def log_prob(self, s, a, s_next) -> np.ndarray:
        """Per-dim log-density of squashed action ``a``."""
        mean, log_std = self.distribution(s, s_next)
        return squashed_log_prob(a, mean, log_std, ATANH_CLIP)[0]


def inverse_nll_and_grad(model: InverseDynamicsModel, batch: TransitionBatch):
    """Mean per-dim Gaussian NLL of the raw action and its parameter gradient."""
    x = model.inputs(batch.s, batch.s_next)
    out, cache = mlp_forward_cached(model.params, x)
    d = model.d_A
    mean, ls_raw = out[:, :d], out[:, d:]
    log_std = np.clip(ls_raw, LOG_STD_MIN, LOG_STD_MAX)
    raw = np.arctanh(np.clip(batch.a, -ATANH_CLIP, ATANH_CLIP))
    z = (raw - mean) * np.exp(-log_std)
    nll = 0.5 * z * z + log_std + 0.5 * np.log(2.0 * np.pi)
    scale = 1.0 / nll.size
    g_mean = -z * np.exp(-log_std) * scale
    inside = (ls_raw > LOG_STD_MIN) & (ls_raw < LOG_STD_MAX)
    g_ls = (1.0 - z * z) * scale * inside
    grads, _ = mlp_backward(model.params, cache, np.concatenate([g_mean, g_ls], axis=1))
    return float(nll.mean()), grads


def fit_inverse_dynamics(model: InverseDynamicsModel, batch: TransitionBatch):
    """One Adam step on the NLL. Returns ``(model, mean NLL or None)``.

    The NLL is measured before the step. An empty batch is a no-op.
    """
    if len(batch) == 0:
        return model, None
    nll, grads = inverse_nll_and_grad(model, batch)
    if not np.isfinite(nll):
        model.rejected += 1
        return model, None
    before = model.opt.rejected
    model.params, model.opt = adam_step(model.params, grads, model.opt, model.lr)
    model.rejected += model.opt.rejected - before
    return model, nll


@dataclass
class EmpowermentEstimate:
    value: np.ndarray  # per sample (scalar for a single state)
    h_policy: np.ndarray
    h_inverse: np.ndarray
    per_dim: np.ndarray

    def mean(self) -> float:
        return float(np.mean(self.value))


def weighted_entropy_policy(s, policy: MlpParams, w, sample_noise, squash: bool = True):
    """Single-sample weighted entropy ``-sum_i w_i log pi(a_i|s)`` at a fresh draw.

    Returns ``(value, per_dim, action)``. ``squash=False`` scores the raw
    Gaussian sample instead of its tanh image.
    """
    mean, log_std = head(policy, s)
    out = gaussian_head_sample(mean, log_std, np.asarray(sample_noise, dtype=np.float64), squash)
    per = -_omega(w) * out.per_dim_log_prob
    return per.sum(axis=-1), per, out.action


def weighted_entropy_policy_at(s, a, policy: MlpParams, w):
    """Weighted policy entropy term evaluated at a given squashed action."""
    mean, log_std = head(policy, s)
    per = -_omega(w) * squashed_log_prob(a, mean, log_std, ATANH_CLIP)[0]
    return per.sum(axis=-1), per


def weighted_entropy_inverse(s, s_next, a, model: InverseDynamicsModel, w):
    per = -_omega(w) * model.log_prob(s, a, s_next)
    return per.sum(axis=-1), per


def empowerment_term(s, a, s_next, policy: MlpParams, model: InverseDynamicsModel, w
                     ) -> EmpowermentEstimate:
    h_pol, per_pol = weighted_entropy_policy_at(s, a, policy, w)
    h_inv, per_inv = weighted_entropy_inverse(s, s_next, a, model, w)
    return EmpowermentEstimate(h_pol - h_inv, h_pol, h_inv, per_pol - per_inv)

"""DirectLiNGAM and the reward-row quantities derived from it.

The exogeneity score is the pairwise likelihood-ratio measure of Hyvarinen &
Smith (2013) built on the maximum-entropy approximation of differential
entropy. Scores are swappable through the ``measure`` argument.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .envs import TransitionBatch

# maximum-entropy approximation constants
K1 = 79.047
K2 = 7.4129
GAMMA = 0.37457
GAUSS_ENTROPY = 0.5 * (1.0 + np.log(2.0 * np.pi))

DEFAULT_THETA = 0.05
DEFAULT_W_MIN = 0.02


class DegenerateInputError(ValueError):
    pass


def approx_entropy(u: np.ndarray, axis: int = 0) -> np.ndarray:
    """Entropy of standardized samples along ``axis``."""
    logcosh = np.logaddexp(u, -u) - np.log(2.0)
    a = logcosh.mean(axis=axis) - GAMMA
    b = (u * np.exp(-0.5 * u * u)).mean(axis=axis)
    return GAUSS_ENTROPY - K1 * a * a - K2 * b * b


def pwling_scores(Z: np.ndarray) -> np.ndarray:
    """Exogeneity penalty for each column of standardized ``Z`` (lower = more exogenous).

    For each ordered pair the residual ``r_ij = z_i - rho_ij z_j`` is rescaled to
    unit variance, and the pair contributes ``min(0, H(z_j) + H(r_ij) - H(z_i) - H(r_ji))**2``
    to the penalty of ``i``.
    """
    n, m = Z.shape
    if m == 1:
        return np.zeros(1)
    C = (Z.T @ Z) / n
    np.fill_diagonal(C, 0.0)
    denom = np.sqrt(np.clip(1.0 - C * C, 1e-12, None))
    H_res = np.empty((m, m))
    # one candidate at a time keeps memory at n*m
    for i in range(m):
        R = (Z[:, [i]] - Z * C[i]) / denom[i]
        H_res[i] = approx_entropy(R)
    H = approx_entropy(Z)
    diff = H[None, :] + H_res - H[:, None] - H_res.T
    np.fill_diagonal(diff, 0.0)
    return (np.minimum(0.0, diff) ** 2).sum(axis=1)


@dataclass
class LingamResult:
    B: np.ndarray  # B[j, k]: coefficient of x_k in x_j, original units
    order: list[int]
    std: np.ndarray  # column standard deviations

    @property
    def B_std(self) -> np.ndarray:
        """Coefficients in standardized units."""
        return self.B * self.std[None, :] / self.std[:, None]


def _standardize(X: np.ndarray, names: Sequence[str] | None) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    for j, s in enumerate(sd):
        if not np.isfinite(s) or s <= 1e-12 * max(1.0, abs(mu[j])):
            name = names[j] if names is not None else f"x{j + 1}"
            raise DegenerateInputError(f"column {name!r} has zero variance")
    return (X - mu) / sd, sd


def direct_lingam(
    data: np.ndarray,
    sink: int | None = None,
    names: Sequence[str] | None = None,
    measure: Callable[[np.ndarray], np.ndarray] = pwling_scores,
) -> LingamResult:
    """Fit a linear non-Gaussian acyclic model.

    ``sink`` optionally names a variable known to have no children (e.g. the
    reward of a single-step factored MDP); it is held out of the ordering
    search and placed last.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D array")
    n, p = X.shape
    if n < p + 2:
        raise DegenerateInputError(f"need at least p + 2 = {p + 2} rows, got {n}")
    if not np.isfinite(X).all():
        raise DegenerateInputError("data contains non-finite values")
    Z, sd = _standardize(X, names)

    remaining = [j for j in range(p) if j != sink]
    work = Z.copy()
    order: list[int] = []
    while remaining:
        if len(remaining) == 1:
            m = remaining[0]
        else:
            sub = work[:, remaining]
            sub = (sub - sub.mean(axis=0)) / sub.std(axis=0)
            m = remaining[int(np.argmin(measure(sub)))]
        order.append(m)
        remaining.remove(m)
        xm = work[:, m]
        vm = xm @ xm
        for j in remaining:
            work[:, j] = work[:, j] - (work[:, j] @ xm) / vm * xm
    if sink is not None:
        order.append(sink)

    B_std = np.zeros((p, p))
    for pos in range(1, p):
        j, preds = order[pos], order[:pos]
        coef, *_ = np.linalg.lstsq(Z[:, preds], Z[:, j], rcond=None)
        B_std[j, preds] = coef
    B = B_std * sd[:, None] / sd[None, :]
    return LingamResult(B, order, sd)


def threshold_support(result: LingamResult, theta: float) -> np.ndarray:
    return (np.abs(result.B_std) >= theta).astype(int)


# ---------------------------------------------------------------------------
# reward-row quantities


@dataclass(frozen=True)
class CausalMatrices:
    m_s_to_r: np.ndarray
    m_a_to_r: np.ndarray
    fitted_on: int
    method: str = "direct_lingam"
    # standardized (unit-free) versions; thresholds and weights use these
    m_s_to_r_std: np.ndarray = None
    m_a_to_r_std: np.ndarray = None

    def __post_init__(self):
        for name in ("m_s_to_r", "m_a_to_r"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(v).all():
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, v)
            std_name = name + "_std"
            sv = getattr(self, std_name)
            object.__setattr__(self, std_name, v.copy() if sv is None else np.asarray(sv, dtype=np.float64))

    @property
    def d_S(self) -> int:
        return len(self.m_s_to_r)

    @property
    def d_A(self) -> int:
        return len(self.m_a_to_r)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.m_s_to_r, self.m_a_to_r):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class UncontrollableSet:
    indices: tuple[int, ...]
    theta: float

    def __contains__(self, i: int) -> bool:
        return i in self.indices

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ActionWeights:
    omega: np.ndarray
    normalization: str = "sum_to_dA"
    w_min: float = DEFAULT_W_MIN

    @classmethod
    def uniform(cls, d_A: int) -> "ActionWeights":
        return cls(np.ones(d_A), "uniform", 0.0)


def _fit_reward_row(batch: TransitionBatch) -> tuple[LingamResult, int, int]:
    X = batch.variables()
    d_S, d_A = batch.s.shape[1], batch.a.shape[1]
    names = [f"s{i + 1}" for i in range(d_S)] + [f"a{i + 1}" for i in range(d_A)] + ["r"]
    return direct_lingam(X, sink=X.shape[1] - 1, names=names), d_S, d_A


def _check_size(batch: TransitionBatch, min_samples: int) -> None:
    if len(batch) < min_samples:
        raise DegenerateInputError(
            f"causal discovery needs at least {min_samples} transitions, got {len(batch)}"
        )


def fit_reward_matrices(batch: TransitionBatch, min_samples: int = 0) -> CausalMatrices:
    """DirectLiNGAM over ``[s, a, r]``; returns the reward row split into state and action parts."""
    _check_size(batch, min_samples)
    res, d_S, d_A = _fit_reward_row(batch)
    row, row_std = res.B[-1], res.B_std[-1]
    return CausalMatrices(
        row[:d_S].copy(), row[d_S : d_S + d_A].copy(), len(batch), "direct_lingam",
        row_std[:d_S].copy(), row_std[d_S : d_S + d_A].copy(),
    )


def fit_state_reward_mask(batch: TransitionBatch, min_samples: int = 0) -> CausalMatrices:
    """State-to-reward coefficients; action columns enter as covariates.

    The action part of the returned matrices is left at zero.
    """
    m = fit_reward_matrices(batch, min_samples)
    z = np.zeros(m.d_A)
    return CausalMatrices(m.m_s_to_r, z, m.fitted_on, m.method, m.m_s_to_r_std, z)


def action_weights(m_a_to_r_std: np.ndarray, w_min: float = DEFAULT_W_MIN) -> ActionWeights:
    mag = np.abs(np.asarray(m_a_to_r_std, dtype=np.float64)) + w_min
    d_A = len(mag)
    if d_A == 1:
        return ActionWeights(np.ones(1), "sum_to_dA", w_min)
    omega = mag * (d_A / mag.sum())
    return ActionWeights(omega, "sum_to_dA", w_min)


def fit_action_reward_weights(
    batch: TransitionBatch, min_samples: int = 0, w_min: float = DEFAULT_W_MIN
) -> tuple[CausalMatrices, ActionWeights]:
    m = fit_reward_matrices(batch, min_samples)
    return m, action_weights(m.m_a_to_r_std, w_min)


def uncontrollable_set(m: CausalMatrices, theta: float) -> UncontrollableSet:
    if theta < 0:
        raise ValueError("theta must be non-negative")
    idx = tuple(int(i) for i in np.flatnonzero(np.abs(m.m_s_to_r_std) < theta))
    return UncontrollableSet(idx, float(theta))


def reweight_actions(a: np.ndarray, w: ActionWeights) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != len(w.omega):
        raise ValueError(f"action has {a.shape[-1]} dims but weights have {len(w.omega)}")
    return a * w.omega


# ---------------------------------------------------------------------------
# export


def matrices_to_json(
    m: CausalMatrices, w: ActionWeights | None, theta: float, extra: dict | None = None
) -> dict:
    doc = {
        "method": m.method,
        "fitted_on": int(m.fitted_on),
        "m_s_to_r": m.m_s_to_r.tolist(),
        "m_a_to_r": m.m_a_to_r.tolist(),
        "m_s_to_r_std": m.m_s_to_r_std.tolist(),
        "m_a_to_r_std": m.m_a_to_r_std.tolist(),
        "omega": (w.omega.tolist() if w is not None else None),
        "theta": float(theta),
        "uncontrollable": list(uncontrollable_set(m, theta).indices),
    }
    if extra:
        doc.update(extra)
    return doc


def matrices_from_json(doc: dict) -> tuple[CausalMatrices, ActionWeights | None, float]:
    m = CausalMatrices(
        np.asarray(doc["m_s_to_r"]), np.asarray(doc["m_a_to_r"]), int(doc["fitted_on"]),
        doc.get("method", "direct_lingam"),
        np.asarray(doc["m_s_to_r_std"]) if "m_s_to_r_std" in doc else None,
        np.asarray(doc["m_a_to_r_std"]) if "m_a_to_r_std" in doc else None,
    )
    w = ActionWeights(np.asarray(doc["omega"])) if doc.get("omega") is not None else None
    return m, w, float(doc["theta"])


def save_matrices(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

"""Counterfactual replay augmentation by swapping reward-irrelevant state dims."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .causal import CausalMatrices, UncontrollableSet, uncontrollable_set
from .envs import Transition, TransitionBatch
from .replay import ReplayBuffer

MAX_PARTNER_TRIES = 8


@dataclass(frozen=True)
class SwapPlan:
    source_index: int
    partner_index: int
    shared_dims: tuple[int, ...]

    def __post_init__(self):
        if not self.shared_dims:
            raise ValueError("shared_dims must be nonempty")
        if self.source_index == self.partner_index:
            raise ValueError("a transition cannot be its own swap partner")


@dataclass
class PlanReport:
    plans: list[SwapPlan]
    sources: int
    skipped: int


def counterfactual_swap(t: Transition, t_hat: Transition, dims) -> Transition:
    dims = sorted(set(int(d) for d in dims))
    if not dims:
        raise ValueError("counterfactual_swap needs at least one dimension")
    if t.s.shape != t_hat.s.shape or np.shape(t.a) != np.shape(t_hat.a):
        raise ValueError("transitions differ in state or action dimension")
    if dims[0] < 0 or dims[-1] >= len(t.s):
        raise ValueError(f"swap dims {dims} out of range for d_S={len(t.s)}")
    s = np.array(t.s, dtype=np.float64)
    s_next = np.array(t.s_next, dtype=np.float64)
    s[dims] = t_hat.s[dims]
    s_next[dims] = t_hat.s_next[dims]
    return Transition(s, np.array(t.a, dtype=np.float64), t.r, s_next, t.done, True)


def _as_sets(u_sets, n: int) -> list[frozenset]:
    if isinstance(u_sets, UncontrollableSet):
        return [frozenset(u_sets.indices)] * n
    out = [frozenset(u.indices if isinstance(u, UncontrollableSet) else u) for u in u_sets]
    if len(out) != n:
        raise ValueError(f"got {len(out)} uncontrollable sets for {n} transitions")
    return out


def plan_swaps_report(
    n: int,
    u_sets,
    rate: float,
    seed: int = 0,
    sources: Sequence[int] | None = None,
    dims: Sequence[int] | None = None,
) -> PlanReport:
    """Plan swaps over a candidate batch of size ``n``.

    ``sources`` restricts which positions may act as sources (default: all);
    partners are always drawn from the whole batch. Each source's partner
    draws come from a generator keyed by ``(seed, source_index)`` so the plan
    does not depend on iteration order.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    sets = _as_sets(u_sets, n)
    if dims is not None:
        keep = frozenset(int(d) for d in dims)
        sets = [u & keep for u in sets]
    pool = np.arange(n) if sources is None else np.asarray(sorted(set(sources)), dtype=int)
    k = int(round(rate * len(pool)))
    if n < 2 or k == 0:
        return PlanReport([], 0, 0)
    pick = np.random.default_rng([seed, 0x5EED]).choice(pool, size=k, replace=False)
    plans, skipped = [], 0
    for src in np.sort(pick):
        src = int(src)
        if not sets[src]:
            skipped += 1
            continue
        rng = np.random.default_rng([seed, src])
        for _ in range(MAX_PARTNER_TRIES):
            j = int(rng.integers(0, n - 1))
            j += j >= src  # uniform over the batch minus the source
            shared = sets[src] & sets[j]
            if shared:
                plans.append(SwapPlan(src, j, tuple(sorted(shared))))
                break
        else:
            skipped += 1
    return PlanReport(plans, k, skipped)


def plan_swaps(batch, u_sets, rate: float, seed: int = 0) -> list[SwapPlan]:
    return plan_swaps_report(len(batch), u_sets, rate, seed).plans


def materialize(batch: TransitionBatch, plans: Sequence[SwapPlan]) -> TransitionBatch:
    """Apply plans in bulk; equivalent to ``counterfactual_swap`` per plan."""
    if not plans:
        return batch.take(np.zeros(0, dtype=int))
    src = np.array([p.source_index for p in plans])
    out = batch.take(src)
    out.s = out.s.copy()
    out.s_next = out.s_next.copy()
    by_dims: dict[tuple[int, ...], list[int]] = {}
    for k, p in enumerate(plans):
        by_dims.setdefault(p.shared_dims, []).append(k)
    for dims, rows in by_dims.items():
        rows = np.asarray(rows)
        partners = np.array([plans[k].partner_index for k in rows])
        d = np.asarray(dims)
        out.s[np.ix_(rows, d)] = batch.s[np.ix_(partners, d)]
        out.s_next[np.ix_(rows, d)] = batch.s_next[np.ix_(partners, d)]
    out.synthetic = np.ones(len(plans), dtype=bool)
    return out


@dataclass
class AugmentResult:
    added: int
    sources: int
    skipped: int
    synthetic: TransitionBatch

    def __int__(self) -> int:
        return self.added


def augment_batch(
    batch: TransitionBatch,
    u: UncontrollableSet,
    rate: float,
    seed: int = 0,
    sources: Sequence[int] | None = None,
) -> AugmentResult:
    """Synthesize counterfactuals from the real rows of ``batch``.

    Synthetic rows are excluded both as sources and as partners.
    """
    real = np.flatnonzero(~batch.synthetic)
    cand = batch.take(real)
    if sources is not None:
        pos = {int(r): k for k, r in enumerate(real)}
        sources = [pos[int(s)] for s in sources if int(s) in pos]
    rep = plan_swaps_report(len(cand), u, rate, seed, sources)
    syn = materialize(cand, rep.plans)
    return AugmentResult(len(rep.plans), rep.sources, rep.skipped, syn)


def augment_buffer(
    local_buffer: ReplayBuffer,
    matrices: CausalMatrices,
    theta: float,
    rate: float,
    seed: int = 0,
    window: int | None = None,
    since: int | None = None,
    also_into: ReplayBuffer | None = None,
) -> AugmentResult:
    """Augment ``local_buffer`` in place and return what was added.

    Candidates are the most recent ``window`` entries (default: whole buffer).
    With ``since``, only real entries inserted at or after that insertion
    count may act as sources.
    """
    if len(local_buffer) == 0:
        raise ValueError("cannot augment an empty buffer")
    n = len(local_buffer) if window is None else min(window, len(local_buffer))
    batch = local_buffer.recent(n)
    src = None
    if since is not None:
        first = local_buffer.added - n
        src = [k for k in range(n) if first + k >= since]
    res = augment_batch(batch, uncontrollable_set(matrices, theta), rate, seed, src)
    if res.added:
        local_buffer.add_batch(res.synthetic)
        if also_into is not None:
            also_into.add_batch(res.synthetic)
    return res

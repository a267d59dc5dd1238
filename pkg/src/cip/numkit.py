"""Dense feed-forward networks with hand-written reverse mode, Adam, and a
squashed diagonal-Gaussian action head.

Everything is float64 numpy. A network is a list of ``(W, b)`` pairs with
``W`` shaped ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``; hidden
layers use tanh and the output layer is linear.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

log = logging.getLogger(__name__)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
EPS_SQUASH = 1e-6
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when array shapes do not compose."""


@dataclass
class MlpParams:
    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w, _ in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def validate(self) -> None:
        for k, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and self.layers[k - 1][0].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {k} expects {w.shape[0]} inputs but layer {k - 1} "
                    f"produces {self.layers[k - 1][0].shape[1]}"
                )


def tree_map(fn: Callable[..., np.ndarray], *trees: MlpParams) -> MlpParams:
    """Apply ``fn`` leaf-wise across identically shaped parameter sets."""
    return MlpParams(
        [
            (fn(*(t.layers[k][0] for t in trees)), fn(*(t.layers[k][1] for t in trees)))
            for k in range(len(trees[0].layers))
        ]
    )


def zeros_like(params: MlpParams) -> MlpParams:
    return tree_map(np.zeros_like, params)


def init_mlp(
    sizes: Iterable[int], rng: np.random.Generator, output_scale: float = 1.0
) -> MlpParams:
    """Fan-in scaled normal init; the last layer is multiplied by ``output_scale``."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        if k == len(sizes) - 2:
            w = w * output_scale
        layers.append((w, np.zeros(fan_out)))
    return MlpParams(layers)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    hiddens: list[np.ndarray]  # tanh outputs, one per hidden layer


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected input with {dim} features, got shape {x.shape}")
    return x, single


def mlp_forward_cached(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    h, single = _as_batch(x, params.input_dim)
    cache = ForwardCache([], [])
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        cache.inputs.append(h)
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
            cache.hiddens.append(h)
    return (h[0] if single else h), cache


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return mlp_forward_cached(params, x)[0]


def mlp_backward(
    params: MlpParams,
    cache: ForwardCache,
    upstream: np.ndarray,
    need_params: bool = True,
) -> tuple[MlpParams | None, np.ndarray]:
    """Reverse pass for ``sum(upstream * output)``.

    Returns parameter gradients (summed over the batch, or None when
    ``need_params`` is false) and the gradient with respect to the input.
    """
    g = np.asarray(upstream, dtype=np.float64)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.output_dim):
        raise ShapeError(f"upstream shape {g.shape} does not match network output")
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        if need_params:
            grads.append((cache.inputs[k].T @ g, g.sum(axis=0)))
        g = g @ w.T
        if k > 0:
            g = g * (1.0 - cache.hiddens[k - 1] ** 2)
    grads.reverse()
    return (MlpParams(grads) if need_params else None), (g[0] if single else g)


def mlp_gradients(params: MlpParams, x: np.ndarray, upstream: np.ndarray) -> MlpParams:
    """Gradient of ``upstream . mlp_forward(params, x)`` with respect to the parameters."""
    _, cache = mlp_forward_cached(params, x)
    grads, _ = mlp_backward(params, cache, upstream)
    return grads


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rejected: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params), **kw)


def all_finite(params: MlpParams) -> bool:
    return all(np.isfinite(a).all() for a in params.arrays())


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState, lr: float
) -> tuple[MlpParams, AdamState]:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not all_finite(grads):
        log.warning("adam_step: non-finite gradient, update rejected (step %d)", state.step)
        state.rejected += 1
        return params, state
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = tree_map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, state.m, grads)
    v = tree_map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, state.v, grads)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new = tree_map(
        lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps), params, m, v
    )
    return new, AdamState(m, v, t, b1, b2, state.eps, state.rejected)


def polyak(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    return tree_map(lambda t, s: (1.0 - tau) * t + tau * s, target, source)


# ---------------------------------------------------------------------------
# squashed Gaussian head


def log_one_minus_tanh_sq(raw: np.ndarray) -> np.ndarray:
    """log(1 - tanh(raw)^2) without cancellation: 2 (log 2 - raw - softplus(-2 raw))."""
    return 2.0 * (np.log(2.0) - raw - np.logaddexp(0.0, -2.0 * raw))


def gaussian_log_density(raw: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (raw - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - HALF_LOG_2PI


def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    return np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


@dataclass
class GaussianHeadOutput:
    mean: np.ndarray
    log_std: np.ndarray
    raw_sample: np.ndarray
    action: np.ndarray
    per_dim_log_prob: np.ndarray
    noise: np.ndarray = field(repr=False, default=None)

    @property
    def log_prob(self) -> np.ndarray:
        return self.per_dim_log_prob.sum(axis=-1)


def gaussian_head_sample(
    mean: np.ndarray, log_std: np.ndarray, noise: np.ndarray, squash: bool = True
) -> GaussianHeadOutput:
    """Reparameterized draw ``raw = mean + exp(log_std) * noise``.

    With ``squash`` the action is ``tanh(raw)`` and each per-dimension
    log-density carries the change-of-variables term. The correction uses the
    exact identity for log(1 - tanh^2), so it never needs the ``EPS_SQUASH``
    fudge that a literal ``log(1 - a^2 + eps)`` would; see
    :func:`squash_correction_eps` for that form.
    """
    mean = np.asarray(mean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if mean.shape != np.shape(log_std) or mean.shape != noise.shape:
        raise ShapeError("mean, log_std and noise must share a shape")
    log_std = clamp_log_std(np.asarray(log_std, dtype=np.float64))
    raw = mean + np.exp(log_std) * noise
    lp = -0.5 * noise * noise - log_std - HALF_LOG_2PI
    if squash:
        action = np.tanh(raw)
        lp = lp - log_one_minus_tanh_sq(raw)
    else:
        action = raw
    return GaussianHeadOutput(mean, log_std, raw, action, lp, noise)


def squash_correction_eps(action: np.ndarray) -> np.ndarray:
    return np.log(1.0 - action * action + EPS_SQUASH)


def squashed_log_prob(
    action: np.ndarray, mean: np.ndarray, log_std: np.ndarray, clip: float = 1.0 - 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension log-density of an already squashed action.

    The raw value is recovered with a clamped atanh. Returns ``(per_dim, raw)``.
    """
    raw = np.arctanh(np.clip(action, -clip, clip))
    log_std = clamp_log_std(log_std)
    return gaussian_log_density(raw, mean, log_std) - log_one_minus_tanh_sq(raw), raw


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all little-endian):
#   magic   8 bytes  b"CIPCKPT\0"
#   version uint32   (currently 1)
#   count   uint32   number of records
#   record:
#     layer   uint32
#     tag_len uint16, tag utf-8 bytes   e.g. "policy/W", "q1/b"
#     ndim    uint8,  shape uint32 * ndim
#     payload float64 * prod(shape), C order

CKPT_MAGIC = b"CIPCKPT\0"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, nets: dict[str, MlpParams]) -> None:
    records = []
    for role, params in nets.items():
        for k, (w, b) in enumerate(params.layers):
            records.append((k, f"{role}/W", w))
            records.append((k, f"{role}/b", b))
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(records)))
        for layer, tag, arr in records:
            raw_tag = tag.encode("utf-8")
            fh.write(struct.pack("<IH", layer, len(raw_tag)))
            fh.write(raw_tag)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, MlpParams]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    found: dict[str, dict[int, dict[str, np.ndarray]]] = {}
    for _ in range(count):
        layer, tag_len = struct.unpack_from("<IH", data, off)
        off += 6
        tag = data[off : off + tag_len].decode("utf-8")
        off += tag_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
        role, kind = tag.rsplit("/", 1)
        found.setdefault(role, {}).setdefault(layer, {})[kind] = arr
    nets = {}
    for role, by_layer in found.items():
        layers = [(by_layer[k]["W"], by_layer[k]["b"]) for k in sorted(by_layer)]
        nets[role] = MlpParams(layers)
        nets[role].validate()
    return nets

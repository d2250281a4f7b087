"""Two-hidden-layer ReLU MLPs with hand-written backprop, multi-head
categorical distributions, Adam, and a binary checkpoint format.

Everything runs in float64 on numpy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

Params = Dict[str, np.ndarray]


class TrainingError(RuntimeError):
    """Raised when optimisation produces non-finite numbers."""


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    heads: Tuple[int, ...] = ()
    hidden: Tuple[int, ...] = (128, 128)
    value_head: bool = False

    def __post_init__(self):
        if self.value_head == bool(self.heads):
            raise ValueError("a network has either categorical heads or a scalar value head")
        if any(h < 2 for h in self.heads):
            raise ValueError(f"head sizes must be >= 2, got {self.heads}")

    @property
    def out_dim(self) -> int:
        return 1 if self.value_head else sum(self.heads)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden, self.out_dim]

    @property
    def param_names(self) -> List[str]:
        names = []
        for i in range(len(self.hidden) + 1):
            names += [f"W{i}", f"b{i}"]
        return names


DEFENDER_HEADS = (6,)


def attacker_heads(lanes: int = 10) -> Tuple[int, ...]:
    """spawn, lane, health, damage, speed, range, regen, leech, pdef, mdef, ppen, mpen, dtype."""
    return (2, lanes, 15, 5, 5, 25, 4, 6, 6, 6, 6, 6, 2)


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_params(spec: NetSpec, rng: np.random.Generator, final_gain: Optional[float] = None) -> Params:
    """Orthogonal init; policy output layers get gain 0.01 so initial policies are near uniform."""
    if final_gain is None:
        final_gain = 1.0 if spec.value_head else 0.01
    sizes = spec.layer_sizes
    params: Params = {}
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        gain = final_gain if i == n_layers - 1 else np.sqrt(2.0)
        params[f"W{i}"] = _orthogonal(rng, sizes[i], sizes[i + 1], gain)
        params[f"b{i}"] = np.zeros(sizes[i + 1])
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def forward(spec: NetSpec, params: Params, obs: np.ndarray, return_cache: bool = False):
    """Batched forward pass. ``obs`` is (B, input_dim) or (input_dim,).

    Returns the raw output (B, out_dim) - concatenated head logits, or the
    value column - and optionally the activation cache for :func:`backward`.
    """
    x = np.asarray(obs, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"expected observation length {spec.input_dim}, got {x.shape[-1]}")
    acts = [x]
    n_layers = len(spec.hidden) + 1
    h = x
    for i in range(n_layers):
        z = h @ params[f"W{i}"] + params[f"b{i}"]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    out = acts[-1][0] if squeeze else acts[-1]
    if return_cache:
        return out, acts
    return out


def backward(spec: NetSpec, params: Params, acts: List[np.ndarray], dout: np.ndarray) -> Params:
    """Gradients of a scalar loss w.r.t. params given dL/d(output) of shape (B, out_dim)."""
    grads: Params = {}
    n_layers = len(spec.hidden) + 1
    delta = np.asarray(dout, dtype=np.float64).reshape(acts[-1].shape)
    for i in reversed(range(n_layers)):
        grads[f"W{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[f"W{i}"].T) * (acts[i] > 0)
    return grads


def value(spec: NetSpec, params: Params, obs: np.ndarray) -> np.ndarray:
    out = forward(spec, params, obs)
    return out[..., 0]


# ---------------------------------------------------------------------------
# multi-head categorical distribution


def _head_slices(heads: Sequence[int]) -> List[slice]:
    bounds = np.cumsum([0, *heads])
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def head_log_softmax(logits: np.ndarray, heads: Sequence[int]) -> List[np.ndarray]:
    logits = np.atleast_2d(logits)
    out = []
    for sl in _head_slices(heads):
        z = logits[:, sl]
        z = z - z.max(axis=1, keepdims=True)
        out.append(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))
    return out


def head_probs(logits: np.ndarray, heads: Sequence[int]) -> List[np.ndarray]:
    return [np.exp(lp) for lp in head_log_softmax(logits, heads)]


def head_mask(actions: np.ndarray, n_heads: int, spawn_masked: bool) -> np.ndarray:
    """(B, n_heads) 0/1 weights of the heads that count for each sample.

    With ``spawn_masked`` the first head is the spawn switch and index 0
    there means no-op: the remaining heads then have no effect on the game
    and are excluded.
    """
    actions = np.atleast_2d(actions)
    mask = np.ones((actions.shape[0], n_heads))
    if spawn_masked:
        mask[actions[:, 0] == 0, 1:] = 0.0
    return mask


def sample_action(
    logits: np.ndarray,
    heads: Sequence[int],
    rng: np.random.Generator,
    spawn_masked: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sample every head independently. Returns (indices (B, H), joint log-prob (B,))."""
    logps = head_log_softmax(logits, heads)
    batch = logps[0].shape[0]
    actions = np.empty((batch, len(heads)), dtype=np.int64)
    for k, lp in enumerate(logps):
        cdf = np.cumsum(np.exp(lp), axis=1)
        u = rng.random((batch, 1)) * cdf[:, -1:]
        actions[:, k] = np.minimum((u >= cdf).sum(axis=1), heads[k] - 1)
    logp, _ = log_prob_and_entropy(logits, heads, actions, spawn_masked)
    return actions, logp


def log_prob_and_entropy(
    logits: np.ndarray,
    heads: Sequence[int],
    actions: np.ndarray,
    spawn_masked: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    logps = head_log_softmax(logits, heads)
    actions = np.atleast_2d(actions)
    mask = head_mask(actions, len(heads), spawn_masked)
    rows = np.arange(actions.shape[0])
    logp = np.zeros(actions.shape[0])
    ent = np.zeros(actions.shape[0])
    for k, lp in enumerate(logps):
        logp += mask[:, k] * lp[rows, actions[:, k]]
        ent += mask[:, k] * -(np.exp(lp) * lp).sum(axis=1)
    return logp, ent


def log_prob_entropy_grads(
    logits: np.ndarray,
    heads: Sequence[int],
    actions: np.ndarray,
    spawn_masked: bool = False,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """log-prob, entropy, and their per-sample gradients w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    logps = head_log_softmax(logits, heads)
    actions = np.atleast_2d(actions)
    mask = head_mask(actions, len(heads), spawn_masked)
    rows = np.arange(actions.shape[0])
    logp = np.zeros(actions.shape[0])
    ent = np.zeros(actions.shape[0])
    dlogp = np.zeros_like(logits)
    dent = np.zeros_like(logits)
    for k, (sl, lp) in enumerate(zip(_head_slices(heads), logps)):
        p = np.exp(lp)
        m = mask[:, k:k + 1]
        h = -(p * lp).sum(axis=1, keepdims=True)
        logp += m[:, 0] * lp[rows, actions[:, k]]
        ent += m[:, 0] * h[:, 0]
        g = -p
        g[rows, actions[:, k]] += 1.0
        dlogp[:, sl] = m * g
        dent[:, sl] = m * (-p * (lp + h))
    return logp, ent, dlogp, dent


# ---------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, params: Params, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, max_grad_norm: Optional[float] = None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = zeros_like(params)
        self.v = zeros_like(params)

    def step(self, params: Params, grads: Params, lr: Optional[float] = None) -> Params:
        """Return updated parameters; ``params`` itself is not modified."""
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise TrainingError(f"non-finite gradient in {bad} at optimiser step {self.t}")
        lr = self.lr if lr is None else lr
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
            if norm > self.max_grad_norm:
                grads = {k: g * (self.max_grad_norm / norm) for k, g in grads.items()}
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        new = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            new[k] = p - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return new


def grad_step(params: Params, grads: Params, opt: Adam, learning_rate: Optional[float] = None) -> Params:
    return opt.step(params, grads, learning_rate)


# ---------------------------------------------------------------------------
# gradient checking


def _flat_index(params: Params) -> List[Tuple[str, int]]:
    return [(k, i) for k in sorted(params) for i in range(params[k].size)]


def grad_check(
    loss_fn: Callable[[Params], Tuple[float, Params]],
    params: Params,
    rng: np.random.Generator,
    n_samples: int = 200,
    eps: float = 1e-5,
    indices: Optional[Sequence[Tuple[str, int]]] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)``. A random subset of ``n_samples``
    scalar parameters is probed unless ``indices`` is given.
    """
    _, analytic = loss_fn(params)
    if indices is None:
        flat = _flat_index(params)
        pick = rng.choice(len(flat), size=min(n_samples, len(flat)), replace=False)
        indices = [flat[j] for j in pick]
    worst = 0.0
    for name, i in indices:
        p_plus = {k: v.copy() for k, v in params.items()}
        p_minus = {k: v.copy() for k, v in params.items()}
        p_plus[name].flat[i] += eps
        p_minus[name].flat[i] -= eps
        numeric = (loss_fn(p_plus)[0] - loss_fn(p_minus)[0]) / (2 * eps)
        a = analytic[name].flat[i]
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst


def policy_logprob_loss(spec: NetSpec, obs: np.ndarray, actions: np.ndarray,
                        spawn_masked: bool = False, entropy_coef: float = 0.1):
    """Loss ``-mean(logp) - c*mean(entropy)`` with analytic gradients; used for checks."""
    def loss_fn(params: Params):
        logits, acts = forward(spec, params, obs, return_cache=True)
        logp, ent, dlogp, dent = log_prob_entropy_grads(logits, spec.heads, actions, spawn_masked)
        n = logp.shape[0]
        loss = -logp.mean() - entropy_coef * ent.mean()
        dout = (-dlogp - entropy_coef * dent) / n
        return float(loss), backward(spec, params, acts, dout)
    return loss_fn


def value_mse_loss(spec: NetSpec, obs: np.ndarray, targets: np.ndarray):
    def loss_fn(params: Params):
        out, acts = forward(spec, params, obs, return_cache=True)
        err = out[:, 0] - targets
        loss = float((err ** 2).mean())
        dout = (2.0 * err / err.shape[0])[:, None]
        return loss, backward(spec, params, acts, dout)
    return loss_fn


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little endian):
#   8s   magic b"LDNNCKPT"
#   u32  version
#   u32  input_dim
#   u32  n_hidden, then n_hidden x u32 hidden sizes
#   u32  n_heads, then n_heads x u32 head sizes
#   u8   value_head flag
#   f64  arrays W0, b0, W1, b1, ... in declaration order, row-major

MAGIC = b"LDNNCKPT"
VERSION = 1


def save_checkpoint(path, spec: NetSpec, params: Params) -> None:
    header = [MAGIC, struct.pack("<II", VERSION, spec.input_dim)]
    header.append(struct.pack(f"<I{len(spec.hidden)}I", len(spec.hidden), *spec.hidden))
    header.append(struct.pack(f"<I{len(spec.heads)}I", len(spec.heads), *spec.heads))
    header.append(struct.pack("<B", int(spec.value_head)))
    body = [np.ascontiguousarray(params[k], dtype="<f8").tobytes() for k in spec.param_names]
    Path(path).write_bytes(b"".join(header + body))


def load_checkpoint(path) -> Tuple[NetSpec, Params]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 8
    version, input_dim = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n_hidden,) = struct.unpack_from("<I", data, pos)
    pos += 4
    hidden = struct.unpack_from(f"<{n_hidden}I", data, pos)
    pos += 4 * n_hidden
    (n_heads,) = struct.unpack_from("<I", data, pos)
    pos += 4
    heads = struct.unpack_from(f"<{n_heads}I", data, pos)
    pos += 4 * n_heads
    (value_flag,) = struct.unpack_from("<B", data, pos)
    pos += 1
    spec = NetSpec(input_dim, tuple(heads), tuple(hidden), bool(value_flag))
    sizes = spec.layer_sizes
    params: Params = {}
    for i in range(len(sizes) - 1):
        for name, shape in ((f"W{i}", (sizes[i], sizes[i + 1])), (f"b{i}", (sizes[i + 1],))):
            n = int(np.prod(shape))
            params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return spec, params

"""Parameter registry and the transformer building blocks.

Parameters live in a flat store keyed by hierarchical dotted names; the
leading path segment is the parameter group (encoder / enhancer /
projector / decoder) that the trainer uses for freezing and per-group
learning rates. Initialization is derived per-name from a forked RNG,
so it does not depend on creation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import Rng

GROUPS = ("encoder", "enhancer", "projector", "decoder")

# When set to a list, every attention call appends (name, probs array);
# used by verification code to audit all attention sites.
ATTN_PROBS = None


@dataclass
class Parameter:
    name: str
    tensor: T.Tensor
    group: str


class ParamStore:
    """Flat name -> Parameter map with lazy, name-seeded initialization."""

    def __init__(self, rng: Rng):
        self.rng = rng
        self.params: dict[str, Parameter] = {}

    def param(self, name, shape, init="zeros", fan_in=None):
        if name in self.params:
            p = self.params[name]
            if p.tensor.shape != tuple(shape):
                raise T.ShapeError(
                    f"parameter {name}: requested {tuple(shape)}, stored {p.tensor.shape}"
                )
            return p.tensor
        group = name.split(".", 1)[0]
        if group not in GROUPS:
            raise ValueError(f"parameter {name}: unknown group {group!r}")
        r = self.rng.fork(name)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "linear":
            data = r.normal(tuple(shape), std=1.0 / math.sqrt(fan_in))
        elif init == "embed":
            data = r.normal(tuple(shape), std=0.02)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = T.Tensor(data, requires_grad=True)
        self.params[name] = Parameter(name, t, group)
        return t

    def group_params(self, group):
        return [p for p in self.params.values() if p.group == group]

    def zero_grad(self):
        for p in self.params.values():
            p.tensor.zero_grad()

    def checksum(self, group=None):
        ps = self.params.values() if group is None else self.group_params(group)
        return {p.name: p.tensor.data.tobytes() for p in sorted(ps, key=lambda p: p.name)}


def linear(store, name, x, d_in, d_out):
    w = store.param(f"{name}.w", (d_in, d_out), init="linear", fan_in=d_in)
    b = store.param(f"{name}.b", (d_out,), init="zeros")
    return T.matmul(x, w) + b


def layer_norm(store, name, x, d):
    g = store.param(f"{name}.g", (d,), init="ones")
    b = store.param(f"{name}.b", (d,), init="zeros")
    return T.layer_norm(x, g, b)


def mlp(store, name, x, d_in, d_hidden, d_out):
    h = T.gelu(linear(store, f"{name}.fc1", x, d_in, d_hidden))
    return linear(store, f"{name}.fc2", h, d_hidden, d_out)


def _split_heads(x, heads):
    t, d = x.shape
    dh = d // heads
    return T.transpose(T.reshape(x, (t, heads, dh)), (1, 0, 2))


def attention(store, name, q_in, kv_in, d, heads, mask=None):
    """Multi-head attention over token sequences [Tq,d] x [Tk,d] -> [Tq,d].

    ``mask`` is an additive float array broadcastable to [Tq,Tk]
    (0 = attend, large negative = blocked). Returns (output, probs)
    where probs has shape [heads, Tq, Tk].
    """
    if d % heads:
        raise T.ShapeError(f"attention: width {d} not divisible by {heads} heads")
    dh = d // heads
    q = _split_heads(linear(store, f"{name}.q", q_in, d, d), heads)
    k = _split_heads(linear(store, f"{name}.k", kv_in, d, d), heads)
    v = _split_heads(linear(store, f"{name}.v", kv_in, d, d), heads)
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + T.Tensor(mask)
    probs = T.softmax(scores, axis=-1)
    if ATTN_PROBS is not None:
        ATTN_PROBS.append((name, probs.data))
    ctx = T.matmul(probs, v)  # [h, Tq, dh]
    tq = q_in.shape[0]
    merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (tq, d))
    return linear(store, f"{name}.o", merged, d, d), probs


def encoder_block(store, name, x, d, heads, mlp_hidden):
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""
    h = layer_norm(store, f"{name}.ln1", x, d)
    a, _ = attention(store, f"{name}.attn", h, h, d, heads)
    x = x + a
    x = x + mlp(store, f"{name}.mlp", layer_norm(store, f"{name}.ln2", x, d), d, mlp_hidden, d)
    return x


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            total += float((p.tensor.grad**2).sum())
    return math.sqrt(total)


def clip_grads(params, max_norm):
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad *= scale
    return norm

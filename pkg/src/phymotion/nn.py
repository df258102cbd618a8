"""Layers, AdamW, gradient clipping and the checkpoint container."""

from __future__ import annotations

import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DataError, ParameterError, ShapeError
from .tensor import Parameter, Tensor


class Module:
    """Parameter container.  Children are found by walking attributes in definition order."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise DataError(f"state dict mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != parameter {p.shape}")
            p.data = value.astype(p.dtype).copy()

    def astype(self, dtype):
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng, fan_in, shape):
    # gain sqrt(2) for the ReLU family, which GELU approximates
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, init="kaiming"):
        if init == "kaiming":
            w = kaiming_uniform(rng, d_in, (d_in, d_out))
        elif init == "xavier":
            bound = math.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-bound, bound, size=(d_in, d_out)).astype(np.float32)
        elif init == "zeros":
            w = np.zeros((d_in, d_out), dtype=np.float32)
        else:
            raise ParameterError(f"unknown init {init!r}")
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=np.float32)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got input shape {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.eps = eps
        self.scale = Parameter(np.ones(d, dtype=np.float32))
        self.shift = Parameter(np.zeros(d, dtype=np.float32))

    def forward(self, x):
        return T.layer_norm(x, self.eps) * self.scale + self.shift


_ACTIVATIONS = {"gelu": T.gelu, "tanh": T.tanh, "relu": T.relu}


class MLP(Module):
    """Stack of Linear layers with an activation between them (none after the last)."""

    def __init__(self, sizes, rng, activation="gelu", layer_norm=False, final_init="kaiming"):
        if len(sizes) < 2:
            raise ParameterError("MLP needs at least input and output sizes")
        self.activation = activation
        n = len(sizes) - 1
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, init=final_init if i == n - 1 else "kaiming")
            for i in range(n)
        ]
        self.norms = [LayerNorm(sizes[i + 1]) for i in range(n - 1)] if layer_norm else []

    def forward(self, x):
        act = _ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                if self.norms:
                    x = self.norms[i](x)
                x = act(x)
        return x


class TemporalAttentionBlock(Module):
    """Post-norm transformer block attending over the time axis.

    ``x = LN(x + Attn(x)); x = LN(x + MLP(x))``.  Input is ``(..., T, d)``.
    With ``enabled=False`` the attention branch contributes nothing, which
    leaves a purely per-frame block.
    """

    def __init__(self, d, rng, n_heads=1, mlp_ratio=2, causal=False):
        if d % n_heads:
            raise ShapeError(f"width {d} is not divisible into {n_heads} heads")
        self.d, self.n_heads, self.causal = d, n_heads, causal
        self.head_dim = d // n_heads
        self.q = Linear(d, d, rng, bias=False, init="xavier")
        self.k = Linear(d, d, rng, bias=False, init="xavier")
        self.v = Linear(d, d, rng, bias=False, init="xavier")
        self.o = Linear(d, d, rng, init="xavier")
        self.norm1 = LayerNorm(d)
        self.mlp = MLP([d, mlp_ratio * d, d], rng)
        self.norm2 = LayerNorm(d)
        self.enabled = True
        self.last_weights = None

    def _split(self, x):
        # (..., T, d) -> (..., H, T, dh)
        lead = x.shape[:-2]
        t = x.shape[-2]
        x = x.reshape(lead + (t, self.n_heads, self.head_dim))
        return x.swapaxes(-2, -3)

    def attention(self, x):
        t = x.shape[-2]
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.head_dim))
        if self.causal:
            mask = np.triu(np.full((t, t), -1e9, dtype=x.dtype), k=1)
            scores = scores + mask
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = (weights @ v).swapaxes(-2, -3)
        ctx = ctx.reshape(x.shape[:-1] + (self.d,))
        return self.o(ctx)

    def forward(self, x):
        if x.shape[-1] != self.d:
            raise ShapeError(f"attention block width {self.d} does not match input shape {x.shape}")
        if x.ndim < 2 or x.shape[-2] < 1:
            raise ShapeError(f"attention block needs (..., T>=1, d) input, got {x.shape}")
        if self.enabled:
            x = self.norm1(x + self.attention(x))
        else:
            self.last_weights = None
            x = self.norm1(x)
        return self.norm2(x + self.mlp(x))


# ----------------------------------------------------------------- optimizer
class AdamW:
    """Adam with decoupled weight decay.  Gradients are read, never cleared."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ParameterError(f"weight decay must be non-negative, got {weight_decay}")
        if isinstance(named_params, dict):
            named_params = list(named_params.items())
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ParameterError("parameter names must be unique")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                p.data = p.data * p.data.dtype.type(1.0 - lr * self.weight_decay)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - lr * update).astype(p.dtype)

    def state_dict(self):
        out = {}
        for name, _ in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        out["adam.step"] = np.array([self.step_count], dtype=np.int64)
        return out

    def load_state_dict(self, state):
        for name, _ in self.params:
            self.m[name] = np.array(state[f"adam.m.{name}"])
            self.v[name] = np.array(state[f"adam.v.{name}"])
        self.step_count = int(state["adam.step"][0])


def grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm):
    """Rescale the gradients of ``params`` so their joint L2 norm is at most ``max_norm``.

    Returns the scale applied (1.0 when nothing was clipped).
    """
    if max_norm <= 0:
        raise ParameterError(f"max_norm must be positive, got {max_norm}")
    norm = grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad = (p.grad * scale).astype(p.grad.dtype)
    return scale


# ---------------------------------------------------------------- checkpoint
CHECKPOINT_MAGIC = b"PHYMCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors, meta=None):
    """Write a named-tensor container.

    Layout: magic, u32 version, u32 meta length, meta JSON, u32 tensor count,
    then per tensor: u32 name length, name, u8 dtype length, dtype str,
    u32 ndim, u64 shape entries, u64 byte count, raw little-endian C-order bytes.
    Tensors are written in sorted name order so identical content gives
    identical files.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        nb = name.encode()
        dt = arr.dtype.str.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", len(dt)))
        buf.write(dt)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        raw = arr.tobytes()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(tensors, meta)`` from a file written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path} is not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    meta = json.loads(data[pos : pos + meta_len])
    pos += meta_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = data[pos : pos + name_len].decode()
        pos += name_len
        (dt_len,) = take("<B")
        dtype = np.dtype(data[pos : pos + dt_len].decode())
        pos += dt_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        (nbytes,) = take("<Q")
        tensors[name] = np.frombuffer(data[pos : pos + nbytes], dtype=dtype).reshape(shape).copy()
        pos += nbytes
    return tensors, meta

"""Layers, parameter store, Adam with warmup, and the checkpoint container."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor

CHECKPOINT_MAGIC = b"MATCKPT\0"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Named trainable tensors. Names are unique; registration order is kept."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def normal(self, name: str, shape: tuple, std: float) -> Tensor:
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self.add(name, np.ones(shape))

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad**2).sum()) for p in self.params.values()
                             if p.grad is not None))

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale all gradients jointly so their global L2 norm is at most ``max_norm``.

        Returns the norm before clipping.
        """
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ValueError(f"checkpoint/model parameter mismatch: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = store.normal(f"{name}.w", (d_in, d_out), 1.0 / math.sqrt(d_in))
        self.b = store.zeros(f"{name}.b", (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, d: int):
        self.gamma = store.ones(f"{name}.gamma", (d,))
        self.beta = store.zeros(f"{name}.beta", (d,))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)


class Embedding:
    def __init__(self, store: ParameterStore, name: str, n: int, d: int):
        self.table = store.normal(f"{name}.table", (n, d), 1.0 / math.sqrt(d))

    def __call__(self, ids) -> Tensor:
        return ag.embedding(self.table, ids)


class FeedForward:
    def __init__(self, store: ParameterStore, name: str, d: int, d_ff: int):
        self.fc1 = Linear(store, f"{name}.fc1", d, d_ff)
        self.fc2 = Linear(store, f"{name}.fc2", d_ff, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, N, d) -> (B, H, N, d/H)"""
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, N, dk) -> (B, N, H*dk)"""
    b, h, n, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dk)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Masked softmax attention over head-split inputs.

    ``mask`` broadcasts against the (B, H, Nq, Nk) score tensor; ``True``
    marks visible keys. Every query row must see at least one key.
    """
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = ag.where(mask, scores, -1e30)
    return ag.softmax(scores, axis=-1) @ v


class SelfAttention:
    def __init__(self, store: ParameterStore, name: str, d: int, heads: int):
        self.heads = heads
        self.qkv = Linear(store, f"{name}.qkv", d, 3 * d)
        self.out = Linear(store, f"{name}.out", d, d)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        d = x.shape[-1]
        qkv = self.qkv(x)
        q, k, v = (split_heads(qkv[..., i * d:(i + 1) * d], self.heads) for i in range(3))
        return self.out(merge_heads(scaled_dot_attention(q, k, v, mask)))


# -- optimisation --------------------------------------------------------------


@dataclass
class AdamConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0


def inverse_sqrt_lr(step: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear warmup to ``peak_lr`` then decay proportional to 1/sqrt(step)."""
    step = max(step, 1)
    if warmup_steps <= 0:
        return peak_lr
    if step <= warmup_steps:
        return peak_lr * step / warmup_steps
    return peak_lr * math.sqrt(warmup_steps / step)


class Adam:
    """Adam with decoupled weight decay and the warmup/inverse-sqrt schedule."""

    def __init__(self, store: ParameterStore, config: AdamConfig | None = None):
        self.store = store
        self.config = config or AdamConfig()
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in store.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in store.params.items()}

    def lr(self) -> float:
        return inverse_sqrt_lr(self.step_count, self.config.peak_lr, self.config.warmup_steps)

    def step(self) -> float:
        """Clip, update, and return the pre-clip gradient norm."""
        cfg = self.config
        norm = self.store.clip_grad_norm(cfg.clip_norm)
        self.step_count += 1
        lr = self.lr()
        b1c = 1.0 - cfg.beta1**self.step_count
        b2c = 1.0 - cfg.beta2**self.step_count
        for k, p in self.store.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * p.grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * p.grad * p.grad
            update = (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
            if cfg.weight_decay and p.ndim > 1:
                update = update + cfg.weight_decay * p.data
            p.data = p.data - lr * update
        return norm


# -- checkpoint container ------------------------------------------------------
#
# Layout (all little-endian):
#   magic[8] | u32 version | u32 len(meta) | meta utf-8 | u32 n_arrays
#   then per array: u16 len(name) | name utf-8 | u8 ndim | u32 dims[ndim] | f64 data


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: str = "") -> None:
    meta_b = meta.encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta_b)), meta_b,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    meta = buf[off:off + meta_len].decode("utf-8")
    off += meta_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return arrays, meta

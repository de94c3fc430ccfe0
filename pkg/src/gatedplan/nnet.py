"""Small float64 MLPs with hand-written backprop, trained by AdamW under a warmup-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Mlp:
    """ReLU hidden layers, linear output. ``weights[i]`` has shape ``(in, out)``."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.sizes) < 2 or any(s <= 0 for s in self.sizes):
            raise ValueError(f"bad layer sizes {self.sizes}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match sizes {self.sizes}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, zero_last: bool = False) -> Mlp:
        sizes = tuple(int(s) for s in sizes)
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if zero_last and i == len(sizes) - 2:
                w = np.zeros((n_in, n_out))
            else:
                w = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out))
            weights.append(w)
            biases.append(np.zeros(n_out))
        return cls(sizes, weights, biases)

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> Mlp:
        return Mlp(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class Tape:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    squeeze: bool


def forward(m: Mlp, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate on a vector ``(in,)`` or batch ``(B, in)``."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != m.in_dim:
        raise ValueError(f"input width {h.shape[-1]} != {m.in_dim}")
    inputs, preacts = [], []
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return (h[0] if squeeze else h), Tape(inputs, preacts, squeeze)


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dx: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def backward(m: Mlp, tape: Tape, dL_dy: np.ndarray) -> Grads:
    """Reverse-mode gradients of a scalar loss given ``dL/dy`` (summed over the batch)."""
    if len(tape.preacts) != len(m.weights):
        raise ValueError("tape was not produced by this network")
    g = np.asarray(dL_dy, dtype=float)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.preacts[-1].shape:
        raise ValueError(f"gradient shape {g.shape} != output shape {tape.preacts[-1].shape}")
    n = len(m.weights)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * (tape.preacts[i] > 0)
        dws[i] = tape.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ m.weights[i].T
    return Grads(dws, dbs, g[0] if tape.squeeze else g)


@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 0.01
    weight_decay: float = 0.01

    @classmethod
    def zeros_like(cls, params, **kw) -> OptimState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], opt: OptimState,
              lr: float, lr_scale: list[float] | None = None) -> None:
    """AdamW update in place on ``params`` and ``opt``.

    Decay is decoupled: ``theta -= lr * weight_decay * theta`` independent of the
    gradient. ``lr_scale`` optionally multiplies the rate per parameter group.
    """
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise ValueError("params and grads disagree with the optimizer state in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient at optimizer step {opt.step}")
    b1, b2 = opt.betas
    opt.step += 1
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for i, (p, g) in enumerate(zip(params, grads)):
        r = lr * (lr_scale[i] if lr_scale is not None else 1.0)
        opt.m[i] *= b1
        opt.m[i] += (1.0 - b1) * g
        opt.v[i] *= b2
        opt.v[i] += (1.0 - b2) * g * g
        m_hat = opt.m[i] / c1
        v_hat = opt.v[i] / c2
        p -= r * opt.weight_decay * p
        p -= r * m_hat / (np.sqrt(v_hat) + opt.eps)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.warmup_steps < 0 or self.total_steps <= self.warmup_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")


def lr_at(s: LrSchedule, step: int) -> float:
    if step < s.warmup_steps:
        return s.base_lr * step / s.warmup_steps
    if step >= s.total_steps:
        return 0.0
    frac = (step - s.warmup_steps) / (s.total_steps - s.warmup_steps)
    return 0.5 * s.base_lr * (1.0 + math.cos(math.pi * frac))


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference(loss_fn, params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params`` (mutated and restored)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn()
            flat[j] = orig - h
            down = loss_fn()
            flat[j] = orig
            gflat[j] = (up - down) / (2 * h)
        out.append(g)
    return out


"""Numeric primitives shared by the detector: activations, loss, layers,
optimizers and a finite-difference gradient oracle.

Everything runs in float64. Matrices use the column-vector convention:
a dense layer maps ``x`` of shape ``(in,)`` or ``(in, batch)`` to
``W @ x + b`` with ``W`` of shape ``(out, in)``.

Random numbers come from ``numpy.random.Generator`` backed by the PCG64
bit generator (see :func:`make_rng`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

BCE_EPS = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the only RNG used anywhere in the package."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


class Param:
    """A learnable tensor and its gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class LstmParams:
    """One LSTM layer. Gate rows are ordered [input, forget, candidate, output]."""

    U: Param  # (4H, D) input weights
    W: Param  # (4H, H) recurrent weights
    b: Param  # (4H,)

    def __post_init__(self):
        four_h, d = self.U.shape
        if four_h % 4:
            raise ValueError(f"input weight rows must be a multiple of 4, got {self.U.shape}")
        h = four_h // 4
        if self.W.shape != (4 * h, h):
            raise ValueError(f"recurrent weights {self.W.shape} inconsistent with input weights {self.U.shape}")
        if self.b.shape != (4 * h,):
            raise ValueError(f"bias {self.b.shape} inconsistent with hidden size {h}")

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def input_size(self) -> int:
        return self.U.shape[1]

    def params(self) -> list[Param]:
        return [self.U, self.W, self.b]


# activations / loss ---------------------------------------------------------


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0)


def sigmoid(x):
    # tanh form: overflow-free for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax(s, axis: int = 0) -> np.ndarray:
    """Softmax along ``axis`` with max-subtraction. Class scores live on axis 0."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    if s.shape[axis] < 2:
        raise ValueError(f"softmax needs at least 2 scores, got shape {s.shape}")
    z = s - np.max(s, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def bce_loss(y, y_hat, weights=None) -> float:
    """Mean binary cross entropy; predictions are clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"label/prediction length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise ValueError("bce_loss needs at least one sample")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if np.any((y_hat < 0) | (y_hat > 1)):
        raise ValueError("predictions must lie in [0, 1]")
    p = np.clip(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    terms = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    if weights is None:
        return float(-np.mean(terms))
    weights = np.asarray(weights, dtype=np.float64).ravel()
    return float(-np.sum(weights * terms) / y.size)


# layers ---------------------------------------------------------------------


def dense_forward(W: Param, b: Param, x, activation: str = "relu") -> np.ndarray:
    """``activation(W @ x + b)``; x is ``(in,)`` or ``(in, batch)``."""
    x = np.asarray(x, dtype=np.float64)
    out_dim, in_dim = W.shape
    if x.ndim not in (1, 2) or x.shape[0] != in_dim:
        raise ValueError(f"dense shape mismatch: weights {W.shape} vs input {x.shape}")
    if b.shape != (out_dim,):
        raise ValueError(f"dense shape mismatch: weights {W.shape} vs bias {b.shape}")
    z = W.value @ x
    z = z + (b.value if x.ndim == 1 else b.value[:, None])
    if activation == "relu":
        return relu(z)
    if activation == "none":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def dense_backward(W: Param, b: Param, x: np.ndarray, z_out: np.ndarray, d_out: np.ndarray,
                   activation: str = "relu") -> np.ndarray:
    """Accumulate dense-layer grads for batch inputs ``x`` (in, B); return d/dx.

    ``z_out`` is the layer's post-activation output (used for the ReLU mask).
    """
    dz = d_out * (z_out > 0) if activation == "relu" else d_out
    W.grad += dz @ x.T
    b.grad += dz.sum(axis=1)
    return W.value.T @ dz


def lstm_cell_step(p: LstmParams, x_t, h_prev, c_prev):
    """One LSTM step. Vectors may carry a trailing batch axis.

    Returns ``(h_t, c_t)``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    H, D = p.hidden, p.input_size
    if x_t.shape[0] != D or h_prev.shape[0] != H or c_prev.shape[0] != H:
        raise ValueError(
            f"lstm shape mismatch: expected x ({D},..), h/c ({H},..); "
            f"got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape}")
    if not (x_t.shape[1:] == h_prev.shape[1:] == c_prev.shape[1:]):
        raise ValueError(f"lstm batch mismatch: {x_t.shape}, {h_prev.shape}, {c_prev.shape}")
    bias = p.b.value if x_t.ndim == 1 else p.b.value[:, None]
    z = p.U.value @ x_t + p.W.value @ h_prev + bias
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def lstm_sequence_forward(p: LstmParams, xs: np.ndarray):
    """Run a layer over ``xs`` of shape (T, D, B) from zero state.

    Same equations as repeated :func:`lstm_cell_step`. Gate rows are scaled
    by 1/2 (sigmoid) or 1 (candidate) up front so a single ``tanh`` per step
    yields all four gates; halving is exact in floating point. Returns the
    hidden sequence (T, H, B) and a cache for :func:`lstm_sequence_backward`.
    """
    T, D, B = xs.shape
    H = p.hidden
    if D != p.input_size:
        raise ValueError(f"lstm shape mismatch: layer takes {p.input_size} inputs, sequence has {D}")
    scale = np.full((4 * H, 1), 0.5)
    scale[2 * H:3 * H] = 1.0
    shift = 0.5 * (scale == 0.5)  # 0.5 on sigmoid rows, 0 on the candidate rows
    z_in = np.matmul(p.U.value * scale, xs) + (p.b.value[:, None] * scale)[None]  # (T, 4H, B)
    W = p.W.value * scale
    h = np.zeros((H, B))
    c = np.zeros((H, B))
    hs = np.empty((T, H, B))
    cs = np.empty((T, H, B))
    acts = np.empty((T, 4 * H, B))  # i, f, g, o after nonlinearity
    for t in range(T):
        a = acts[t]
        np.tanh(z_in[t] + W @ h, out=a)
        a *= scale
        a += shift
        c = a[H:2 * H] * c + a[:H] * a[2 * H:3 * H]
        h = a[3 * H:] * np.tanh(c)
        cs[t] = c
        hs[t] = h
    return hs, (xs, hs, cs, acts)


def lstm_sequence_backward(p: LstmParams, cache, d_hs: np.ndarray) -> np.ndarray:
    """Backprop through time. ``d_hs`` (T, H, B) is dL/dh at every step.

    Accumulates into p's grads and returns dL/dxs (T, D, B).
    """
    xs, hs, cs, acts = cache
    T, H, B = hs.shape
    i, f, g, o = acts[:, :H], acts[:, H:2 * H], acts[:, 2 * H:3 * H], acts[:, 3 * H:]
    tc = np.tanh(cs)
    c_prev = np.concatenate([np.zeros((1, H, B)), cs[:-1]])
    # per-step factors: dz_{i,f,g} = dc * k3, dz_o = dh * k_o, dc gets dh * o * tanh'(c)
    k3 = np.stack([g * i * (1.0 - i), c_prev * f * (1.0 - f), i * (1.0 - g * g)], axis=1)  # (T, 3, H, B)
    k_o = tc * o * (1.0 - o)
    o_dtanh = o * (1.0 - tc * tc)
    W_T = p.W.value.T
    dz = np.empty((T, 4 * H, B))
    dh_next = np.zeros((H, B))
    dc_next = np.zeros((H, B))
    for t in reversed(range(T)):
        dh = d_hs[t] + dh_next
        dc = dh * o_dtanh[t] + dc_next
        d = dz[t]
        np.multiply(dc[None], k3[t], out=d[:3 * H].reshape(3, H, B))
        np.multiply(dh, k_o[t], out=d[3 * H:])
        dh_next = W_T @ d
        dc_next = dc * f[t]
    p.U.grad += _time_batch_flat(dz) @ _time_batch_flat(xs).T
    if T > 1:
        p.W.grad += _time_batch_flat(dz[1:]) @ _time_batch_flat(hs[:-1]).T
    p.b.grad += dz.sum(axis=(0, 2))
    return np.matmul(p.U.value.T, dz)


def _time_batch_flat(a: np.ndarray) -> np.ndarray:
    """(T, K, B) -> (K, T*B)."""
    return a.transpose(1, 0, 2).reshape(a.shape[1], -1)


# initialisation -------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_dense(rng: np.random.Generator, name: str, in_dim: int, out_dim: int) -> tuple[Param, Param]:
    return (Param(f"{name}.W", glorot_uniform(rng, (out_dim, in_dim))),
            Param(f"{name}.b", np.zeros(out_dim)))


def init_lstm(rng: np.random.Generator, name: str, in_dim: int, hidden: int) -> LstmParams:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return LstmParams(
        U=Param(f"{name}.U", glorot_uniform(rng, (4 * hidden, in_dim))),
        W=Param(f"{name}.W", glorot_uniform(rng, (4 * hidden, hidden))),
        b=Param(f"{name}.b", b),
    )


# optimizers -----------------------------------------------------------------


class SGD:
    def __init__(self, lr: float = 0.01):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    def step(self, params: Sequence[Param]) -> None:
        for p in params:
            p.value -= self.lr * p.grad


class Adam:
    """Adam with bias-corrected moments kept per tensor (keyed by name)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Sequence[Param]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            if p.name not in self.m:
                self.m[p.name] = np.zeros_like(p.value)
                self.v[p.name] = np.zeros_like(p.value)
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * p.grad
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * p.grad ** 2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    def build(self):
        self.validate()
        if self.kind == "sgd":
            return SGD(self.lr)
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


def optimizer_step(params: Sequence[Param], kind: str = "adam", state=None, **hyper):
    """Functional wrapper: apply one update and return the optimizer (carry it as ``state``)."""
    opt = state if state is not None else OptimizerConfig(kind=kind, **hyper).build()
    opt.step(params)
    return opt


# finite differences ---------------------------------------------------------


def finite_difference_gradient(f: Callable[[], float], params: Sequence[Param], eps: float = 1e-5
                               ) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` w.r.t. every entry of ``params``.

    ``f`` takes no arguments and reads the current parameter values; each
    entry is perturbed in place and restored exactly afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = {}
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)  # view
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = f()
            flat[k] = orig - eps
            f_minus = f()
            flat[k] = orig
            gflat[k] = (f_plus - f_minus) / (2.0 * eps)
        grads[p.name] = g
    return grads


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


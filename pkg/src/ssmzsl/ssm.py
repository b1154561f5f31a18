"""Linear state space machinery and the input-dependent selective scan.

The scalar helpers (``discretize_zoh``, ``ssm_recurrence``,
``ssm_conv_kernel``, ``ssm_conv_apply``) work on plain numpy arrays and serve
as reference paths.  :func:`selective_scan` is the differentiable version used
by the encoder; it unrolls the recurrence on the tape, one step at a time.

Shapes: ``S`` sequences, ``L`` steps, ``D`` channels, ``N`` state size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, param
from .tensor import TAYLOR_CUTOFF, Tensor


def _exp_ratio(z):
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < TAYLOR_CUTOFF
    safe = np.where(small, 1.0, z)
    return np.where(small, 1 + z / 2 + z * z / 6, np.expm1(safe) / safe)


def discretize_zoh(a, b, delta, exact: bool = True):
    """Zero-order hold for a diagonal system.

    Returns ``(a_bar, b_bar)`` with ``a_bar = exp(delta*a)`` and
    ``b_bar = (exp(delta*a) - 1) / (delta*a) * delta*b``.  With
    ``exact=False`` the input matrix uses the first-order ``delta*b``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("delta must be strictly positive")
    z = delta * np.asarray(a, dtype=np.float64)
    a_bar = np.exp(z)
    gain = _exp_ratio(z) if exact else 1.0
    b_bar = gain * delta * np.asarray(b, dtype=np.float64)
    if a_bar.ndim == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


def ssm_recurrence(a_bar, b_bar, c, x) -> np.ndarray:
    """h_t = a_bar*h_{t-1} + b_bar*x_t, y_t = c.h_t with h_0 = 0.

    ``a_bar``, ``b_bar``, ``c`` are per-state vectors of length N (a diagonal
    transition); ``x`` is a scalar sequence.
    """
    a_bar, b_bar, c = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (a_bar, b_bar, c))
    x = np.asarray(x, dtype=np.float64)
    h = np.zeros_like(a_bar)
    y = np.empty(len(x))
    for t, xt in enumerate(x):
        h = a_bar * h + b_bar * xt
        y[t] = c @ h
    return y


def ssm_conv_kernel(a_bar, b_bar, c, length: int) -> np.ndarray:
    """(C B, C A B, ..., C A^{L-1} B) for a time-invariant diagonal system."""
    if length < 1:
        raise ValueError("kernel length must be at least 1")
    a_bar, b_bar, c = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (a_bar, b_bar, c))
    powers = a_bar[None, :] ** np.arange(length)[:, None]
    return powers @ (c * b_bar)


def ssm_conv_apply(kernel, x) -> np.ndarray:
    """Causal convolution y_t = sum_{k<=t} K_k x_{t-k}."""
    x = np.asarray(x, dtype=np.float64)
    return np.convolve(x, np.asarray(kernel, dtype=np.float64)[: len(x)])[: len(x)]


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass
class DiscreteSsm:
    a_bar: Tensor
    b_bar: Tensor


class SsmParams(Module):
    """Parameters of one selective SSM over ``D`` channels with ``N`` states.

    ``A = -exp(a_log)`` is diagonal and strictly negative; the step size is
    ``softplus(x @ w_delta + delta_bias)``.
    """

    def __init__(self, d: int, n: int, rng: np.random.Generator, dtype=np.float32,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        s = 1.0 / np.sqrt(d)
        self.a_log = param(np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (d, 1)), dtype)
        self.d_skip = param(np.ones(d), dtype)
        self.w_b = param(rng.uniform(-s, s, (d, n)), dtype)
        self.b_b = param(np.zeros(n), dtype)
        self.w_c = param(rng.uniform(-s, s, (d, n)), dtype)
        self.b_c = param(np.zeros(n), dtype)
        self.w_delta = param(rng.uniform(-s, s, (d, d)), dtype)
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), d))
        self.delta_bias = param(inverse_softplus(dt), dtype)

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]


def discretize(params: SsmParams, x: Tensor, exact: bool = True):
    """Per-step ``(a_bar, b_bar, c)`` for input ``x`` of shape (S, L, D)."""
    S, L, D = x.shape
    N = params.state_dim
    full = (S, L, D, N)
    b_t = T.linear(x, params.w_b, params.b_b)
    c_t = T.linear(x, params.w_c, params.b_c)
    delta = T.softplus(T.linear(x, params.w_delta, params.delta_bias))
    a = T.scale(T.exp(params.a_log), -1.0)
    delta4 = T.broadcast_to(T.reshape(delta, (S, L, D, 1)), full)
    dA = T.mul(delta4, T.broadcast_to(a, full))
    a_bar = T.exp(dA)
    b4 = T.broadcast_to(T.reshape(b_t, (S, L, 1, N)), full)
    b_bar = T.mul(delta4, b4)
    if exact:
        b_bar = T.mul(T.exp_ratio(dA), b_bar)
    return DiscreteSsm(a_bar, b_bar), c_t


def selective_scan(params: SsmParams, x: Tensor, exact: bool = True) -> Tensor:
    """Selective scan over ``x`` (S, L, D); returns (S, L, D)."""
    if x.ndim != 3 or x.shape[-1] != params.channels:
        raise ValueError(f"selective_scan: expected (S, L, {params.channels}) input, got {x.shape}")
    S, L, D = x.shape
    N = params.state_dim
    full = (S, L, D, N)
    disc, c_t = discretize(params, x, exact)
    u = T.mul(disc.b_bar, T.broadcast_to(T.reshape(x, (S, L, D, 1)), full))
    h = T.take(u, 0, axis=1)
    states = [h]
    for t in range(1, L):
        h = T.add(T.mul(T.take(disc.a_bar, t, axis=1), h), T.take(u, t, axis=1))
        states.append(h)
    hs = T.stack(states, axis=1)
    c4 = T.broadcast_to(T.reshape(c_t, (S, L, 1, N)), full)
    y = T.reduce("sum", T.mul(hs, c4), axis=-1)
    skip = T.mul(T.broadcast_to(params.d_skip, (S, L, D)), x)
    return T.add(y, skip)

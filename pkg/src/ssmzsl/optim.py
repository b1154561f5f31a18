"""SGD with momentum and coupled L2 weight decay."""
from __future__ import annotations

import numpy as np


def sgd_step(params, grads, state, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
    """In-place update of ``params`` (tensors); ``state`` holds one velocity per parameter.

    g <- grad + wd * p;  v <- momentum * v + g;  p <- p - lr * v
    """
    if not state:
        state.extend(np.zeros_like(p.data) for p in params)
    for p, g, v in zip(params, grads, state, strict=True):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        dt = p.dtype.type
        g = g + dt(weight_decay) * p.data
        v *= dt(momentum)
        v += g
        p.data = p.data - dt(lr) * v
    return params, state

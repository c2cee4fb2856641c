"""AdamW with bias correction and the step-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import NumericalError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Iterable[tuple[str, Tensor]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.9,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """One decoupled-weight-decay Adam update, applied in place to ``param.data``.

    update = -lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)

    Parameters without a gradient are treated as having a zero gradient.
    """
    params = list(params)
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
            raise NumericalError(f"non-finite gradient in {name}: {bad} of {p.grad.size} entries at step {state.step + 1}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        dt = p.data.dtype
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (beta1 * m + (1 - beta1) * g).astype(dt, copy=False)
        v = (beta2 * v + (1 - beta2) * g * g).astype(dt, copy=False)
        m_hat = m / bc1
        v_hat = v / bc2
        upd = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            upd = upd + weight_decay * p.data
        p.data = (p.data - lr * upd).astype(dt, copy=False)
        state.m[name] = m
        state.v[name] = v
    return state


def lr_at(epoch: int, lr0: float, halve_every: int) -> float:
    """lr0 * 0.5 ** floor(epoch / halve_every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * 0.5 ** (epoch // halve_every)

"""Adam with bias correction and the piecewise-constant learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tuple[str, Tensor]], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update of every ``(name, tensor)``; missing grads count as zero."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if g.shape != p.data.shape:
            raise ShapeError(f"adam: gradient for {name} has extents {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        elif m.shape != p.data.shape:
            raise ShapeError(f"adam: moment for {name} has extents {m.shape}, parameter {p.data.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_schedule(epoch: float, base_lr: float = 5e-4, factor: float = 0.1,
                decay_epochs: Sequence[float] = (90, 120)) -> float:
    """``base_lr * factor**(number of decay boundaries reached)``.

    Products go through ``Decimal`` so that 5e-4 * 0.1 is exactly the double 5e-5.
    """
    n = sum(1 for b in decay_epochs if epoch >= b)
    return float(Decimal(repr(base_lr)) * Decimal(repr(factor)) ** n)

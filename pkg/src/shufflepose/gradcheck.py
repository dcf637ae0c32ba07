"""Central finite-difference checking of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    name: str
    checked: int
    max_rel_error: float
    max_abs_error: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.checked} coords, "
                f"max rel {self.max_rel_error:.2e}, max abs {self.max_abs_error:.2e}")


def numeric_gradient(loss_fn: Callable[[], Tensor], t: Tensor, index: int, eps: float = 1e-5) -> float:
    flat = t.data.reshape(-1)
    orig = flat[index]
    with no_grad():
        flat[index] = orig + eps
        plus = loss_fn().item()
        flat[index] = orig - eps
        minus = loss_fn().item()
    flat[index] = orig
    return (plus - minus) / (2.0 * eps)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    name: str = "",
    eps: float = 1e-5,
    rtol: float = 1e-5,
    atol: float = 1e-8,
    max_per_tensor: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckResult:
    """Compare analytic and central-difference gradients of a scalar loss.

    A coordinate passes when ``|analytic - numeric| <= max(rtol * max(|analytic|, |numeric|), atol)``.
    The reported relative error ignores coordinates whose gradient is below ``atol``.
    With ``max_per_tensor`` set, a random subset of coordinates of each tensor is probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    saved_flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    try:
        loss_fn().backward()
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]
    finally:
        for t, flag in zip(tensors, saved_flags):
            t.requires_grad = flag

    checked, worst_rel, worst_abs, ok = 0, 0.0, 0.0, True
    for t, ga in zip(tensors, analytic):
        size = t.data.size
        if max_per_tensor is None or size <= max_per_tensor:
            indices = range(size)
        else:
            indices = rng.choice(size, size=max_per_tensor, replace=False)
        ga_flat = ga.reshape(-1)
        for i in indices:
            a = float(ga_flat[i])
            num = numeric_gradient(loss_fn, t, int(i), eps)
            err = abs(a - num)
            scale = max(abs(a), abs(num))
            if err > max(rtol * scale, atol):
                ok = False
            if scale > atol:
                worst_rel = max(worst_rel, err / scale)
            worst_abs = max(worst_abs, err)
            checked += 1
    for t in tensors:
        t.grad = None
    return GradCheckResult(name, checked, worst_rel, worst_abs, ok)


def projected_loss(fn: Callable[[], Tensor], seed: int = 0) -> Callable[[], Tensor]:
    """Turn a tensor-valued ``fn`` into a scalar via a fixed random projection."""
    from .tensor import weighted_sum

    cache = {}

    def loss() -> Tensor:
        out = fn()
        if "w" not in cache:
            cache["w"] = np.random.default_rng(seed).standard_normal(out.shape)
        return weighted_sum(out, cache["w"])

    return loss

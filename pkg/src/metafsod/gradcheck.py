"""Finite-difference verification of taped gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad

__all__ = ["grad_check"]


def grad_check(f, inputs, eps: float = 1e-6) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    ``f`` must be a deterministic function of the given tensors that
    returns a scalar built from taped primitives.  Returns the maximum
    over all coordinates of ``|analytic - numeric| / max(1, |numeric|)``.
    Raises ``ArithmeticError`` if any evaluation is non-finite.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    inputs = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]

    loss = f(*inputs)
    if not np.isfinite(loss.data).all():
        raise ArithmeticError("non-finite loss in grad_check forward pass")
    for t in inputs:
        t.zero_grad()
    backward(loss)
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        for t in inputs
    ]

    def value_at() -> float:
        with no_grad():
            out = f(*inputs).item()
        if not np.isfinite(out):
            raise ArithmeticError("non-finite loss while perturbing inputs")
        return out

    worst = 0.0
    for t, an in zip(inputs, analytic):
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = value_at()
            flat[j] = orig - eps
            down = value_at()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(an_flat[j] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst

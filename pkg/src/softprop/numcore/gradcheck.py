"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from softprop.errors import NonFiniteError
from softprop.numcore.tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, h: float, coords: Optional[Sequence[int]] = None):
    """Central differences of the scalar ``fn()`` with respect to ``param``'s entries."""
    flat = param.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size, dtype=np.float64)
    with no_grad():
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            up = fn().item()
            flat[i] = old - h
            down = fn().item()
            flat[i] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite evaluation at coordinate {i}")
            out[i] = (up - down) / (2.0 * h)
    return out.reshape(param.shape)


def grad_check(fn: Callable[[], Tensor], params, h: float = 1e-4, coords: Optional[dict] = None) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``fn`` takes no arguments and closes over ``params`` (a tensor or list of
    tensors), which are perturbed in place. ``coords`` optionally maps a
    parameter index to the flat coordinates to probe.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = [params] if isinstance(params, Tensor) else list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    root = fn()
    if not np.isfinite(root.data).all():
        raise NonFiniteError("function value is not finite")
    root.backward()
    worst = 0.0
    for k, p in enumerate(params):
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
        sel = None if coords is None else coords.get(k)
        numeric = numerical_grad(fn, p, h, sel)
        if sel is not None:
            idx = np.asarray(sel)
            analytic, numeric = analytic.reshape(-1)[idx], numeric.reshape(-1)[idx]
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst

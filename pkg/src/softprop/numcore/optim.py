"""Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from softprop.errors import ShapeError
from softprop.numcore.tensor import Tensor, check_finite, is_checked


@dataclass
class AdamState:
    """Moment accumulators for a fixed, ordered list of parameters.

    ``step_count`` counts calls to :func:`adam_step`. ``param_steps`` counts
    updates per parameter; parameters that received no gradient in a call are
    left untouched and keep their own bias-correction clock.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    param_steps: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        state.param_steps = [0] * len(params)
        return state


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    A ``None`` gradient means the parameter was not reached by the loss; its
    values and moments stay bitwise unchanged.
    """
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ShapeError(
            f"adam_step got {len(params)} params, {len(grads)} grads, {len(state.first_moment)} moment slots"
        )
    for p, g, m in zip(params, grads, state.first_moment):
        if g is not None and (g.shape != p.shape or m.shape != p.shape):
            raise ShapeError(f"adam_step shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        if g is not None and is_checked():
            check_finite(g, f"gradient of {p!r}")
    state.step_count += 1
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        dt = p.data.dtype.type
        state.param_steps[i] += 1
        t = state.param_steps[i]
        m, v = state.first_moment[i], state.second_moment[i]
        m *= dt(state.beta1)
        m += dt(1.0 - state.beta1) * g
        v *= dt(state.beta2)
        v += dt(1.0 - state.beta2) * np.square(g)
        # lr * m_hat / (sqrt(v_hat) + eps), arranged to reuse one scratch buffer
        buf = np.sqrt(v)
        buf *= dt(1.0 / np.sqrt(1.0 - state.beta2**t))
        buf += dt(state.epsilon)
        np.divide(m, buf, out=buf)
        buf *= dt(state.lr / (1.0 - state.beta1**t))
        p.data -= buf

class Adam:
    """Convenience wrapper binding :class:`AdamState` to a parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

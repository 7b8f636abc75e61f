from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in tensor {name!r}")
        self.tensor_name = name


@dataclass
class AdamState:
    """Adam optimizer state. Defaults follow the training setup (lr 1e-4, betas 0.9/0.999)."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], lr: float | None = None) -> None:
    """One bias-corrected Adam update in place, then clear the gradients.

    Parameters without a gradient are treated as having a zero gradient.
    A NaN/inf gradient aborts before any parameter is touched.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    state.step_count += 1
    t = state.step_count
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None

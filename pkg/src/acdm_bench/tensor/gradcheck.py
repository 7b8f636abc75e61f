from __future__ import annotations

import numpy as np

from .core import Tensor, backward


def numeric_grad(fn, inputs: list[Tensor], wrt: int, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn(*inputs)`` w.r.t. ``inputs[wrt]``."""
    x = inputs[wrt].data
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(*inputs).data)
        flat[i] = orig - h
        fm = float(fn(*inputs).data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def gradcheck(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must return a scalar Tensor. Relative error is measured as
    ``|a - n| / max(|a|, |n|, 1e-8)`` over all entries of all inputs that
    require a gradient; the worst entry is returned.
    """
    for t in inputs:
        t.grad = None
    backward(fn(*inputs))
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(fn, inputs, i, h)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        # entries whose true gradient is ~0 are judged absolutely
        err = np.where(scale > 1e-6, np.abs(analytic - numeric) / scale, np.abs(analytic - numeric))
        worst = max(worst, float(err.max()))
    return worst

"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, inputs, index, h=1e-5):
    """Central-difference gradient of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]``."""
    x = inputs[index]
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(*inputs).item()
        flat[i] = orig - h
        fm = fn(*inputs).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(fn, inputs, h=1e-5):
    """Return the worst relative error over all requires-grad inputs.

    ``fn`` must be deterministic: reseed any dropout rng inside it.
    """
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(fn, inputs, i, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def param(shape, rng, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

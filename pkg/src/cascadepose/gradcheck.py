"""Central finite-difference gradient checking for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_gradient(fn, tensors, h=1e-5):
    """Central-difference gradient of scalar ``fn()`` w.r.t. each tensor.

    ``fn`` must read the current ``.data`` of the given tensors; entries are
    perturbed in place one coordinate at a time.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn())
            flat[i] = orig - h
            f_minus = float(fn())
            flat[i] = orig
            g.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def check_gradients(build, leaves, h=1e-5, rtol=1e-4, atol=1e-7):
    """Compare autodiff gradients of scalar ``build()`` against finite differences.

    ``build`` constructs and returns the scalar loss Tensor from the leaf
    tensors (which must have requires_grad=True). Returns the max relative
    error observed; raises AssertionError past tolerance.
    """
    for t in leaves:
        assert isinstance(t, Tensor) and t.requires_grad
        t.grad = None
    loss = build()
    loss.backward()
    analytic = [np.array(t.grad, dtype=np.float64, copy=True) for t in leaves]
    numeric = numeric_gradient(lambda: build().data, leaves, h=h)
    worst = 0.0
    for t, a, n in zip(leaves, analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol / rtol)
        rel = np.abs(a - n) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert np.all(rel <= rtol), (
            f"gradient mismatch (max rel err {rel.max():.3e}) for leaf shape {t.data.shape}"
        )
    return worst

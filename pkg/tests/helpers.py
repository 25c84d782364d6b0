"""Shared test utilities: finite-difference oracles and parameter flattening."""

import numpy as np


def rel_error(a, b, floor=1e-12):
    """Norm-based relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


def fd_grad(fn, x, eps=1e-6):
    """Central finite differences of a scalar function w.r.t. one array.

    Perturbs ``x`` in place (and restores it), so closures over ``x`` observe
    the perturbation; ``x`` must already be float64.
    """
    x = np.asarray(x)
    assert x.dtype == np.float64, "finite differences need float64 inputs"
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def fd_param_grads(loss_fn, params, eps=1e-6):
    """Central finite differences of ``loss_fn(params)`` per parameter tensor."""
    grads = {}
    for name, arr in params.items():
        grads[name] = fd_grad(lambda _a, n=name: loss_fn(params), arr, eps)
    return grads


def param_count(params):
    return sum(v.size for v in params.values())


def random_unit_rows(rng, n, dim, dtype=np.float64):
    x = rng.normal(size=(n, dim)).astype(dtype)
    return x / np.linalg.norm(x, axis=1, keepdims=True)

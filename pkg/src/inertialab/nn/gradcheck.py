"""Central finite-difference utilities for verifying analytic gradients."""

from __future__ import annotations

import numpy as np

__all__ = ["numeric_gradient", "max_relative_error"]


def numeric_gradient(func, array, eps=1e-5):
    """Central-difference gradient of scalar ``func`` w.r.t. ``array``.

    ``func`` must not retain references into ``array``: it is re-evaluated
    with each element perturbed by +/-eps.
    """
    array = np.asarray(array, dtype=np.float64)
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = func(array)
        flat[i] = orig - eps
        down = func(array)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    """Worst elementwise relative difference between two gradients.

    Elements where both magnitudes fall below ``floor`` are treated as
    matching zeros.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = scale > floor
    if not ok.any():
        return 0.0
    return float(np.max(np.abs(analytic[ok] - numeric[ok]) / scale[ok]))

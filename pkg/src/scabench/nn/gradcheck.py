"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

DEFAULT_STEP = 1e-5


def finite_difference(loss_fn, array: np.ndarray, eps: float = DEFAULT_STEP) -> np.ndarray:
    """Numeric gradient of ``loss_fn()`` w.r.t. ``array``, element by element.

    ``loss_fn`` must recompute the loss from current array contents; the
    array is perturbed in place and restored.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        up = loss_fn()
        flat[i] = saved - eps
        down = loss_fn()
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise relative error with an absolute floor.

    |a - n| / (|a| + |n| + 1e-4): strict where gradients are O(1), tolerant
    of finite-difference roundoff where both gradients are near zero.
    """
    diff = np.abs(analytic - numeric)
    scale = np.abs(analytic) + np.abs(numeric) + 1e-4
    return float((diff / scale).max()) if diff.size else 0.0


def check_gradients(loss_fn, pairs, eps: float = DEFAULT_STEP) -> float:
    """Worst relative error across (array, analytic_gradient) pairs."""
    worst = 0.0
    for array, analytic in pairs:
        numeric = finite_difference(loss_fn, array, eps=eps)
        worst = max(worst, relative_error(np.asarray(analytic), numeric))
    return worst

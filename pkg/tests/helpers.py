"""Shared test utilities: finite-difference oracle and small model builders."""

from __future__ import annotations

import numpy as np

from relab import tensor as T

# Central-difference step pinned at 1e-5 in 64-bit verification mode.
FD_STEP = 1e-5
# rtol is the headline tolerance; atol guards coordinates whose true
# gradient is near zero, where the fd roundoff floor (~1e-11) would
# otherwise dominate the ratio. A wrong backward formula produces errors
# proportional to the gradient itself, so it still trips the rtol term.
GRAD_RTOL = 1e-6
GRAD_ATOL = 1e-9


def central_difference(loss_fn, arrays: dict[str, np.ndarray], name: str,
                       index: int, h: float = FD_STEP) -> float:
    """Independent oracle: (f(x+h) - f(x-h)) / 2h on one coordinate."""
    flat = arrays[name].ravel()
    orig = flat[index]
    flat[index] = orig + h
    lp = loss_fn(arrays)
    flat[index] = orig - h
    lm = loss_fn(arrays)
    flat[index] = orig
    return (lp - lm) / (2.0 * h)


def gradcheck(loss_and_grads, loss_fn, arrays: dict[str, np.ndarray],
              rng: np.random.Generator, coords_per_tensor: int = 5,
              rtol: float = GRAD_RTOL, atol: float = GRAD_ATOL) -> float:
    """Compare taped gradients against central differences.

    ``loss_and_grads(arrays) -> (loss, {name: grad})`` is the path under
    test; ``loss_fn(arrays) -> float`` re-evaluates the loss for the
    oracle. Returns the worst guarded error margin (<= 0 means pass).
    """
    _, grads = loss_and_grads(arrays)
    worst = -np.inf
    for name, arr in arrays.items():
        assert arr.dtype == np.float64, "gradcheck runs in verification mode"
        n = min(coords_per_tensor, arr.size)
        idxs = rng.choice(arr.size, size=n, replace=False)
        for i in idxs:
            fd = central_difference(loss_fn, arrays, name, int(i))
            ad = grads[name].ravel()[int(i)]
            margin = abs(ad - fd) - (rtol * max(abs(ad), abs(fd)) + atol)
            worst = max(worst, margin)
            assert margin <= 0, (
                f"{name}[{i}]: autodiff {ad:.12e} vs central diff {fd:.12e}")
    return worst


def scalar_readout(t: T.Tensor, weights: np.ndarray | None = None) -> T.Tensor:
    """Deterministic scalar projection of a tensor for gradient tests."""
    if weights is None:
        weights = (np.arange(t.data.size, dtype=np.float64)
                   .reshape(t.data.shape) % 7 + 1) * 0.1
    return T.tsum(T.mul(t, T.Tensor(weights, dtype=np.float64)))

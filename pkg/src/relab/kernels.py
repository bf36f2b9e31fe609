"""Hot numeric kernels with two interchangeable backends.

The element-wise and row-wise inner loops that dominate a training step
(GELU, layer norm, softmax, the Adam update, and the scatter-add used by
embedding/gather backward) exist twice:

* a ``numba`` backend: ``@njit`` kernels with explicit sequential,
  row-major loops (the default when numba imports), and
* a pure-``numpy`` fallback using vectorized ufuncs.

The active backend is chosen at import from the ``RELAB_BACKEND``
environment variable (``auto`` | ``numba`` | ``numpy``) and can be
switched at runtime with :func:`set_backend` (used by the benchmark and
the test suite). Matrix products are delegated to numpy's BLAS in both
backends; reimplementing GEMM in numba would only slow things down.

Each backend is bit-deterministic run to run. The two backends may
disagree in the last ulp because numpy reductions are pairwise while the
numba loops accumulate strictly sequentially; pin ``RELAB_BACKEND`` when
bit-exact reproduction across machines matters.

Benchmark both with ``python benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import special as _special

from .errors import BackendError

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _gelu_fwd_numpy(x):
    return (0.5 * x * (1.0 + _special.erf(x * _SQRT1_2))).astype(x.dtype, copy=False)


def _gelu_bwd_numpy(x, gout):
    cdf = 0.5 * (1.0 + _special.erf(x * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (gout * (cdf + x * pdf)).astype(x.dtype, copy=False)


def _layernorm_fwd_numpy(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    y = xhat * gamma + beta
    return y.astype(x.dtype, copy=False), xhat.astype(x.dtype, copy=False), rstd[:, 0].astype(x.dtype, copy=False)


def _layernorm_bwd_numpy(xhat, rstd, gamma, gout):
    dxhat = gout * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    gin = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dgamma = (gout * xhat).sum(axis=0)
    dbeta = gout.sum(axis=0)
    return gin.astype(xhat.dtype, copy=False), dgamma, dbeta


def _softmax2d_fwd_numpy(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(x.dtype, copy=False)


def _softmax2d_bwd_numpy(p, gout):
    inner = (gout * p).sum(axis=1, keepdims=True)
    return (p * (gout - inner)).astype(p.dtype, copy=False)


def _adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / bc1
    vhat = v / bc2
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def _scatter_add_rows_numpy(table, ids, rows):
    np.add.at(table, ids, rows)


# ---------------------------------------------------------------------------
# numba backend (sequential, row-major accumulation)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _gelu_fwd_numba(x):
    n = x.shape[0]
    out = np.empty_like(x)
    for i in range(n):
        xi = x[i]
        out[i] = 0.5 * xi * (1.0 + math.erf(xi * _SQRT1_2))
    return out


@njit(cache=True)
def _gelu_bwd_numba(x, gout):
    n = x.shape[0]
    out = np.empty_like(x)
    for i in range(n):
        xi = x[i]
        cdf = 0.5 * (1.0 + math.erf(xi * _SQRT1_2))
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * xi * xi)
        out[i] = gout[i] * (cdf + xi * pdf)
    return out


@njit(cache=True)
def _layernorm_fwd_numba(x, gamma, beta, eps):
    rows, cols = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(rows, dtype=x.dtype)
    for i in range(rows):
        mean = 0.0
        for j in range(cols):
            mean += x[i, j]
        mean /= cols
        var = 0.0
        for j in range(cols):
            d = x[i, j] - mean
            var += d * d
        var /= cols
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(cols):
            h = (x[i, j] - mean) * r
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, rstd


@njit(cache=True)
def _layernorm_bwd_numba(xhat, rstd, gamma, gout):
    rows, cols = xhat.shape
    gin = np.empty_like(xhat)
    dgamma = np.zeros(cols, dtype=xhat.dtype)
    dbeta = np.zeros(cols, dtype=xhat.dtype)
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            d = gout[i, j] * gamma[j]
            m1 += d
            m2 += d * xhat[i, j]
        m1 /= cols
        m2 /= cols
        r = rstd[i]
        for j in range(cols):
            d = gout[i, j] * gamma[j]
            gin[i, j] = r * (d - m1 - xhat[i, j] * m2)
            dgamma[j] += gout[i, j] * xhat[i, j]
            dbeta[j] += gout[i, j]
    return gin, dgamma, dbeta


@njit(cache=True)
def _softmax2d_fwd_numba(x):
    rows, cols = x.shape
    p = np.empty_like(x)
    for i in range(rows):
        mx = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > mx:
                mx = x[i, j]
        total = 0.0
        for j in range(cols):
            e = math.exp(x[i, j] - mx)
            p[i, j] = e
            total += e
        for j in range(cols):
            p[i, j] /= total
    return p


@njit(cache=True)
def _softmax2d_bwd_numba(p, gout):
    rows, cols = p.shape
    gin = np.empty_like(p)
    for i in range(rows):
        inner = 0.0
        for j in range(cols):
            inner += gout[i, j] * p[i, j]
        for j in range(cols):
            gin[i, j] = p[i, j] * (gout[i, j] - inner)
    return gin


@njit(cache=True)
def _adam_update_numba(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    n = param.shape[0]
    for i in range(n):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        param[i] -= lr * mhat / (math.sqrt(vhat) + eps)


@njit(cache=True)
def _scatter_add_rows_numba(table, ids, rows):
    n, cols = rows.shape
    for i in range(n):
        r = ids[i]
        for j in range(cols):
            table[r, j] += rows[i, j]


_BACKENDS = {
    "numpy": {
        "gelu_fwd": _gelu_fwd_numpy,
        "gelu_bwd": _gelu_bwd_numpy,
        "layernorm_fwd": _layernorm_fwd_numpy,
        "layernorm_bwd": _layernorm_bwd_numpy,
        "softmax2d_fwd": _softmax2d_fwd_numpy,
        "softmax2d_bwd": _softmax2d_bwd_numpy,
        "adam_update": _adam_update_numpy,
        "scatter_add_rows": _scatter_add_rows_numpy,
    },
}
if NUMBA_AVAILABLE:
    _BACKENDS["numba"] = {
        "gelu_fwd": _gelu_fwd_numba,
        "gelu_bwd": _gelu_bwd_numba,
        "layernorm_fwd": _layernorm_fwd_numba,
        "layernorm_bwd": _layernorm_bwd_numba,
        "softmax2d_fwd": _softmax2d_fwd_numba,
        "softmax2d_bwd": _softmax2d_bwd_numba,
        "adam_update": _adam_update_numba,
        "scatter_add_rows": _scatter_add_rows_numba,
    }

_active = dict(_BACKENDS["numpy"])
_active_name = "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def backend_name() -> str:
    """Name of the backend currently dispatched to."""
    return _active_name


def set_backend(name: str) -> str:
    """Switch the active kernel backend; returns the resolved name.

    ``auto`` picks numba when available, else numpy.
    """
    global _active_name
    if name == "auto":
        name = "numba" if NUMBA_AVAILABLE else "numpy"
    if name not in _BACKENDS:
        raise BackendError(
            f"unknown or unavailable kernel backend {name!r}; "
            f"available: {', '.join(available_backends())}",
            requested=name, available=list(available_backends()),
        )
    _active.update(_BACKENDS[name])
    _active_name = name
    return name


# --- public dispatch -------------------------------------------------------


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    """Exact-erf GELU on a flat contiguous array."""
    return _active["gelu_fwd"](x)


def gelu_bwd(x: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return _active["gelu_bwd"](x, gout)


def layernorm_fwd(x2d, gamma, beta, eps):
    """Row-wise layer norm; returns (y, xhat, rstd) for reuse in backward."""
    return _active["layernorm_fwd"](x2d, gamma, beta, eps)


def layernorm_bwd(xhat, rstd, gamma, gout):
    return _active["layernorm_bwd"](xhat, rstd, gamma, gout)


def softmax2d_fwd(x2d: np.ndarray) -> np.ndarray:
    return _active["softmax2d_fwd"](x2d)


def softmax2d_bwd(p: np.ndarray, gout: np.ndarray) -> np.ndarray:
    return _active["softmax2d_bwd"](p, gout)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2) -> None:
    """Fused in-place Adam step on flat arrays; bc1/bc2 are the bias corrections."""
    _active["adam_update"](param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2)


def scatter_add_rows(table, ids, rows) -> None:
    """table[ids[i], :] += rows[i, :], accumulated in index order."""
    _active["scatter_add_rows"](table, ids, rows)


set_backend(os.environ.get("RELAB_BACKEND", "auto"))

"""Backend parity and dispatch tests for the hot kernels."""

import numpy as np
import pytest

from relab import kernels
from relab.errors import BackendError


needs_numba = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE,
                                 reason="numba not installed")


@pytest.fixture
def restore_backend():
    name = kernels.backend_name()
    yield
    kernels.set_backend(name)


def _pairs():
    rng = np.random.default_rng(11)
    x1 = rng.normal(0, 2, 257)
    x2 = rng.normal(0, 1.5, (13, 31))
    g1 = rng.normal(0, 1, 257)
    g2 = rng.normal(0, 1, (13, 31))
    gamma = rng.normal(1, 0.2, 31)
    beta = rng.normal(0, 0.2, 31)
    return x1, x2, g1, g2, gamma, beta


@needs_numba
@pytest.mark.parametrize("dtype,rtol", [(np.float64, 1e-12), (np.float32, 2e-5)])
def test_backends_agree(dtype, rtol):
    x1, x2, g1, g2, gamma, beta = (a.astype(dtype) for a in _pairs())
    nb, npy = kernels._BACKENDS["numba"], kernels._BACKENDS["numpy"]

    np.testing.assert_allclose(nb["gelu_fwd"](x1), npy["gelu_fwd"](x1), rtol=rtol, atol=rtol)
    np.testing.assert_allclose(nb["gelu_bwd"](x1, g1), npy["gelu_bwd"](x1, g1), rtol=rtol, atol=rtol)

    y_a, xh_a, rs_a = nb["layernorm_fwd"](x2, gamma, beta, 1e-12)
    y_b, xh_b, rs_b = npy["layernorm_fwd"](x2, gamma, beta, 1e-12)
    np.testing.assert_allclose(y_a, y_b, rtol=rtol, atol=rtol)
    np.testing.assert_allclose(rs_a, rs_b, rtol=rtol)
    for out_a, out_b in zip(nb["layernorm_bwd"](xh_a, rs_a, gamma, g2),
                            npy["layernorm_bwd"](xh_b, rs_b, gamma, g2)):
        np.testing.assert_allclose(out_a, out_b, rtol=rtol, atol=1e-4 if dtype == np.float32 else rtol)

    p_a = nb["softmax2d_fwd"](x2)
    p_b = npy["softmax2d_fwd"](x2)
    np.testing.assert_allclose(p_a, p_b, rtol=rtol, atol=rtol)
    np.testing.assert_allclose(nb["softmax2d_bwd"](p_a, g2), npy["softmax2d_bwd"](p_b, g2),
                               rtol=rtol, atol=rtol)


@needs_numba
def test_adam_update_backends_agree():
    for impl_name in ("numba", "numpy"):
        rng = np.random.default_rng(5)
        p = rng.normal(0, 1, 400)
        g = rng.normal(0, 1, 400)
        m = np.zeros(400)
        v = np.zeros(400)
        kernels._BACKENDS[impl_name]["adam_update"](p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
        if impl_name == "numba":
            p_nb, m_nb, v_nb = p, m, v
    np.testing.assert_allclose(p_nb, p, rtol=1e-13)
    np.testing.assert_allclose(m_nb, m, rtol=1e-13)
    np.testing.assert_allclose(v_nb, v, rtol=1e-13)


@needs_numba
def test_scatter_add_backends_agree_with_repeats():
    rng = np.random.default_rng(3)
    ids = rng.integers(0, 6, 50)
    rows = rng.normal(0, 1, (50, 4))
    t_a = np.zeros((6, 4))
    t_b = np.zeros((6, 4))
    kernels._BACKENDS["numba"]["scatter_add_rows"](t_a, ids, rows)
    kernels._BACKENDS["numpy"]["scatter_add_rows"](t_b, ids, rows)
    np.testing.assert_allclose(t_a, t_b, rtol=1e-13)
    # oracle: dense one-hot matmul
    onehot = np.zeros((50, 6))
    onehot[np.arange(50), ids] = 1.0
    np.testing.assert_allclose(t_a, onehot.T @ rows, rtol=1e-12)


def test_backend_runs_are_bit_deterministic():
    rng = np.random.default_rng(9)
    x = rng.normal(0, 1, (40, 17)).astype(np.float32)
    a = kernels.softmax2d_fwd(x)
    b = kernels.softmax2d_fwd(x.copy())
    assert a.tobytes() == b.tobytes()
    y1 = kernels.gelu_fwd(x.ravel())
    y2 = kernels.gelu_fwd(x.ravel().copy())
    assert y1.tobytes() == y2.tobytes()


def test_set_backend_dispatch(restore_backend):
    for name in kernels.available_backends():
        assert kernels.set_backend(name) == name
        assert kernels.backend_name() == name
    resolved = kernels.set_backend("auto")
    assert resolved == ("numba" if kernels.NUMBA_AVAILABLE else "numpy")


def test_unknown_backend_rejected(restore_backend):
    with pytest.raises(BackendError):
        kernels.set_backend("cuda")


def test_env_flag_selects_backend(restore_backend):
    import os
    import subprocess
    import sys
    code = "from relab import kernels; print(kernels.backend_name())"
    env = dict(os.environ, RELAB_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"

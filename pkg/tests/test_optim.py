"""Adam optimizer contract tests."""

import numpy as np
import pytest

from relab.errors import TrialDivergedError
from relab.optim import AdamState, adam_step


def test_zero_gradient_leaves_params_unchanged():
    params = {"w": np.full(5, 0.3, dtype=np.float32)}
    state = AdamState.init(params, learning_rate=1e-2)
    before = params["w"].copy()
    adam_step(params, {"w": np.zeros(5, dtype=np.float32)}, state)
    np.testing.assert_array_equal(params["w"], before)
    assert state.step == 1


@pytest.mark.parametrize("g", [0.5, -2.0, 1e-3])
def test_first_step_magnitude_is_learning_rate(g):
    # closed form first step: update = -lr * g / (|g| + eps) since the bias
    # corrections cancel, so |update| ~= lr
    lr = 7e-3
    params = {"w": np.zeros(1, dtype=np.float64)}
    state = AdamState.init(params, learning_rate=lr)
    adam_step(params, {"w": np.array([g])}, state)
    expected = -lr * g / (abs(g) + state.eps)
    np.testing.assert_allclose(params["w"][0], expected, rtol=1e-10)
    np.testing.assert_allclose(abs(params["w"][0]), lr, rtol=1e-4)


def test_trajectories_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(77)
        params = {"a": rng.normal(0, 1, 16).astype(np.float32),
                  "b": rng.normal(0, 1, (4, 4)).astype(np.float32)}
        state = AdamState.init(params, learning_rate=1e-3)
        for _ in range(25):
            grads = {n: (p * 0.1 + 0.01).astype(np.float32)
                     for n, p in params.items()}
            adam_step(params, grads, state)
        return b"".join(p.tobytes() for p in params.values())

    assert run() == run()


def test_per_parameter_learning_rates():
    params = {"fast": np.zeros(1), "slow": np.zeros(1)}
    state = AdamState.init(params, learning_rate=1e-3,
                           lr_overrides={"fast": 5e-3})
    adam_step(params, {"fast": np.array([1.0]), "slow": np.array([1.0])}, state)
    np.testing.assert_allclose(params["fast"][0] / params["slow"][0], 5.0,
                               rtol=1e-9)


def test_nan_gradient_aborts_with_diagnostic():
    params = {"w": np.zeros(3)}
    state = AdamState.init(params, learning_rate=1e-3)
    with pytest.raises(TrialDivergedError) as exc:
        adam_step(params, {"w": np.array([0.0, np.nan, 0.0])}, state)
    assert "w" in str(exc.value)

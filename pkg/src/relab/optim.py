"""Adam optimizer over named parameter maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeMismatchError, TrialDivergedError


@dataclass
class AdamState:
    """First/second moment buffers plus a per-parameter learning rate.

    ``lr`` maps every parameter name to its rate, which is how parameter
    groups (e.g. a 5x rate on reinitialized layers) are expressed.
    """

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: dict[str, float]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, np.ndarray], learning_rate: float,
             lr_overrides: dict[str, float] | None = None) -> "AdamState":
        lr = {name: learning_rate for name in params}
        if lr_overrides:
            lr.update(lr_overrides)
        return cls(
            step=0,
            m={n: np.zeros_like(p) for n, p in params.items()},
            v={n: np.zeros_like(p) for n, p in params.items()},
            lr=lr,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place on params and state.

    Parameters are visited in insertion order and each update is a single
    sequential pass, so trajectories are bit-reproducible.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError("adam_step", **{name: p.shape,
                                                     f"grad({name})": g.shape})
        # ravel() must alias p for the in-place kernel update to stick
        assert p.flags["C_CONTIGUOUS"], f"parameter {name!r} not contiguous"
        if not np.isfinite(g).all():
            raise TrialDivergedError(
                f"non-finite gradient for parameter {name!r} at step {state.step}",
                parameter=name, step=state.step)
        kernels.adam_update(
            p.ravel(), np.ascontiguousarray(g).ravel(),
            state.m[name].ravel(), state.v[name].ravel(),
            state.lr[name], state.beta1, state.beta2, state.eps, bc1, bc2)
    return params, state

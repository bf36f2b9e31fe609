"""Declarative checkpoint interventions.

Five plan kinds cover the methodology: keep the first k layers and
resample the rest (progressive), resample or preserve a block of
consecutive layers, resample a single layer, and reassign whole layer
parameter groups to shuffled positions. Embedding parameters are never
touched by any plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SurgeryPlanError
from .model import (Checkpoint, EMBEDDING_NAMES, LN_SUFFIXES, REINIT_SUFFIXES,
                    layer_param_names, param_shapes)
from .seeding import derive_rng

PLAN_KINDS = ("progressive", "block_reinit", "block_preserve", "single_layer",
              "permute", "identity")


@dataclass(frozen=True)
class ReinitDistribution:
    """Truncated normal used both at init time and for reinitialization."""

    mu: float = 0.0
    sigma: float = 0.02
    lower: float = -0.04
    upper: float = 0.04

    def __post_init__(self):
        if not (self.lower < self.mu < self.upper) or self.sigma <= 0:
            raise SurgeryPlanError(
                f"invalid truncated normal: mu={self.mu} sigma={self.sigma} "
                f"range=({self.lower}, {self.upper})")


def sample_truncated_normal(dist: ReinitDistribution, shape, rng,
                            dtype=np.float32) -> np.ndarray:
    """I.i.d. draws from N(mu, sigma^2) conditioned on the open interval.

    Rejection sampling: out-of-range draws are redrawn until none remain,
    so every value lies strictly inside (lower, upper).
    """
    out = rng.normal(dist.mu, dist.sigma, size=shape)
    bad = (out <= dist.lower) | (out >= dist.upper)
    while bad.any():
        out[bad] = rng.normal(dist.mu, dist.sigma, size=int(bad.sum()))
        bad = (out <= dist.lower) | (out >= dist.upper)
    return out.astype(dtype)


@dataclass(frozen=True)
class SurgeryPlan:
    """One intervention: kind plus its arguments and options."""

    kind: str
    k: int | None = None                      # progressive / single_layer
    start: int | None = None                  # block kinds
    length: int = 3
    permutation: tuple[int, ...] | None = None  # permute: source i -> perm[i-1]
    preserve_layer_norm: bool = False
    zero_biases: bool = False
    seed: int = 0
    distribution: ReinitDistribution = field(default_factory=ReinitDistribution)

    def __post_init__(self):
        if self.kind not in PLAN_KINDS:
            raise SurgeryPlanError(f"unknown plan kind {self.kind!r}",
                                   valid=list(PLAN_KINDS))

    def validate(self, num_layers: int) -> None:
        L = num_layers
        if self.kind in ("progressive",):
            if self.k is None or not 0 <= self.k <= L:
                raise SurgeryPlanError(
                    f"progressive k must be in [0, {L}], got {self.k}")
        elif self.kind == "single_layer":
            if self.k is None or not 1 <= self.k <= L:
                raise SurgeryPlanError(
                    f"single_layer k must be in [1, {L}], got {self.k}")
        elif self.kind in ("block_reinit", "block_preserve"):
            if self.length < 1 or self.start is None or \
                    not 1 <= self.start <= L - self.length + 1:
                raise SurgeryPlanError(
                    f"block start must be in [1, {L - self.length + 1}] for "
                    f"length {self.length}, got {self.start}")
        elif self.kind == "permute":
            perm = self.permutation
            if perm is None or sorted(perm) != list(range(1, L + 1)):
                raise SurgeryPlanError(
                    f"permutation must be a bijection on 1..{L}, got {perm}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.k is not None:
            d["k"] = self.k
        if self.start is not None:
            d["start"] = self.start
        if self.kind in ("block_reinit", "block_preserve"):
            d["length"] = self.length
        if self.permutation is not None:
            d["permutation"] = list(self.permutation)
        if self.preserve_layer_norm:
            d["preserve_layer_norm"] = True
        if self.zero_biases:
            d["zero_biases"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurgeryPlan":
        known = {"kind", "seed", "k", "start", "length", "permutation",
                 "preserve_layer_norm", "zero_biases"}
        unknown = set(d) - known
        if unknown:
            raise SurgeryPlanError(f"unknown plan fields: {sorted(unknown)}")
        d = dict(d)
        if "permutation" in d:
            d["permutation"] = tuple(d["permutation"])
        return cls(**d)


@dataclass
class SurgeryReport:
    """Accounting of what a plan did to every parameter name."""

    reinitialized: list[str] = field(default_factory=list)
    preserved: list[str] = field(default_factory=list)
    moved: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"reinitialized": self.reinitialized,
                "preserved": self.preserved, "moved": self.moved}


def _reinit_set(plan: SurgeryPlan, L: int) -> set[int]:
    if plan.kind == "identity" or plan.kind == "permute":
        return set()
    if plan.kind == "progressive":
        return set(range(plan.k + 1, L + 1))
    if plan.kind == "single_layer":
        return {plan.k}
    block = set(range(plan.start, plan.start + plan.length))
    if plan.kind == "block_reinit":
        return block
    return set(range(1, L + 1)) - block


def apply(checkpoint: Checkpoint, plan: SurgeryPlan) -> tuple[Checkpoint, SurgeryReport]:
    """Produce a new checkpoint (source untouched) plus the accounting report.

    Reinitialized layers get fresh truncated-normal draws for the six
    weight/bias pairs; their layer norms reset to (1, 0) unless
    ``preserve_layer_norm``. Permutation moves whole layer groups,
    layer norms included, without resampling anything.
    """
    cfg = checkpoint.config
    L = cfg.num_layers
    plan.validate(L)
    report = SurgeryReport(preserved=list(EMBEDDING_NAMES))
    new_params: dict[str, np.ndarray] = {
        name: checkpoint.params[name] for name in EMBEDDING_NAMES}
    shapes = param_shapes(cfg)
    dtype = checkpoint.params["embed.token"].dtype

    if plan.kind == "permute":
        for i in range(1, L + 1):
            dest = plan.permutation[i - 1]
            for src_name, dst_name in zip(layer_param_names(i),
                                          layer_param_names(dest)):
                new_params[dst_name] = checkpoint.params[src_name]
                if dest == i:
                    report.preserved.append(src_name)
                else:
                    report.moved[src_name] = dst_name
        new_params = {n: new_params[n] for n in shapes}  # canonical order
        return Checkpoint(cfg, new_params), report

    reinit_layers = _reinit_set(plan, L)
    for i in range(1, L + 1):
        prefix = f"layer.{i}."
        if i not in reinit_layers:
            for name in layer_param_names(i):
                new_params[name] = checkpoint.params[name]
                report.preserved.append(name)
            continue
        for suffix in REINIT_SUFFIXES:
            name = prefix + suffix
            if plan.zero_biases and suffix.endswith(".bias"):
                new_params[name] = np.zeros(shapes[name], dtype=dtype)
            else:
                rng = derive_rng(plan.seed, "reinit", name)
                new_params[name] = sample_truncated_normal(
                    plan.distribution, shapes[name], rng, dtype=dtype)
            report.reinitialized.append(name)
        for suffix in LN_SUFFIXES:
            name = prefix + suffix
            if plan.preserve_layer_norm:
                new_params[name] = checkpoint.params[name]
                report.preserved.append(name)
            else:
                if suffix.endswith("gamma"):
                    new_params[name] = np.ones(shapes[name], dtype=dtype)
                else:
                    new_params[name] = np.zeros(shapes[name], dtype=dtype)
                report.reinitialized.append(name)
    new_params = {n: new_params[n] for n in shapes}
    return Checkpoint(cfg, new_params), report


def derive_permutation(master_seed: int, run_index: int, num_layers: int) -> tuple[int, ...]:
    """Fisher-Yates shuffle of 1..L, keyed only by (master_seed, run_index).

    Task never enters the key, so the nth run of every task shares one
    permutation. Returned as perm with perm[i-1] = destination of layer i.
    """
    if run_index < 0:
        raise SurgeryPlanError(f"run_index must be >= 0, got {run_index}")
    rng = derive_rng(master_seed, "perm", run_index)
    perm = np.arange(1, num_layers + 1)
    for i in range(num_layers - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(int(x) for x in perm)


def inverse_permutation(perm: tuple[int, ...]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, dest in enumerate(perm, start=1):
        inv[dest - 1] = i
    return tuple(inv)

"""BERT-style post-layer-norm encoder at configurable (desk) scale.

Parameters live in a flat map under canonical dotted names; everything
that edits checkpoints (surgery, optimizers) addresses tensors through
these names. Layers are 1-indexed: ``layer.3.ffn.output.weight``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DataError, ShapeMismatchError
from .seeding import derive_rng
from .tensor import (Tensor, add, embedding_lookup, gelu, layer_norm, matmul,
                     mul, reshape, scale, softmax, transpose)

PAD_ID, CLS_ID, SEP_ID, MASK_ID = 0, 1, 2, 3
NUM_SPECIALS = 4
LAYER_NORM_EPS = 1e-12
ATTN_MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 6
    hidden_size: int = 64
    num_heads: int = 4
    intermediate_size: int = 128
    vocab_size: int = 64 + NUM_SPECIALS
    max_seq_len: int = 32
    type_vocab_size: int = 2

    def __post_init__(self):
        if self.num_layers < 1:
            raise DataError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden_size % self.num_heads:
            raise DataError(
                f"hidden_size {self.hidden_size} not divisible by "
                f"num_heads {self.num_heads}")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


EMBEDDING_NAMES = ("embed.token", "embed.position", "embed.type",
                   "embed.ln.gamma", "embed.ln.beta")

_LAYER_SUFFIXES = (
    "attn.query.weight", "attn.query.bias",
    "attn.key.weight", "attn.key.bias",
    "attn.value.weight", "attn.value.bias",
    "attn.output.weight", "attn.output.bias",
    "attn.ln.gamma", "attn.ln.beta",
    "ffn.intermediate.weight", "ffn.intermediate.bias",
    "ffn.output.weight", "ffn.output.bias",
    "ffn.ln.gamma", "ffn.ln.beta",
)

# the six affected weight/bias pairs that reinitialization resamples;
# layer norms are handled separately
REINIT_SUFFIXES = tuple(s for s in _LAYER_SUFFIXES if ".ln." not in s)
LN_SUFFIXES = ("attn.ln.gamma", "attn.ln.beta", "ffn.ln.gamma", "ffn.ln.beta")


def layer_param_names(i: int) -> list[str]:
    return [f"layer.{i}.{suffix}" for suffix in _LAYER_SUFFIXES]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape, in canonical enumeration order."""
    h, f = config.hidden_size, config.intermediate_size
    shapes: dict[str, tuple[int, ...]] = {
        "embed.token": (config.vocab_size, h),
        "embed.position": (config.max_seq_len, h),
        "embed.type": (config.type_vocab_size, h),
        "embed.ln.gamma": (h,),
        "embed.ln.beta": (h,),
    }
    per_layer = {
        "attn.query.weight": (h, h), "attn.query.bias": (h,),
        "attn.key.weight": (h, h), "attn.key.bias": (h,),
        "attn.value.weight": (h, h), "attn.value.bias": (h,),
        "attn.output.weight": (h, h), "attn.output.bias": (h,),
        "attn.ln.gamma": (h,), "attn.ln.beta": (h,),
        "ffn.intermediate.weight": (h, f), "ffn.intermediate.bias": (f,),
        "ffn.output.weight": (f, h), "ffn.output.bias": (h,),
        "ffn.ln.gamma": (h,), "ffn.ln.beta": (h,),
    }
    for i in range(1, config.num_layers + 1):
        for suffix, shape in per_layer.items():
            shapes[f"layer.{i}.{suffix}"] = shape
    return shapes


def layer_param_count(config: ModelConfig) -> int:
    """Closed-form per-layer parameter count used as an accounting check."""
    h, f = config.hidden_size, config.intermediate_size
    return 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h


@dataclass
class Checkpoint:
    """A config plus its complete named parameter map (read-only arrays)."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        expected = param_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.params:
                raise DataError(f"checkpoint missing parameter {name!r}")
            if tuple(self.params[name].shape) != shape:
                raise DataError(
                    f"checkpoint parameter {name!r} has shape "
                    f"{tuple(self.params[name].shape)}, expected {shape}")
        for name in self.params:
            if name not in expected:
                raise DataError(f"checkpoint has unknown parameter {name!r}")
        for arr in self.params.values():
            arr.flags.writeable = False

    def copy_params(self) -> dict[str, np.ndarray]:
        """Writable copies, for optimizers that update in place."""
        return {n: p.copy() for n, p in self.params.items()}

    def astype(self, dtype) -> "Checkpoint":
        return Checkpoint(self.config,
                          {n: p.astype(dtype) for n, p in self.params.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].tobytes())
        return h.hexdigest()


def init_model(config: ModelConfig, seed: int, dtype=np.float32) -> Checkpoint:
    """Fresh checkpoint: truncated-normal weights, layer norms at (1, 0)."""
    from .surgery import ReinitDistribution, sample_truncated_normal

    dist = ReinitDistribution()
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            rng = derive_rng(seed, "init", name)
            params[name] = sample_truncated_normal(dist, shape, rng, dtype=dtype)
    return Checkpoint(config, params)


@dataclass
class EncoderOutput:
    """Embedding output plus each layer's output (num_layers + 1 states)."""

    hidden_states: list[np.ndarray]
    attentions: list[np.ndarray] | None = None


def as_tensors(params: dict[str, np.ndarray],
               requires_grad: bool = False) -> dict[str, Tensor]:
    return {n: Tensor(p, requires_grad=requires_grad, name=n)
            for n, p in params.items()}


def encode_batch(pt: dict[str, Tensor], config: ModelConfig,
                 token_ids: np.ndarray, type_ids: np.ndarray,
                 attention_mask: np.ndarray,
                 collect_attention: bool = False):
    """Forward pass over a padded batch.

    token_ids/type_ids: (B, S) int arrays; attention_mask: (B, S) with 1.0
    at real positions, 0.0 at padding. Returns (hidden_states, attentions)
    where hidden_states is a list of L+1 (B, S, H) Tensors.
    """
    B, S = token_ids.shape
    dtype = pt["embed.token"].dtype
    x = embedding_lookup(pt["embed.token"], token_ids)
    pos = embedding_lookup(pt["embed.position"], np.arange(S))
    typ = embedding_lookup(pt["embed.type"], type_ids)
    x = add(add(x, pos), typ)
    x = layer_norm(x, pt["embed.ln.gamma"], pt["embed.ln.beta"], LAYER_NORM_EPS)
    states = [x]
    attentions = [] if collect_attention else None
    mask_bias = Tensor(
        ((1.0 - attention_mask) * ATTN_MASK_BIAS)[:, None, None, :].astype(dtype))
    nh, dh = config.num_heads, config.head_size
    inv_sqrt_dh = 1.0 / math.sqrt(dh)
    for i in range(1, config.num_layers + 1):
        p = f"layer.{i}."
        q = add(matmul(x, pt[p + "attn.query.weight"]), pt[p + "attn.query.bias"])
        k = add(matmul(x, pt[p + "attn.key.weight"]), pt[p + "attn.key.bias"])
        v = add(matmul(x, pt[p + "attn.value.weight"]), pt[p + "attn.value.bias"])
        qh = transpose(reshape(q, (B, S, nh, dh)), (0, 2, 1, 3))
        kh = transpose(reshape(k, (B, S, nh, dh)), (0, 2, 1, 3))
        vh = transpose(reshape(v, (B, S, nh, dh)), (0, 2, 1, 3))
        scores = scale(matmul(qh, transpose(kh, (0, 1, 3, 2))), inv_sqrt_dh)
        probs = softmax(add(scores, mask_bias), axis=-1)
        if collect_attention:
            attentions.append(probs.data)
        ctx = reshape(transpose(matmul(probs, vh), (0, 2, 1, 3)), (B, S, config.hidden_size))
        attn_out = add(matmul(ctx, pt[p + "attn.output.weight"]),
                       pt[p + "attn.output.bias"])
        x = layer_norm(add(x, attn_out), pt[p + "attn.ln.gamma"],
                       pt[p + "attn.ln.beta"], LAYER_NORM_EPS)
        inter = gelu(add(matmul(x, pt[p + "ffn.intermediate.weight"]),
                         pt[p + "ffn.intermediate.bias"]))
        ffn_out = add(matmul(inter, pt[p + "ffn.output.weight"]),
                      pt[p + "ffn.output.bias"])
        x = layer_norm(add(x, ffn_out), pt[p + "ffn.ln.gamma"],
                       pt[p + "ffn.ln.beta"], LAYER_NORM_EPS)
        states.append(x)
    return states, attentions


def _validate_ids(config: ModelConfig, token_ids, type_ids) -> None:
    if len(token_ids) > config.max_seq_len:
        raise DataError(
            f"sequence length {len(token_ids)} exceeds max_seq_len "
            f"{config.max_seq_len}")
    if len(token_ids) and max(token_ids) >= config.vocab_size:
        raise DataError(
            f"token id {max(token_ids)} out of range for vocab_size "
            f"{config.vocab_size}")
    if len(token_ids) and min(token_ids) < 0:
        raise DataError("negative token id")
    if type_ids is not None:
        if len(type_ids) != len(token_ids):
            raise ShapeMismatchError("encode", token_ids=(len(token_ids),),
                                     type_ids=(len(type_ids),))
        if len(type_ids) and max(type_ids) >= config.type_vocab_size:
            raise DataError(
                f"type id {max(type_ids)} out of range for type_vocab_size "
                f"{config.type_vocab_size}")


def encode(checkpoint: Checkpoint, token_ids, type_ids=None,
           collect_attention: bool = False) -> EncoderOutput:
    """Encode one unpadded sequence; pure in (checkpoint, input)."""
    token_ids = list(token_ids)
    _validate_ids(checkpoint.config, token_ids, type_ids)
    if type_ids is None:
        type_ids = [0] * len(token_ids)
    ids = np.asarray([token_ids], dtype=np.int64)
    typ = np.asarray([type_ids], dtype=np.int64)
    mask = np.ones_like(ids, dtype=np.float64)
    pt = as_tensors(checkpoint.params)
    states, attentions = encode_batch(pt, checkpoint.config, ids, typ, mask,
                                      collect_attention=collect_attention)
    return EncoderOutput(
        hidden_states=[s.data[0] for s in states],
        attentions=[a[0] for a in attentions] if attentions else None)

"""Bit-exact checkpoint file format.

Layout: magic ``RLAB``, version u32 LE, header-length u64 LE, a UTF-8
JSON header (space-padded to an 8-byte boundary), then the raw
little-endian tensor payloads concatenated in header order, each offset
8-byte aligned relative to the start of the payload section.

The header maps each canonical parameter name to
``{"dtype": "f32"|"f64", "shape": [...], "offset": int}``. One reserved
key, ``__config__``, carries the model configuration (head count is not
recoverable from tensor shapes alone).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError
from .model import Checkpoint, ModelConfig, param_shapes

MAGIC = b"RLAB"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def _align8(n: int) -> int:
    return (n + 7) & ~7


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write in canonical parameter order; round-trips bit-exactly."""
    names = list(param_shapes(checkpoint.config))
    header: dict = {"__config__": {
        "format_version": VERSION,
        "model": checkpoint.config.to_dict(),
    }}
    offset = 0
    blobs = []
    for name in names:
        arr = checkpoint.params[name]
        dtype_name = _DTYPE_NAMES[np.dtype(arr.dtype)]
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        header[name] = {"dtype": dtype_name, "shape": list(arr.shape),
                        "offset": offset}
        blobs.append((offset, blob))
        offset = _align8(offset + len(blob))
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    header_bytes += b" " * (_align8(len(header_bytes)) - len(header_bytes))
    payload = bytearray(offset)
    for off, blob in blobs:
        payload[off:off + len(blob)] = blob
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CheckpointFormatError(
            f"file truncated: {len(raw)} bytes, need at least the 16-byte "
            "fixed header", path=str(path))
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(
            f"bad magic bytes {raw[:4]!r}, expected {MAGIC!r}", field="magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(
            f"unsupported version {version}, expected {VERSION}",
            field="version")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    if 16 + header_len > len(raw):
        raise CheckpointFormatError(
            f"header-length field claims {header_len} bytes but only "
            f"{len(raw) - 16} remain", field="header_length")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"header is not valid JSON: {exc}",
                                    field="header") from None
    if "__config__" not in header:
        raise CheckpointFormatError("header missing reserved key '__config__'",
                                    field="__config__")
    try:
        config = ModelConfig.from_dict(header["__config__"]["model"])
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(
            f"malformed '__config__' entry: {exc}", field="__config__") from None
    payload = raw[16 + header_len:]
    params: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        if name.startswith("__"):
            continue
        if not isinstance(meta, dict) or \
                {"dtype", "shape", "offset"} - set(meta):
            raise CheckpointFormatError(
                f"header field {name!r} missing dtype/shape/offset",
                field=name)
        if meta["dtype"] not in _DTYPES:
            raise CheckpointFormatError(
                f"header field {name!r} has unknown dtype {meta['dtype']!r}",
                field=name)
        dtype = _DTYPES[meta["dtype"]]
        shape = tuple(meta["shape"])
        offset = meta["offset"]
        if offset % 8:
            raise CheckpointFormatError(
                f"header field {name!r} has misaligned offset {offset}",
                field=name, offset=offset)
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointFormatError(
                f"header field {name!r}: declared shape {list(shape)} needs "
                f"payload bytes [{offset}, {offset + nbytes}) but payload has "
                f"{len(payload)} bytes", field=name, offset=offset)
        arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=offset).reshape(shape)
        params[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    try:
        return Checkpoint(config, params)
    except Exception as exc:
        raise CheckpointFormatError(
            f"header tensor set inconsistent with declared config: {exc}",
            field="__config__") from None

"""Binary checkpoint persistence for an encoder pair and its training state.

File layout, all little-endian:

    magic      4 bytes  b"CIDL"
    version    u32
    config     u64 length + JSON (encoder config)
    meta       u64 length + JSON (global step, optimizer scalars, rng state)
    blocks     one per array: u64 byte length + raw float64 data,
               in declared layer order: query params, key params, then
               optimizer velocity (when present)
    crc        u32 CRC32 of every preceding byte

Array shapes are reconstructed from the config, so blocks carry no shape
metadata. A load either yields a complete model or raises; no partial state
ever escapes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, EncoderPair, EncoderParams, validate_params
from .exceptions import CorruptChecksumError, VersionMismatchError
from .numerics import OptimizerState

MAGIC = b"CIDL"
VERSION = 1


@dataclass
class Checkpoint:
    pair: EncoderPair
    optimizer_state: OptimizerState
    rng_state: dict
    global_step: int


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _block(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


def _array_block(arr: np.ndarray) -> bytes:
    return _block(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(pair: EncoderPair, optimizer_state: OptimizerState, path,
                    rng_state: dict = None, global_step: int = 0):
    """Write the pair, optimizer state, rng state, and step to ``path``."""
    meta = {
        "global_step": int(global_step),
        "rng_state": rng_state if rng_state is not None else {},
        "optimizer": {
            "learning_rate_base": optimizer_state.learning_rate_base,
            "momentum_coeff": optimizer_state.momentum_coeff,
            "weight_decay": optimizer_state.weight_decay,
            "step_count": optimizer_state.step_count,
            "total_steps": optimizer_state.total_steps,
            "has_velocity": bool(optimizer_state.velocity),
        },
    }
    parts = [MAGIC, struct.pack("<I", VERSION),
             _block(_json_bytes(pair.config.to_dict())),
             _block(_json_bytes(meta))]
    for arr in pair.query_encoder.flat():
        parts.append(_array_block(arr))
    for arr in pair.key_encoder.flat():
        parts.append(_array_block(arr))
    if optimizer_state.velocity:
        for arr in optimizer_state.velocity:
            parts.append(_array_block(arr))
    payload = b"".join(parts)
    payload += struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptChecksumError("checkpoint truncated inside a block")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def block(self) -> bytes:
        (n,) = struct.unpack("<Q", self.take(8))
        return self.take(n)


def _read_params(reader: _Reader, config: EncoderConfig) -> EncoderParams:
    def read_array(shape):
        raw = reader.block()
        expected = int(np.prod(shape)) * 8
        if len(raw) != expected:
            raise CorruptChecksumError(
                f"parameter block has {len(raw)} bytes, expected {expected}")
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    bw, bb, hw, hb = [], [], [], []
    dims = config.base_layer_dims()
    for i in range(len(dims) - 1):
        bw.append(read_array((dims[i], dims[i + 1])))
        bb.append(read_array((dims[i + 1],)))
    dims = config.head_layer_dims()
    for i in range(len(dims) - 1):
        hw.append(read_array((dims[i], dims[i + 1])))
        hb.append(read_array((dims[i + 1],)))
    return EncoderParams(bw, bb, hw, hb)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; raises VersionMismatchError or CorruptChecksumError."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise CorruptChecksumError("file too short to be a checkpoint")
    if data[:4] != MAGIC:
        raise CorruptChecksumError("bad magic bytes")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CorruptChecksumError("CRC32 mismatch")

    reader = _Reader(data[:-4])
    reader.take(8)
    try:
        config = EncoderConfig.from_dict(json.loads(reader.block()))
        meta = json.loads(reader.block())
        query = _read_params(reader, config)
        key = _read_params(reader, config)
        opt_meta = meta["optimizer"]
        state = OptimizerState(
            learning_rate_base=float(opt_meta["learning_rate_base"]),
            momentum_coeff=float(opt_meta["momentum_coeff"]),
            weight_decay=float(opt_meta["weight_decay"]),
            step_count=int(opt_meta["step_count"]),
            total_steps=int(opt_meta["total_steps"]),
        )
        if opt_meta.get("has_velocity"):
            state.velocity = _read_params(reader, config).flat()
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptChecksumError(f"malformed checkpoint contents: {exc}") from exc
    if reader.pos != len(reader.data):
        raise CorruptChecksumError("trailing bytes after the last block")
    pair = EncoderPair(config=config, query_encoder=validate_params(config, query),
                       key_encoder=validate_params(config, key))
    return Checkpoint(pair=pair, optimizer_state=state,
                      rng_state=meta.get("rng_state", {}),
                      global_step=int(meta["global_step"]))

"""Versioned binary container for model parameters.

Layout (all integers little-endian):

    magic      4 bytes  "U2DF"
    version    u32
    json_len   u32, then json_len bytes of UTF-8 JSON (kind, config,
               normalization bounds, optional manifest)
    n_arrays   u32
    per array: name_len u16, name bytes, ndim u8, dims u32 * ndim,
               data float32 little-endian
    crc32      u32 over all preceding bytes

Round trips are bit-exact: parameters are stored and restored as float32.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np
import torch

from .errors import FormatVersionError, MalformedRecordError, ParameterError, TruncatedFileError

__all__ = ["save_checkpoint", "load_checkpoint", "state_to_arrays", "arrays_to_state"]

MAGIC = b"U2DF"
VERSION = 1


def state_to_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    """Named float32 parameter arrays of a module, insertion-ordered."""
    out = {}
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        out[name] = arr
    return out


def arrays_to_state(arrays: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    return {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}


def save_checkpoint(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a named-array container with a JSON header block."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ParameterError(f"array name too long: {name!r}")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        if arr.ndim > 0xFF:
            raise ParameterError(f"array rank too large: {arr.ndim}")
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"checkpoint ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container; verifies magic, version, and trailing checksum."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise TruncatedFileError("checkpoint shorter than the fixed header")
    body, (crc_stored,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise MalformedRecordError("checkpoint checksum mismatch")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise FormatVersionError("bad checkpoint magic (expected U2DF)")
    version = r.u32()
    if version != VERSION:
        raise FormatVersionError(
            f"unsupported checkpoint version {version} (supported: {VERSION})"
        )
    header_len = r.u32()
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedRecordError(f"bad checkpoint header JSON: {exc}")
    n_arrays = r.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * 4)
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if r.pos != len(body):
        raise MalformedRecordError(
            f"{len(body) - r.pos} trailing bytes after the declared arrays"
        )
    return header, arrays

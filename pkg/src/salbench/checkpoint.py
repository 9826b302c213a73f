"""Bit-exact binary checkpoint format.

Layout (all integers little-endian):

    magic "PSCK" (4 bytes)
    format version          u32
    header length           u32, then UTF-8 text of `key=value` lines
    entry count             u32
    per entry:
        name length         u16, then name bytes (UTF-8)
        rank                u8
        dims                u32 x rank
        payload kind        u8   (0 = parameter float32, 1 = mask uint8)
        payload bytes       row-major
    CRC32 of all preceding bytes   u32

The header lists the architecture (`input`, `layers`, `classes`) and the
provenance record (`provenance.<key>` lines, preserved verbatim).
Parameters are stored at 32-bit precision; loading widens to 64-bit.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    TruncatedFileError,
    VersionMismatchError,
)
from .model import ArchitectureDescriptor, LayerSpec, ModelState

MAGIC = b"PSCK"
FORMAT_VERSION = 1

_KIND_PARAM = 0
_KIND_MASK = 1


def _descriptor_to_lines(desc: ArchitectureDescriptor) -> list[str]:
    parts = []
    for layer in desc.layers:
        if layer.kind == "conv":
            parts.append(f"conv:{layer.filters}:{layer.kernel}")
        elif layer.kind == "dense":
            parts.append(f"dense:{layer.units}")
        else:
            parts.append(layer.kind)
    return [
        "input=" + ",".join(str(d) for d in desc.input_shape),
        "layers=" + ",".join(parts),
        "classes=" + str(desc.num_classes),
    ]


def _descriptor_from_header(fields: dict[str, str]) -> ArchitectureDescriptor:
    input_shape = tuple(int(d) for d in fields["input"].split(","))
    layers: list[LayerSpec] = []
    conv_i = dense_i = relu_i = pool_i = 0
    for part in fields["layers"].split(","):
        bits = part.split(":")
        if bits[0] == "conv":
            conv_i += 1
            layers.append(
                LayerSpec("conv", f"conv{conv_i}", filters=int(bits[1]), kernel=int(bits[2]))
            )
        elif bits[0] == "dense":
            dense_i += 1
            layers.append(LayerSpec("dense", f"fc{dense_i}", units=int(bits[1])))
        elif bits[0] == "relu":
            relu_i += 1
            layers.append(LayerSpec("relu", f"relu{relu_i}"))
        elif bits[0] == "pool":
            pool_i += 1
            layers.append(LayerSpec("pool", f"pool{pool_i}"))
        elif bits[0] == "flatten":
            layers.append(LayerSpec("flatten", "flatten"))
        else:
            raise TruncatedFileError(f"header lists unknown layer kind {bits[0]!r}")
    return ArchitectureDescriptor(input_shape, tuple(layers), int(fields["classes"]))


def _pack_entry(buf: io.BytesIO, name: str, kind: int, arr: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    buf.write(struct.pack("<H", len(name_b)))
    buf.write(name_b)
    buf.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        buf.write(struct.pack("<I", d))
    buf.write(struct.pack("<B", kind))
    buf.write(arr.tobytes())


def save_checkpoint(model: ModelState, path) -> None:
    """Serialize parameters (float32) and masks (uint8) with a CRC32 tail."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))

    lines = _descriptor_to_lines(model.descriptor)
    lines += [f"provenance.{k}={v}" for k, v in model.provenance.items()]
    header = "\n".join(lines).encode("utf-8")
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)

    names = list(model.parameters)
    buf.write(struct.pack("<I", 2 * len(names)))
    for name in names:
        _pack_entry(buf, name, _KIND_PARAM, model.parameters[name].astype("<f4"))
    for name in names:
        _pack_entry(buf, name, _KIND_MASK, model.masks[name].astype(np.uint8))

    body = buf.getvalue()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"expected {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> ModelState:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFileError(f"file has only {len(data)} bytes")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    body = data[:-4]

    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"not a checkpoint file: bad magic in {path}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, supported {FORMAT_VERSION}")

    header = r.take(r.u32()).decode("utf-8")
    fields: dict[str, str] = {}
    provenance: dict[str, str] = {}
    for line in header.splitlines():
        key, _, value = line.partition("=")
        if key.startswith("provenance."):
            provenance[key[len("provenance.") :]] = value
        else:
            fields[key] = value

    count = r.u32()
    params: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        kind = r.u8()
        n = int(np.prod(shape)) if shape else 1
        if kind == _KIND_PARAM:
            raw = r.take(4 * n)
            params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        elif kind == _KIND_MASK:
            raw = r.take(n)
            masks[name] = np.frombuffer(raw, dtype=np.uint8).reshape(shape).copy()
        else:
            raise TruncatedFileError(f"entry {name!r} has unknown payload kind {kind}")

    # checksum is verified after structural parsing so that truncation is
    # reported as truncation, not as a checksum mismatch
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if actual_crc != stored_crc:
        raise ChecksumError(f"CRC32 mismatch: stored {stored_crc:#010x}, actual {actual_crc:#010x}")

    descriptor = _descriptor_from_header(fields)
    return ModelState(descriptor, params, masks, provenance)

"""Bit-exact binary tensor container and model checkpointing.

Layout (little-endian): magic ``DGN1``, u32 version (1), u32 tensor count;
per tensor: u16 name length, UTF-8 name, u8 dtype code (0 = float32,
1 = float64), u8 ndim, ndim x u32 dims, raw row-major payload; trailing
u32 CRC-32 over all preceding bytes. Tensor order is preserved, so
save -> load -> save round-trips byte-identically.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .models import ModelBundle, arch_from_array, init_bundle
from .gaussians import make_rng
from .precision import precision

MAGIC = b"DGN1"
VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(Exception):
    """Base class for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class CrcMismatchError(CheckpointError):
    pass


class TensorShapeError(CheckpointError):
    """Declared dims inconsistent with the available payload or model slot."""


class DtypeError(CheckpointError):
    pass


def write_tensor_file(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, len(tensors))
    for name, array in tensors.items():
        arr = np.ascontiguousarray(array)
        if arr.dtype not in _CODES_BY_KIND:
            raise DtypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded))
        body += encoded
        body += struct.pack("<BB", _CODES_BY_KIND[arr.dtype], arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(body))


def read_tensor_file(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: file shorter than minimal header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")

    payload_end = len(raw) - 4
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if offset + 2 > payload_end:
            raise TruncatedFileError(f"{path}: ran out of bytes reading a tensor header")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if offset + name_len + 2 > payload_end:
            raise TruncatedFileError(f"{path}: ran out of bytes reading a tensor name")
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", raw, offset)
        offset += 2
        if code not in _DTYPE_CODES:
            raise DtypeError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        if offset + 4 * ndim > payload_end:
            raise TruncatedFileError(f"{path}: ran out of bytes reading dims of {name!r}")
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if offset + nbytes > payload_end:
            raise TensorShapeError(
                f"{path}: tensor {name!r} declares dims {dims} needing {nbytes} bytes, "
                f"only {payload_end - offset} remain"
            )
        flat = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)) if ndim else 1,
                             offset=offset)
        tensors[name] = flat.reshape(dims).copy()
        offset += nbytes
    if offset != payload_end:
        raise TensorShapeError(f"{path}: {payload_end - offset} unexpected trailing payload bytes")
    (stored_crc,) = struct.unpack_from("<I", raw, payload_end)
    actual_crc = zlib.crc32(raw[:payload_end]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CrcMismatchError(f"{path}: CRC {actual_crc:#010x} != stored {stored_crc:#010x}")
    return tensors


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> None:
    write_tensor_file(path, bundle.named_tensors())


def save_classifier_checkpoint(bundle: ModelBundle, path: str | Path) -> None:
    write_tensor_file(path, bundle.classifier_tensors())


def load_checkpoint(path: str | Path) -> ModelBundle:
    """Rebuild a full bundle from a checkpoint written by save_checkpoint."""
    tensors = read_tensor_file(path)
    if "meta.arch" not in tensors:
        raise CheckpointError(f"{path}: missing meta.arch record")
    arch = arch_from_array(tensors["meta.arch"])
    stored = tensors.get("pixel_log_var")
    name = "f64" if stored is not None and stored.dtype == np.float64 else "f32"
    with precision(name):
        bundle = init_bundle(arch, make_rng(0))
    bundle.load_tensors(tensors, strict=True)
    return bundle


def load_classifier_into(bundle: ModelBundle, path: str | Path) -> None:
    """Load classifier tensors from a classifier-only checkpoint."""
    tensors = read_tensor_file(path)
    if "meta.arch" not in tensors:
        raise CheckpointError(f"{path}: missing meta.arch record")
    arch = arch_from_array(tensors["meta.arch"])
    mine = bundle.arch
    if (arch.image_shape != mine.image_shape or arch.stages != mine.stages
            or arch.base_filters != mine.base_filters or arch.label_count != mine.label_count
            or arch.dense_units != mine.dense_units):
        raise CheckpointError(
            f"{path}: classifier architecture {arch} incompatible with model {mine}"
        )
    bundle.load_tensors(tensors, strict=True)

"""Optional native range-coder kernel, loaded lazily via ctypes.

The kernel is a shared library with a flat C ABI (integer arrays and byte
buffers only). Its byte output is contractually identical to the reference
coder; when the library is absent everything silently falls back to the
pure-Python implementation.
"""

from __future__ import annotations

import ctypes
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .rangecoder import QuantizedCdf, RangeCoderError

_LIB_NAMES = ("librc_kernel.so", "librc_kernel.dylib", "rc_kernel.dll")


def _candidate_paths():
    env = os.environ.get("GLC_KERNEL")
    if env:
        yield Path(env)
    roots = [
        Path(__file__).resolve().parents[3],
        Path(__file__).resolve().parents[2],
        Path.cwd(),
    ]
    for root in roots:
        for name in _LIB_NAMES:
            yield root / "rc_kernel" / "target" / "release" / name
            yield root / name


_lib = None
_lib_checked = False


def load_kernel():
    """The native library handle, or None when unavailable/disabled."""
    global _lib, _lib_checked
    if _lib_checked:
        return _lib
    _lib_checked = True
    if os.environ.get("GLC_NO_KERNEL"):
        return None
    for path in _candidate_paths():
        if not path.is_file():
            continue
        try:
            lib = ctypes.CDLL(str(path))
        except OSError:
            continue
        _bind(lib)
        _lib = lib
        break
    return _lib


def kernel_available() -> bool:
    return load_kernel() is not None


def _bind(lib) -> None:
    u8p = ctypes.POINTER(ctypes.c_uint8)
    lib.rck_encoder_new.restype = ctypes.c_void_p
    lib.rck_encoder_encode.restype = ctypes.c_int32
    lib.rck_encoder_encode.argtypes = [
        ctypes.c_void_p,
        ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t,
        ctypes.c_void_p, ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t,
    ]
    lib.rck_encoder_finish.restype = u8p
    lib.rck_encoder_finish.argtypes = [ctypes.c_void_p, ctypes.POINTER(ctypes.c_size_t)]
    lib.rck_encoder_free.argtypes = [ctypes.c_void_p]
    lib.rck_decoder_new.restype = ctypes.c_void_p
    lib.rck_decoder_new.argtypes = [ctypes.c_void_p, ctypes.c_size_t]
    lib.rck_decoder_decode.restype = ctypes.c_int32
    lib.rck_decoder_decode.argtypes = [
        ctypes.c_void_p,
        ctypes.c_void_p, ctypes.c_size_t,
        ctypes.c_void_p, ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t,
        ctypes.c_void_p,
    ]
    lib.rck_decoder_free.argtypes = [ctypes.c_void_p]


def flatten_tables(
    tables: Sequence[QuantizedCdf],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenated CDFs, start offsets and value offsets for the FFI."""
    starts = np.zeros(len(tables) + 1, dtype=np.uint32)
    parts = []
    offsets = np.zeros(len(tables), dtype=np.int32)
    pos = 0
    for i, t in enumerate(tables):
        arr = np.asarray(t.cdf, dtype=np.uint32)
        parts.append(arr)
        pos += arr.size
        starts[i + 1] = pos
        offsets[i] = t.offset
    concat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint32)
    return concat, starts, offsets


def _ptr(arr: np.ndarray):
    return arr.ctypes.data_as(ctypes.c_void_p)


class KernelEncoder:
    def __init__(self):
        self._lib = load_kernel()
        if self._lib is None:
            raise RuntimeError("native range-coder kernel not available")
        self._handle = self._lib.rck_encoder_new()
        self._result: bytes | None = None

    def encode_values(self, values, table_ids, tables: Sequence[QuantizedCdf]) -> None:
        values = np.ascontiguousarray(values, dtype=np.int32)
        ids = np.ascontiguousarray(table_ids, dtype=np.uint32)
        concat, starts, offsets = flatten_tables(tables)
        rc = self._lib.rck_encoder_encode(
            self._handle,
            _ptr(values), _ptr(ids), values.size,
            _ptr(concat), _ptr(starts), _ptr(offsets), len(tables),
        )
        if rc != 0:
            raise RangeCoderError(f"kernel encode failed (code {rc})")

    def flush(self) -> bytes:
        if self._result is None:
            n = ctypes.c_size_t()
            buf = self._lib.rck_encoder_finish(self._handle, ctypes.byref(n))
            self._result = ctypes.string_at(buf, n.value)
            self._lib.rck_encoder_free(self._handle)
            self._handle = None
        return self._result

    def __del__(self):
        if getattr(self, "_handle", None):
            self._lib.rck_encoder_free(self._handle)


class KernelDecoder:
    def __init__(self, data: bytes):
        self._lib = load_kernel()
        if self._lib is None:
            raise RuntimeError("native range-coder kernel not available")
        buf = np.frombuffer(data, dtype=np.uint8)
        buf = np.ascontiguousarray(buf)
        self._handle = self._lib.rck_decoder_new(_ptr(buf) if buf.size else None, buf.size)

    def decode_values(self, table_ids, tables: Sequence[QuantizedCdf], out=None):
        ids = np.ascontiguousarray(table_ids, dtype=np.uint32)
        concat, starts, offsets = flatten_tables(tables)
        result = np.empty(ids.size, dtype=np.int32)
        rc = self._lib.rck_decoder_decode(
            self._handle,
            _ptr(ids), ids.size,
            _ptr(concat), _ptr(starts), _ptr(offsets), len(tables),
            _ptr(result),
        )
        if rc != 0:
            raise RangeCoderError(f"kernel decode failed (code {rc})")
        if out is not None:
            out[: ids.size] = result
            return out
        return result.astype(np.int64)

    def __del__(self):
        if getattr(self, "_handle", None):
            self._lib.rck_decoder_free(self._handle)
            self._handle = None

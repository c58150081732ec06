"""Minimal ctypes binding to the system libzstd (simple one-shot API).

The runtime library ships with the base system even where no Python zstd
package is installed; only the stable C ABI entry points are used.
"""

import ctypes
import ctypes.util
from typing import Optional

from ..errors import CorruptStream, UnsupportedScheme

DEFAULT_LEVEL = 3

_lib: Optional[ctypes.CDLL] = None
_load_error: Optional[str] = None


def _load() -> Optional[ctypes.CDLL]:
    global _lib, _load_error
    if _lib is not None or _load_error is not None:
        return _lib
    candidates = ["libzstd.so.1", "libzstd.so", "libzstd.dylib"]
    found = ctypes.util.find_library("zstd")
    if found:
        candidates.insert(0, found)
    for name in candidates:
        try:
            lib = ctypes.CDLL(name)
        except OSError:
            continue
        lib.ZSTD_compressBound.restype = ctypes.c_size_t
        lib.ZSTD_compressBound.argtypes = [ctypes.c_size_t]
        lib.ZSTD_compress.restype = ctypes.c_size_t
        lib.ZSTD_compress.argtypes = [
            ctypes.c_void_p, ctypes.c_size_t,
            ctypes.c_void_p, ctypes.c_size_t,
            ctypes.c_int,
        ]
        lib.ZSTD_decompress.restype = ctypes.c_size_t
        lib.ZSTD_decompress.argtypes = [
            ctypes.c_void_p, ctypes.c_size_t,
            ctypes.c_void_p, ctypes.c_size_t,
        ]
        lib.ZSTD_isError.restype = ctypes.c_uint
        lib.ZSTD_isError.argtypes = [ctypes.c_size_t]
        lib.ZSTD_getErrorName.restype = ctypes.c_char_p
        lib.ZSTD_getErrorName.argtypes = [ctypes.c_size_t]
        _lib = lib
        return lib
    _load_error = f"libzstd not found (tried {candidates})"
    return None


def available() -> bool:
    return _load() is not None


def compress(data: bytes, level: int = DEFAULT_LEVEL) -> bytes:
    lib = _load()
    if lib is None:
        raise UnsupportedScheme(f"zstd unavailable: {_load_error}")
    bound = lib.ZSTD_compressBound(len(data))
    dst = ctypes.create_string_buffer(bound)
    n = lib.ZSTD_compress(dst, bound, data, len(data), level)
    if lib.ZSTD_isError(n):
        raise CorruptStream(
            "zstd compress failed: " + lib.ZSTD_getErrorName(n).decode()
        )
    return dst.raw[:n]


def decompress(payload: bytes, expected_len: int) -> bytes:
    lib = _load()
    if lib is None:
        raise UnsupportedScheme(f"zstd unavailable: {_load_error}")
    dst = ctypes.create_string_buffer(expected_len) if expected_len else b""
    n = lib.ZSTD_decompress(dst, expected_len, payload, len(payload))
    if lib.ZSTD_isError(n):
        raise CorruptStream(
            "zstd decompress failed: " + lib.ZSTD_getErrorName(n).decode()
        )
    if expected_len == 0:
        return b""
    return dst.raw[:n]

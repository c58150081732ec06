"""Lossless tile codecs: identity, Deflate, TIFF-flavor LZW, and Zstd.

Encode/decode are pure functions of (scheme, buffer); the horizontal
differencing predictor operates on 16-bit samples within each row, per
band. The LZW kernel is compiled (Cython) when available, with a
pure-Python fallback selected at import time; set ``COGSTREAM_PURE_LZW=1``
to force the fallback.
"""

import os
import time
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import CorruptStream, LengthMismatch, UnsupportedScheme
from . import _zstd

if os.environ.get("COGSTREAM_PURE_LZW") == "1":
    from . import _lzwpy as _lzw
    LZW_BACKEND = "python"
else:
    try:
        from . import _lzwcore as _lzw  # type: ignore[no-redef]
        LZW_BACKEND = "cython"
    except ImportError:
        from . import _lzwpy as _lzw  # type: ignore[no-redef]
        LZW_BACKEND = "python"

KINDS = ("none", "lzw", "deflate", "zstd")
DEFLATE_LEVELS = (1, 6, 9)
SAMPLE_BYTES = 2  # uint16 samples throughout


@dataclass(frozen=True)
class CompressionScheme:
    """A codec selection. ``level`` is meaningful on the write side only;
    parsed descriptors carry ``level=None`` for deflate because the TIFF
    compression tag does not record it."""

    kind: str
    level: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedScheme(f"unknown compression kind {self.kind!r}")
        if self.kind in ("none", "lzw") and self.level is not None:
            raise UnsupportedScheme(f"{self.kind} takes no level")

    def write_level(self) -> Optional[int]:
        """Validate and return the level used for encoding."""
        if self.kind == "deflate":
            if self.level not in DEFLATE_LEVELS:
                raise UnsupportedScheme(
                    f"deflate level must be one of {DEFLATE_LEVELS}, "
                    f"got {self.level}"
                )
            return self.level
        if self.kind == "zstd":
            return self.level if self.level is not None else _zstd.DEFAULT_LEVEL
        return None


# The six benchmark variants: identity, LZW (written with the horizontal
# predictor), three deflate levels, and zstd at its default level.
VARIANTS = {
    "none": CompressionScheme("none"),
    "lzw": CompressionScheme("lzw"),
    "deflate1": CompressionScheme("deflate", 1),
    "deflate6": CompressionScheme("deflate", 6),
    "deflate9": CompressionScheme("deflate", 9),
    "zstd": CompressionScheme("zstd", _zstd.DEFAULT_LEVEL),
}

VARIANT_KEYS = tuple(VARIANTS)


@dataclass
class CodecCall:
    """Per-call accounting for pipeline throughput bookkeeping."""

    bytes_in: int
    bytes_out: int
    seconds: float


def predictor_encode(raw: bytes, row_stride: int, samples_per_pixel: int,
                     byteorder: str = "<") -> bytes:
    """Apply horizontal differencing to 16-bit samples, per row per band."""
    arr = _as_rows(raw, row_stride, byteorder)
    out = arr.copy()
    out[:, samples_per_pixel:] -= arr[:, :-samples_per_pixel]
    return out.tobytes()


def predictor_decode(raw: bytes, row_stride: int, samples_per_pixel: int,
                     byteorder: str = "<") -> bytes:
    """Reverse horizontal differencing (prefix sums along each band row)."""
    arr = _as_rows(raw, row_stride, byteorder).copy()
    for band in range(samples_per_pixel):
        np.cumsum(arr[:, band::samples_per_pixel], axis=1, dtype=arr.dtype,
                  out=arr[:, band::samples_per_pixel])
    return arr.tobytes()


def _as_rows(raw: bytes, row_stride: int, byteorder: str) -> np.ndarray:
    if row_stride <= 0 or row_stride % SAMPLE_BYTES:
        raise ValueError(f"bad row stride {row_stride}")
    if len(raw) % row_stride:
        raise ValueError(
            f"buffer length {len(raw)} not a multiple of row stride {row_stride}"
        )
    arr = np.frombuffer(raw, dtype=byteorder + "u2")
    return arr.reshape(-1, row_stride // SAMPLE_BYTES)


def encode(scheme: CompressionScheme, raw: bytes, row_stride: int, *,
           predictor: bool = False, samples_per_pixel: int = 1) -> bytes:
    """Encode a tile buffer. The predictor, when enabled, is applied per
    row per band before entropy coding."""
    if predictor:
        raw = predictor_encode(raw, row_stride, samples_per_pixel)
    if scheme.kind == "none":
        return raw
    if scheme.kind == "deflate":
        return zlib.compress(raw, scheme.write_level())
    if scheme.kind == "lzw":
        return _lzw.encode(raw)
    if scheme.kind == "zstd":
        return _zstd.compress(raw, scheme.write_level())
    raise UnsupportedScheme(scheme.kind)


def decode(scheme: CompressionScheme, payload: bytes, expected_len: int,
           row_stride: int, *, predictor: bool = False,
           samples_per_pixel: int = 1, byteorder: str = "<") -> bytes:
    """Decode a tile payload to exactly ``expected_len`` bytes, reversing
    the predictor after entropy decoding."""
    if scheme.kind == "none":
        raw = payload
    elif scheme.kind == "deflate":
        try:
            raw = zlib.decompress(payload)
        except zlib.error as exc:
            raise CorruptStream(f"deflate: {exc}") from exc
    elif scheme.kind == "lzw":
        raw = _lzw.decode(payload, expected_len)
    elif scheme.kind == "zstd":
        raw = _zstd.decompress(payload, expected_len)
    else:
        raise UnsupportedScheme(scheme.kind)
    if len(raw) != expected_len:
        raise LengthMismatch(
            f"decoded {len(raw)} bytes, expected {expected_len}"
        )
    if predictor:
        raw = predictor_decode(raw, row_stride, samples_per_pixel, byteorder)
    return raw


def decode_counted(scheme, payload, expected_len, row_stride, **kwargs):
    """Like :func:`decode` but also returns per-call accounting."""
    t0 = time.perf_counter()
    raw = decode(scheme, payload, expected_len, row_stride, **kwargs)
    return raw, CodecCall(len(payload), len(raw), time.perf_counter() - t0)

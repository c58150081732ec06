import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogstream import codecs
from cogstream.codecs import (
    CompressionScheme,
    VARIANTS,
    _lzwpy,
    decode,
    decode_counted,
    encode,
    predictor_decode,
    predictor_encode,
)
from cogstream.errors import CorruptStream, LengthMismatch, UnsupportedScheme

SCHEMES = list(VARIANTS.values())


def smooth_buffer(n_rows=64, row_samples=128, seed=0):
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.integers(-3, 4, (n_rows, row_samples)), axis=1)
    return (base.astype(np.uint16)).tobytes(), row_samples * 2


class TestSchemeValidation:
    def test_unknown_kind(self):
        with pytest.raises(UnsupportedScheme):
            CompressionScheme("brotli")

    def test_level_on_levelless_kind(self):
        with pytest.raises(UnsupportedScheme):
            CompressionScheme("none", 6)
        with pytest.raises(UnsupportedScheme):
            CompressionScheme("lzw", 2)

    def test_deflate_write_levels(self):
        with pytest.raises(UnsupportedScheme):
            CompressionScheme("deflate", 4).write_level()
        with pytest.raises(UnsupportedScheme):
            CompressionScheme("deflate").write_level()
        assert CompressionScheme("deflate", 9).write_level() == 9

    def test_zstd_defaults(self):
        assert CompressionScheme("zstd").write_level() == 3


class TestRoundtrip:
    @pytest.mark.parametrize("key", list(VARIANTS))
    def test_smooth_fixture(self, key):
        raw, stride = smooth_buffer()
        payload = encode(VARIANTS[key], raw, stride)
        assert decode(VARIANTS[key], payload, len(raw), stride) == raw

    @pytest.mark.parametrize("key", list(VARIANTS))
    def test_all_zero(self, key):
        raw = bytes(4096)
        payload = encode(VARIANTS[key], raw, 64)
        assert decode(VARIANTS[key], payload, len(raw), 64) == raw

    @pytest.mark.parametrize("key", list(VARIANTS))
    def test_with_predictor(self, key):
        raw, stride = smooth_buffer(seed=3)
        payload = encode(VARIANTS[key], raw, stride, predictor=True,
                         samples_per_pixel=4)
        back = decode(VARIANTS[key], payload, len(raw), stride,
                      predictor=True, samples_per_pixel=4)
        assert back == raw

    def test_none_is_identity(self):
        raw, stride = smooth_buffer()
        assert encode(VARIANTS["none"], raw, stride) == raw

    def test_encode_deterministic(self):
        raw, stride = smooth_buffer(seed=9)
        for scheme in SCHEMES:
            assert encode(scheme, raw, stride) == encode(scheme, raw, stride)

    @pytest.mark.parametrize("key", list(VARIANTS))
    def test_fuzz_1000_buffers(self, key):
        # mixed-entropy byte buffers, all row-stride aligned
        rng = np.random.default_rng(17)
        scheme = VARIANTS[key]
        for i in range(1000):
            rows = int(rng.integers(1, 8))
            stride = int(rng.integers(1, 32)) * 2
            if rng.integers(0, 2):
                raw = rng.integers(0, 256, rows * stride,
                                   dtype=np.uint8).tobytes()
            else:
                value = int(rng.integers(0, 256))
                raw = bytes([value]) * (rows * stride)
            payload = encode(scheme, raw, stride)
            assert decode(scheme, payload, len(raw), stride) == raw


class TestDeflateLevels:
    def test_level_ordering_on_smooth_fixture(self):
        from cogstream import synth

        scene = synth.generate_synthetic_scene(256, 256, 4, seed=11,
                                               smoothness=0.8)
        raw = scene.astype("<u2").tobytes()
        stride = 256 * 4 * 2
        sizes = {
            level: len(encode(CompressionScheme("deflate", level), raw, stride))
            for level in (1, 6, 9)
        }
        assert sizes[9] <= sizes[1] <= len(raw)


class TestPredictor:
    def test_constant_row_differences(self):
        row = np.array([5, 5, 5, 5], dtype=np.uint16).tobytes()
        diffs = predictor_encode(row, 8, 1)
        assert np.frombuffer(diffs, "<u2").tolist() == [5, 0, 0, 0]
        assert predictor_decode(diffs, 8, 1) == row

    def test_wraparound(self):
        row = np.array([65535, 1], dtype=np.uint16).tobytes()
        assert predictor_decode(predictor_encode(row, 4, 1), 4, 1) == row

    def test_per_band_independence(self):
        # two bands: differencing must hop over the other band's samples
        arr = np.array([[10, 100, 12, 103, 14, 106]], dtype=np.uint16)
        diffs = np.frombuffer(
            predictor_encode(arr.tobytes(), 12, 2), "<u2"
        ).tolist()
        assert diffs == [10, 100, 2, 3, 2, 3]

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 5),
           st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, rows, cols, bands, seed):
        rng = np.random.default_rng(seed)
        arr = rng.integers(0, 65536, (rows, cols, bands), dtype=np.uint16)
        stride = cols * bands * 2
        raw = arr.tobytes()
        assert predictor_decode(
            predictor_encode(raw, stride, bands), stride, bands
        ) == raw


class TestErrors:
    def test_truncated_deflate(self):
        raw, stride = smooth_buffer()
        payload = encode(VARIANTS["deflate6"], raw, stride)
        with pytest.raises(CorruptStream):
            decode(VARIANTS["deflate6"], payload[:10], len(raw), stride)

    def test_truncated_lzw(self):
        raw, stride = smooth_buffer()
        payload = encode(VARIANTS["lzw"], raw, stride)
        with pytest.raises((CorruptStream, LengthMismatch)):
            decode(VARIANTS["lzw"], payload[:8], len(raw), stride)

    def test_corrupt_zstd(self):
        with pytest.raises(CorruptStream):
            decode(VARIANTS["zstd"], b"not a zstd frame", 128, 16)

    def test_length_mismatch(self):
        raw, stride = smooth_buffer()
        payload = encode(VARIANTS["deflate6"], raw, stride)
        with pytest.raises(LengthMismatch):
            decode(VARIANTS["deflate6"], payload, len(raw) + 2, stride)

    def test_stats_counter(self):
        raw, stride = smooth_buffer()
        payload = encode(VARIANTS["zstd"], raw, stride)
        out, stats = decode_counted(VARIANTS["zstd"], payload, len(raw), stride)
        assert out == raw
        assert stats.bytes_in == len(payload)
        assert stats.bytes_out == len(raw)
        assert stats.seconds >= 0


class TestLzwBackends:
    """The compiled kernel and the fallback must be wire-identical."""

    backend = pytest.importorskip("cogstream.codecs._lzwcore")

    def test_encodings_identical(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(0, 5000))
            raw = rng.integers(0, 64, n, dtype=np.uint8).tobytes()
            assert bytes(self.backend.encode(raw)) == _lzwpy.encode(raw)

    def test_cross_decoding(self):
        rng = np.random.default_rng(6)
        raw = rng.integers(0, 16, 200_000, dtype=np.uint8).tobytes()
        compiled = bytes(self.backend.encode(raw))
        assert _lzwpy.decode(compiled, len(raw)) == raw
        assert self.backend.decode(_lzwpy.encode(raw), len(raw)) == raw

    def test_table_reset_streams(self):
        # > 3836 new strings forces table resets in both implementations
        rng = np.random.default_rng(7)
        raw = rng.integers(0, 256, 120_000, dtype=np.uint8).tobytes()
        for mod in (self.backend, _lzwpy):
            assert mod.decode(bytes(mod.encode(raw)), len(raw)) == raw

    def test_empty_and_single(self):
        for mod in (self.backend, _lzwpy):
            assert mod.decode(bytes(mod.encode(b"")), 0) == b""
            assert mod.decode(bytes(mod.encode(b"\x42")), 1) == b"\x42"


def test_deflate_payload_matches_zlib():
    # our deflate must be plain zlib streams (ecosystem compatibility)
    raw, stride = smooth_buffer()
    payload = encode(VARIANTS["deflate6"], raw, stride)
    assert zlib.decompress(payload) == raw

import zlib
from pathlib import Path

import numpy as np
import pytest

from conftest import make_tiff
from cogstream import synth
from cogstream.cog import (
    CogDescriptor,
    TileIndex,
    decode_tile,
    iter_tiles,
    parse_cog,
    read_full,
    tile_byte_extent,
    transcode,
    write_cog,
)
from cogstream.codecs import VARIANTS, CompressionScheme
from cogstream.errors import (
    CorruptTile,
    NotTiff,
    SizeMismatch,
    StripedNotTiled,
    TileOutOfRange,
    TruncatedHeader,
    UnsupportedCodec,
)
from cogstream.sources import BytesSource, LocalSource


class TestParse:
    def test_2048_deflate6_descriptor(self, paper_scene, tmp_path):
        path = tmp_path / "scene.tif"
        path.write_bytes(write_cog(paper_scene, VARIANTS["deflate6"]))
        with LocalSource(path) as src:
            desc = parse_cog(src)
        assert (desc.tiles_x, desc.tiles_y) == (4, 4)
        assert desc.bands == 4
        assert desc.width == desc.height == 2048
        assert desc.tile_width == desc.tile_height == 512
        assert desc.compression.kind == "deflate"
        assert desc.bits_per_sample == 16
        assert desc.format_variant == "classic"
        assert desc.byte_order == "<"

    def test_zstd_variant_same_geometry(self, paper_scene):
        d1 = parse_cog(BytesSource(write_cog(paper_scene, VARIANTS["deflate6"])))
        d2 = parse_cog(BytesSource(write_cog(paper_scene, VARIANTS["zstd"])))
        assert d2.compression.kind == "zstd"
        assert (d1.width, d1.height, d1.bands) == (d2.width, d2.height, d2.bands)
        assert (d1.tiles_x, d1.tiles_y) == (d2.tiles_x, d2.tiles_y)

    def test_striped_file_rejected(self):
        data = (Path_striped := __import__("pathlib").Path(__file__).parent /
                "data" / "striped_deflate.tif").read_bytes()
        with pytest.raises(StripedNotTiled):
            parse_cog(BytesSource(data))

    def test_bad_magic(self):
        with pytest.raises(NotTiff):
            parse_cog(BytesSource(b"PK\x03\x04" + bytes(64)))
        with pytest.raises(NotTiff):
            parse_cog(BytesSource(b"II\x2b\x01" + bytes(64)))  # magic 299

    def test_truncated(self):
        with pytest.raises(TruncatedHeader):
            parse_cog(BytesSource(b"II\x2a\x00\x10\x00\x00\x00"))  # IFD past EOF

    def test_unsupported_compression_tag(self):
        data = make_tiff([
            (256, 3, [64]), (257, 3, [64]), (258, 3, [16]),
            (259, 3, [7]),  # JPEG: outside the supported set
            (277, 3, [1]), (322, 3, [64]), (323, 3, [64]),
            (324, 4, [200]), (325, 4, [8192]),
        ])
        with pytest.raises(UnsupportedCodec):
            parse_cog(BytesSource(data))

    def test_legacy_deflate_code_rejected(self):
        data = make_tiff([
            (256, 3, [64]), (257, 3, [64]), (258, 3, [16]),
            (259, 4, [32946]),  # legacy COMPRESSION_DEFLATE, not honored
            (277, 3, [1]), (322, 3, [64]), (323, 3, [64]),
            (324, 4, [200]), (325, 4, [8192]),
        ])
        with pytest.raises(UnsupportedCodec):
            parse_cog(BytesSource(data))

    def test_predictor_without_entropy_coding_rejected(self):
        data = make_tiff([
            (256, 3, [64]), (257, 3, [64]), (258, 3, [16]),
            (259, 3, [1]), (317, 3, [2]),
            (277, 3, [1]), (322, 3, [64]), (323, 3, [64]),
            (324, 4, [200]), (325, 4, [8192]),
        ])
        with pytest.raises(UnsupportedCodec):
            parse_cog(BytesSource(data))

    def test_eight_bit_samples_rejected(self):
        data = make_tiff([
            (256, 3, [64]), (257, 3, [64]), (258, 3, [8]),
            (259, 3, [1]), (277, 3, [1]), (322, 3, [64]), (323, 3, [64]),
            (324, 4, [200]), (325, 4, [8192]),
        ])
        with pytest.raises(UnsupportedCodec):
            parse_cog(BytesSource(data))

    def test_metadata_byte_budget(self, paper_scene):
        src = BytesSource(write_cog(paper_scene, VARIANTS["deflate6"]))
        desc = parse_cog(src)
        reads = src.log.snapshot()
        assert sum(r.length for r in reads) < 64 * 1024
        # metadata reads never touch tile payload bytes
        first_tile_offset = min(off for off, _ in desc.tile_index.entries)
        assert all(r.offset + r.length <= first_tile_offset for r in reads)


class TestTileExtent:
    @pytest.fixture(scope="class")
    def desc(self, small_scene):
        return parse_cog(BytesSource(write_cog(small_scene, VARIANTS["none"])))

    def test_row_major_bijection(self, desc):
        seen = []
        for tx, ty in iter_tiles(desc):
            seen.append(tile_byte_extent(desc, tx, ty))
        assert seen == list(desc.tile_index.entries)
        assert len(set(seen)) == desc.tiles_x * desc.tiles_y

    def test_corner_entries(self, desc):
        assert tile_byte_extent(desc, 0, 0) == desc.tile_index.entries[0]
        assert tile_byte_extent(desc, desc.tiles_x - 1, desc.tiles_y - 1) == \
            desc.tile_index.entries[-1]

    def test_out_of_range(self, desc):
        with pytest.raises(TileOutOfRange):
            tile_byte_extent(desc, desc.tiles_x, 0)
        with pytest.raises(TileOutOfRange):
            tile_byte_extent(desc, 0, -1)


class TestDecodeTile:
    def test_constant_tile_identity_codec(self):
        block = np.full((512, 512, 4), 7, dtype=np.uint16)
        data = write_cog(block, VARIANTS["none"])
        desc = parse_cog(BytesSource(data))
        off, cnt = tile_byte_extent(desc, 0, 0)
        tile = decode_tile(desc, data[off:off + cnt])
        assert tile.shape == (512, 512, 4)
        assert (tile == 7).all()

    def test_corrupt_payload(self, small_scene):
        data = write_cog(small_scene, VARIANTS["deflate6"])
        desc = parse_cog(BytesSource(data))
        with pytest.raises(CorruptTile):
            decode_tile(desc, b"\x00\x01garbage")

    def test_wrong_length(self, small_scene):
        data = write_cog(small_scene, VARIANTS["none"])
        desc = parse_cog(BytesSource(data))
        off, cnt = tile_byte_extent(desc, 0, 0)
        with pytest.raises(SizeMismatch):
            decode_tile(desc, data[off:off + cnt - 8])


class TestWrite:
    def test_uncompressed_payload_arithmetic(self, paper_scene):
        data = write_cog(paper_scene, VARIANTS["none"])
        desc = parse_cog(BytesSource(data))
        payload = sum(cnt for _, cnt in desc.tile_index.entries)
        assert payload == 2048 * 2048 * 4 * 2 == 33_554_432
        data_start = min(off for off, _ in desc.tile_index.entries)
        assert len(data) == data_start + payload

    def test_deflate_level_ordering_on_scene(self, small_scene):
        sizes = {
            key: len(write_cog(small_scene, VARIANTS[key]))
            for key in ("none", "deflate1", "deflate6", "deflate9")
        }
        assert (sizes["deflate9"] <= sizes["deflate6"]
                <= sizes["deflate1"] <= sizes["none"])

    @pytest.mark.parametrize("key", list(VARIANTS))
    def test_roundtrip_bit_exact(self, small_scene, key):
        data = write_cog(small_scene, VARIANTS[key])
        desc = parse_cog(BytesSource(data))
        assert np.array_equal(read_full(desc, BytesSource(data)), small_scene)

    def test_edge_tiles_padded_with_zeros(self, small_scene):
        # 700x600 at tile 512: right/bottom tiles are partial
        data = write_cog(small_scene, VARIANTS["none"])
        desc = parse_cog(BytesSource(data))
        off, cnt = tile_byte_extent(desc, 1, 1)
        assert cnt == desc.tile_byte_volume  # stored full-size
        tile = decode_tile(desc, data[off:off + cnt])
        assert (tile[600 - 512:, :] == 0).all()
        assert (tile[:, 700 - 512:] == 0).all()

    def test_forced_bigtiff_roundtrip(self, small_scene):
        data = write_cog(small_scene, VARIANTS["deflate1"], variant="bigtiff")
        desc = parse_cog(BytesSource(data))
        assert desc.format_variant == "bigtiff"
        assert np.array_equal(read_full(desc, BytesSource(data)), small_scene)

    def test_single_band_2d_input(self):
        arr = np.arange(96 * 64, dtype=np.uint16).reshape(96, 64)
        data = write_cog(arr, VARIANTS["lzw"], tile=512)
        desc = parse_cog(BytesSource(data))
        assert desc.bands == 1
        assert desc.predictor == "horizontal"
        assert np.array_equal(read_full(desc, BytesSource(data))[:, :, 0], arr)

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValueError):
            write_cog(np.zeros((8, 8, 1), dtype=np.uint8), VARIANTS["none"])

    def test_deflate_payloads_are_zlib(self, small_scene):
        data = write_cog(small_scene, VARIANTS["deflate6"])
        desc = parse_cog(BytesSource(data))
        off, cnt = tile_byte_extent(desc, 0, 0)
        assert len(zlib.decompress(data[off:off + cnt])) == desc.tile_byte_volume


class TestTranscode:
    def test_one_scene_six_schemes(self, small_scene, tmp_path):
        src_bytes = write_cog(small_scene, VARIANTS["deflate6"])
        written = transcode(BytesSource(src_bytes), VARIANTS, tmp_path)
        assert len(written) == 6
        images = {}
        descs = {}
        for key, path in written.items():
            data = path.read_bytes()
            descs[key] = parse_cog(BytesSource(data))
            images[key] = read_full(descs[key], BytesSource(data))
        base = images["none"]
        for key, img in images.items():
            assert np.array_equal(img, base), key
        geoms = {(d.tiles_x, d.tiles_y, d.tile_width) for d in descs.values()}
        assert len(geoms) == 1

    def test_empty_scheme_set(self, small_scene, tmp_path):
        src = BytesSource(write_cog(small_scene, VARIANTS["none"]))
        assert transcode(src, {}, tmp_path) == {}

    def test_corrupt_source_no_partial_outputs(self, tmp_path):
        out = tmp_path / "outputs"
        with pytest.raises(NotTiff):
            transcode(BytesSource(b"junkjunkjunkjunk"), VARIANTS, out)
        assert not out.exists() or not list(out.iterdir())


class TestSyntheticScene:
    def test_deterministic(self):
        a = synth.generate_synthetic_scene(256, 128, 4, seed=1, smoothness=0.8)
        b = synth.generate_synthetic_scene(256, 128, 4, seed=1, smoothness=0.8)
        assert np.array_equal(a, b)
        c = synth.generate_synthetic_scene(256, 128, 4, seed=2, smoothness=0.8)
        assert not np.array_equal(a, c)

    def test_constant_field_compresses_away(self):
        scene = synth.generate_synthetic_scene(512, 512, 4, seed=3,
                                               smoothness=1.0)
        assert scene.min() == scene.max()
        raw = scene.tobytes()
        assert len(zlib.compress(raw, 6)) < 0.05 * len(raw)

    def test_white_noise_incompressible(self):
        scene = synth.generate_synthetic_scene(512, 512, 4, seed=3,
                                               smoothness=0.0)
        raw = scene.tobytes()
        assert len(zlib.compress(raw, 6)) >= 0.9 * len(raw)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            synth.generate_synthetic_scene(0, 10, 1, seed=0)
        with pytest.raises(ValueError):
            synth.generate_synthetic_scene(10, 10, 1, seed=0, smoothness=1.5)


def test_tile_index_invariant():
    with pytest.raises(Exception):
        TileIndex(2, 2, ((0, 4),))

"""Tiled GeoTIFF/COG parsing, writing, and transcoding.

The parser reads only the header and IFD byte ranges (bounded metadata
reads), so any tile's byte extent is addressable without scanning the
file — the property that makes range-served COGs practical. The writer
emits little-endian classic TIFF, switching to BigTIFF when the payload
would overflow 32-bit offsets; the parser accepts both byte orders and
both variants.
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Tuple

import numpy as np

from . import codecs
from .codecs import CompressionScheme
from .errors import (
    CorruptStream,
    CorruptTile,
    LengthMismatch,
    NotTiff,
    RangeOutOfBounds,
    SizeMismatch,
    StripedNotTiled,
    TiffError,
    TileOutOfRange,
    TruncatedHeader,
    UnsupportedCodec,
)

CLASSIC_MAGIC = 42
BIGTIFF_MAGIC = 43

TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_PHOTOMETRIC = 262
TAG_STRIP_OFFSETS = 273
TAG_SAMPLES_PER_PIXEL = 277
TAG_ROWS_PER_STRIP = 278
TAG_PLANAR_CONFIG = 284
TAG_PREDICTOR = 317
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325
TAG_SAMPLE_FORMAT = 339

COMPRESSION_CODES = {1: "none", 5: "lzw", 8: "deflate", 50000: "zstd"}
COMPRESSION_TAGS = {v: k for k, v in COMPRESSION_CODES.items()}

TYPE_SIZES = {1: 1, 3: 2, 4: 4, 16: 8}  # BYTE, SHORT, LONG, LONG8
TYPE_FORMATS = {1: "B", 3: "H", 4: "I", 16: "Q"}

SAMPLE_BYTES = codecs.SAMPLE_BYTES

# Classic offsets are u32; switch to BigTIFF with some headroom.
BIGTIFF_THRESHOLD = 2**32 - 2**16


@dataclass(frozen=True)
class TileIndex:
    """Byte extents of every tile, row-major (y outer, x inner)."""

    tiles_x: int
    tiles_y: int
    entries: Tuple[Tuple[int, int], ...]  # (byte_offset, byte_count)

    def __post_init__(self):
        if len(self.entries) != self.tiles_x * self.tiles_y:
            raise TiffError(
                f"tile index has {len(self.entries)} entries for a "
                f"{self.tiles_x}x{self.tiles_y} grid"
            )


@dataclass(frozen=True)
class CogDescriptor:
    """Parsed raster metadata plus the tile index for one COG."""

    width: int
    height: int
    bands: int
    bits_per_sample: int
    sample_format: int
    tile_width: int
    tile_height: int
    compression: CompressionScheme
    predictor: str  # "none" | "horizontal"
    byte_order: str  # "<" | ">"
    format_variant: str  # "classic" | "bigtiff"
    tile_index: TileIndex

    @property
    def tiles_x(self) -> int:
        return self.tile_index.tiles_x

    @property
    def tiles_y(self) -> int:
        return self.tile_index.tiles_y

    @property
    def tile_byte_volume(self) -> int:
        """Decoded size of one (full, padded) tile."""
        return self.tile_width * self.tile_height * self.bands * SAMPLE_BYTES


class _MetaReader:
    """Bounded reads over a byte source with TIFF error mapping."""

    def __init__(self, source):
        self.source = source

    def read(self, offset: int, length: int) -> bytes:
        try:
            return self.source.get_range(offset, length)
        except RangeOutOfBounds as exc:
            raise TruncatedHeader(
                f"metadata read [{offset}, {offset + length}) past EOF"
            ) from exc


def parse_cog(source) -> CogDescriptor:
    """Parse header + IFD of a tiled TIFF/BigTIFF into a descriptor.

    Only the header, the first IFD, and that IFD's out-of-line values are
    fetched; tile payloads are never touched.
    """
    r = _MetaReader(source)
    head = r.read(0, 8)
    if head[:2] == b"II":
        bo = "<"
    elif head[:2] == b"MM":
        bo = ">"
    else:
        raise NotTiff(f"bad byte-order mark {head[:2]!r}")
    (magic,) = struct.unpack(bo + "H", head[2:4])
    if magic == CLASSIC_MAGIC:
        variant = "classic"
        (ifd_off,) = struct.unpack(bo + "I", head[4:8])
    elif magic == BIGTIFF_MAGIC:
        variant = "bigtiff"
        offsize, zero = struct.unpack(bo + "HH", head[4:8])
        if offsize != 8 or zero != 0:
            raise NotTiff(f"bad BigTIFF header (offset size {offsize})")
        (ifd_off,) = struct.unpack(bo + "Q", r.read(8, 8))
    else:
        raise NotTiff(f"bad magic {magic}")

    tags = _read_ifd(r, bo, variant, ifd_off)

    if TAG_TILE_WIDTH not in tags or TAG_TILE_OFFSETS not in tags:
        if TAG_STRIP_OFFSETS in tags or TAG_ROWS_PER_STRIP in tags:
            raise StripedNotTiled("strip layout; only tiled files supported")
        raise StripedNotTiled("no tile tags present")

    width = _single(tags, TAG_IMAGE_WIDTH)
    height = _single(tags, TAG_IMAGE_LENGTH)
    bands = _single(tags, TAG_SAMPLES_PER_PIXEL, default=1)
    if width <= 0 or height <= 0 or bands <= 0:
        raise TiffError(f"bad dimensions {width}x{height}x{bands}")

    bits = tags.get(TAG_BITS_PER_SAMPLE, [16])
    if any(b != 16 for b in bits):
        raise UnsupportedCodec(f"only 16-bit samples supported, got {bits}")
    fmt = tags.get(TAG_SAMPLE_FORMAT, [1])
    if any(f != 1 for f in fmt):
        raise UnsupportedCodec(f"only unsigned-integer samples supported, got {fmt}")
    planar = _single(tags, TAG_PLANAR_CONFIG, default=1)
    if planar != 1:
        raise UnsupportedCodec("only chunky (pixel-interleaved) layout supported")

    comp_code = _single(tags, TAG_COMPRESSION, default=1)
    kind = COMPRESSION_CODES.get(comp_code)
    if kind is None:
        raise UnsupportedCodec(f"compression tag {comp_code} not supported")

    pred_code = _single(tags, TAG_PREDICTOR, default=1)
    if pred_code == 1:
        predictor = "none"
    elif pred_code == 2:
        if kind not in ("lzw", "deflate", "zstd"):
            raise UnsupportedCodec(
                f"predictor 2 with compression {kind!r} not supported"
            )
        predictor = "horizontal"
    else:
        raise UnsupportedCodec(f"predictor {pred_code} not supported")

    tile_w = _single(tags, TAG_TILE_WIDTH)
    tile_h = _single(tags, TAG_TILE_LENGTH)
    if tile_w <= 0 or tile_h <= 0:
        raise TiffError(f"bad tile size {tile_w}x{tile_h}")
    tiles_x = -(-width // tile_w)
    tiles_y = -(-height // tile_h)

    offsets = tags[TAG_TILE_OFFSETS]
    counts = tags.get(TAG_TILE_BYTE_COUNTS)
    if counts is None:
        raise TiffError("TileByteCounts tag missing")
    if len(offsets) != tiles_x * tiles_y or len(counts) != len(offsets):
        raise TiffError(
            f"tile index size {len(offsets)}/{len(counts)} does not match "
            f"{tiles_x}x{tiles_y} grid"
        )

    index = TileIndex(tiles_x, tiles_y, tuple(zip(offsets, counts)))
    return CogDescriptor(
        width=width,
        height=height,
        bands=bands,
        bits_per_sample=16,
        sample_format=1,
        tile_width=tile_w,
        tile_height=tile_h,
        compression=CompressionScheme(kind),
        predictor=predictor,
        byte_order=bo,
        format_variant=variant,
        tile_index=index,
    )


def _read_ifd(r: _MetaReader, bo: str, variant: str, ifd_off: int) -> dict:
    """Read the first IFD and resolve out-of-line values for known tags."""
    if variant == "classic":
        (n_entries,) = struct.unpack(bo + "H", r.read(ifd_off, 2))
        entry_size, inline_cap = 12, 4
        block = r.read(ifd_off + 2, n_entries * entry_size + 4)
        count_fmt, off_fmt = "I", "I"
    else:
        (n_entries,) = struct.unpack(bo + "Q", r.read(ifd_off, 8))
        entry_size, inline_cap = 20, 8
        block = r.read(ifd_off + 8, n_entries * entry_size + 8)
        count_fmt, off_fmt = "Q", "Q"
    if n_entries == 0:
        raise TruncatedHeader("empty IFD")

    tags = {}
    for i in range(n_entries):
        entry = block[i * entry_size:(i + 1) * entry_size]
        tag, typ = struct.unpack(bo + "HH", entry[:4])
        (count,) = struct.unpack(bo + count_fmt, entry[4:4 + struct.calcsize(count_fmt)])
        payload = entry[4 + struct.calcsize(count_fmt):]
        if typ not in TYPE_SIZES:
            continue  # types we never need (rationals, ascii, ...)
        size = TYPE_SIZES[typ] * count
        if size <= inline_cap:
            data = payload[:size]
        else:
            (value_off,) = struct.unpack(bo + off_fmt, payload)
            data = r.read(value_off, size)
        tags[tag] = list(struct.unpack(bo + str(count) + TYPE_FORMATS[typ], data))
    return tags


def _single(tags: dict, tag: int, default: Optional[int] = None) -> int:
    values = tags.get(tag)
    if values is None:
        if default is None:
            raise TiffError(f"required tag {tag} missing")
        return default
    return values[0]


def tile_byte_extent(desc: CogDescriptor, tx: int, ty: int) -> Tuple[int, int]:
    """Byte range whose fetch + decode yields tile (tx, ty)."""
    if not (0 <= tx < desc.tiles_x and 0 <= ty < desc.tiles_y):
        raise TileOutOfRange(
            f"tile ({tx},{ty}) outside {desc.tiles_x}x{desc.tiles_y} grid"
        )
    return desc.tile_index.entries[ty * desc.tiles_x + tx]


def decode_tile(desc: CogDescriptor, raw: bytes) -> np.ndarray:
    """Decode one tile payload to a (tile_height, tile_width, bands) array.

    Edge tiles are stored full-size (zero padded); callers crop.
    """
    expected = desc.tile_byte_volume
    row_stride = desc.tile_width * desc.bands * SAMPLE_BYTES
    try:
        data = codecs.decode(
            desc.compression,
            raw,
            expected,
            row_stride,
            predictor=desc.predictor == "horizontal",
            samples_per_pixel=desc.bands,
            byteorder=desc.byte_order,
        )
    except LengthMismatch as exc:
        raise SizeMismatch(str(exc)) from exc
    except CorruptStream as exc:
        raise CorruptTile(str(exc)) from exc
    arr = np.frombuffer(data, dtype=desc.byte_order + "u2")
    arr = arr.reshape(desc.tile_height, desc.tile_width, desc.bands)
    return arr.astype(np.uint16, copy=False)


def write_cog(pixels: np.ndarray, scheme: CompressionScheme, tile: int = 512,
              variant: str = "auto") -> bytes:
    """Serialize a pixel array as a tiled COG; returns the file bytes.

    Tile data is laid out row-major after the IFD; edge tiles are padded
    to full tile size with zeros. All schemes are lossless, so a
    parse + decode roundtrip reproduces ``pixels`` exactly.
    """
    if pixels.ndim == 2:
        pixels = pixels[:, :, np.newaxis]
    if pixels.ndim != 3:
        raise ValueError(f"expected HxWxB array, got shape {pixels.shape}")
    if pixels.dtype != np.uint16:
        raise ValueError(f"expected uint16 samples, got {pixels.dtype}")
    if variant not in ("auto", "classic", "bigtiff"):
        raise ValueError(f"unknown variant {variant!r}")
    scheme.write_level()  # validate before encoding anything

    height, width, bands = pixels.shape
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    predictor = scheme.kind == "lzw"
    row_stride = tile * bands * SAMPLE_BYTES

    payloads = []
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            block = np.zeros((tile, tile, bands), dtype="<u2")
            ys = slice(ty * tile, min((ty + 1) * tile, height))
            xs = slice(tx * tile, min((tx + 1) * tile, width))
            block[:ys.stop - ys.start, :xs.stop - xs.start] = pixels[ys, xs]
            payloads.append(
                codecs.encode(
                    scheme,
                    block.tobytes(),
                    row_stride,
                    predictor=predictor,
                    samples_per_pixel=bands,
                )
            )

    total_payload = sum(len(p) for p in payloads)
    if variant == "auto":
        variant = "bigtiff" if total_payload > BIGTIFF_THRESHOLD else "classic"

    offsets_type = 16 if variant == "bigtiff" else 4
    tags = [
        (TAG_IMAGE_WIDTH, 4, [width]),
        (TAG_IMAGE_LENGTH, 4, [height]),
        (TAG_BITS_PER_SAMPLE, 3, [16] * bands),
        (TAG_COMPRESSION, 3, [COMPRESSION_TAGS[scheme.kind]]),
        (TAG_PHOTOMETRIC, 3, [1]),
        (TAG_SAMPLES_PER_PIXEL, 3, [bands]),
        (TAG_PLANAR_CONFIG, 3, [1]),
        (TAG_TILE_WIDTH, 3, [tile]),
        (TAG_TILE_LENGTH, 3, [tile]),
        (TAG_TILE_OFFSETS, offsets_type, [0] * len(payloads)),  # patched below
        (TAG_TILE_BYTE_COUNTS, 4, [len(p) for p in payloads]),
        (TAG_SAMPLE_FORMAT, 3, [1] * bands),
    ]
    if predictor:
        tags.append((TAG_PREDICTOR, 3, [2]))
    tags.sort(key=lambda t: t[0])

    if variant == "classic":
        header_size, entry_size, inline_cap = 8, 12, 4
        count_fmt, off_fmt = "I", "I"
    else:
        header_size, entry_size, inline_cap = 16, 20, 8
        count_fmt, off_fmt = "Q", "Q"

    ifd_off = header_size
    ifd_size = (2 if variant == "classic" else 8) + len(tags) * entry_size \
        + (4 if variant == "classic" else 8)
    external_off = ifd_off + ifd_size

    # first pass: lay out the external value region
    external_sizes = []
    pos = external_off
    for tag, typ, values in tags:
        size = TYPE_SIZES[typ] * len(values)
        if size > inline_cap:
            pos += pos % 2  # keep values word-aligned
            external_sizes.append((tag, pos, size))
            pos += size
    data_start = pos + pos % 2
    external_pos = {tag: off for tag, off, _ in external_sizes}

    tile_offsets = []
    cursor = data_start
    for p in payloads:
        tile_offsets.append(cursor)
        cursor += len(p)
    tags = [
        (tag, typ, tile_offsets if tag == TAG_TILE_OFFSETS else values)
        for tag, typ, values in tags
    ]

    out = bytearray()
    if variant == "classic":
        out += struct.pack("<2sHI", b"II", CLASSIC_MAGIC, ifd_off)
        out += struct.pack("<H", len(tags))
    else:
        out += struct.pack("<2sHHHQ", b"II", BIGTIFF_MAGIC, 8, 0, ifd_off)
        out += struct.pack("<Q", len(tags))
    external = bytearray()
    for tag, typ, values in tags:
        size = TYPE_SIZES[typ] * len(values)
        packed = struct.pack("<" + str(len(values)) + TYPE_FORMATS[typ], *values)
        out += struct.pack("<HH" + count_fmt, tag, typ, len(values))
        if size <= inline_cap:
            out += packed.ljust(inline_cap, b"\0")
        else:
            off = external_pos[tag]
            while external_off + len(external) < off:
                external += b"\0"
            external += packed
            out += struct.pack("<" + off_fmt, off)
    out += struct.pack("<" + off_fmt, 0)  # no further IFDs
    out += external
    while len(out) < data_start:
        out += b"\0"
    for p in payloads:
        out += p
    return bytes(out)


def read_full(desc: CogDescriptor, source) -> np.ndarray:
    """Decode the whole raster (tile by tile, edge tiles cropped)."""
    img = np.empty((desc.height, desc.width, desc.bands), dtype=np.uint16)
    for ty in range(desc.tiles_y):
        for tx in range(desc.tiles_x):
            off, cnt = tile_byte_extent(desc, tx, ty)
            tile = decode_tile(desc, source.get_range(off, cnt))
            y0, x0 = ty * desc.tile_height, tx * desc.tile_width
            h = min(desc.tile_height, desc.height - y0)
            w = min(desc.tile_width, desc.width - x0)
            img[y0:y0 + h, x0:x0 + w] = tile[:h, :w]
    return img


def transcode(source, schemes: Mapping[str, CompressionScheme], out_dir,
              stem: str = "scene") -> "dict[str, Path]":
    """Re-encode one COG into one file per scheme, identical pixels and
    tiling geometry. Parse/decode errors propagate before any file is
    written, so there are never partial outputs."""
    out_dir = Path(out_dir)
    desc = parse_cog(source)
    pixels = read_full(desc, source)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for key, scheme in schemes.items():
        data = write_cog(pixels, scheme, tile=desc.tile_width)
        path = out_dir / f"{stem}_{key}.tif"
        path.write_bytes(data)
        written[key] = path
    return written


def iter_tiles(desc: CogDescriptor) -> Iterator[Tuple[int, int]]:
    """All tile coordinates, row-major."""
    for ty in range(desc.tiles_y):
        for tx in range(desc.tiles_x):
            yield tx, ty

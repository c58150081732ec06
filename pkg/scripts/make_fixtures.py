#!/usr/bin/env python3
"""Regenerate the interop fixtures committed under tests/data/.

The fixtures are written by mainstream TIFF tooling (tifffile and
Pillow/libtiff), never by this package, so the tests that read them pin
byte-level compatibility with the wider ecosystem. Pixel content is
deterministic; tests rebuild the same arrays from the seeds below.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "tests" / "data"


def multiband_array() -> np.ndarray:
    rng = np.random.default_rng(42)
    smooth = rng.integers(0, 2000, (96, 80, 3)).astype(np.uint16)
    return (smooth + np.arange(80, dtype=np.uint16)[None, :, None] * 11)


def singleband_array() -> np.ndarray:
    rng = np.random.default_rng(7)
    base = rng.integers(0, 500, (128, 144)).astype(np.uint16)
    base[::5] = 77  # repeated rows so LZW builds long strings
    return base


def main() -> None:
    import tifffile
    from PIL import Image

    OUT.mkdir(parents=True, exist_ok=True)
    multi = multiband_array()
    single = singleband_array()

    common = dict(photometric="minisblack", planarconfig="contig")
    tifffile.imwrite(OUT / "tiled_none_le.tif", multi, tile=(32, 32), **common)
    tifffile.imwrite(OUT / "tiled_deflate_le.tif", multi, tile=(32, 32),
                     compression="zlib", **common)
    tifffile.imwrite(OUT / "tiled_deflate_pred_le.tif", multi, tile=(32, 32),
                     compression="zlib", predictor=True, **common)
    tifffile.imwrite(OUT / "tiled_deflate_be.tif", multi, tile=(32, 32),
                     compression="zlib", byteorder=">", **common)
    tifffile.imwrite(OUT / "tiled_deflate_bigtiff.tif", multi, tile=(32, 32),
                     compression="zlib", bigtiff=True, **common)
    tifffile.imwrite(OUT / "striped_deflate.tif", multi, compression="zlib",
                     rowsperstrip=16, **common)

    im = Image.fromarray(single)
    im.save(OUT / "striped_lzw_libtiff.tif", compression="tiff_lzw")
    im.save(OUT / "striped_zstd_libtiff.tif", compression="zstd")
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()

"""Window sampling over tiled rasters: random and block-aligned policies,
plus exact tile-intersection geometry.

A block-aligned window with p <= k lies wholly inside one tile and is
served by a single block read; a random window of tile size can touch up
to four tiles, quadrupling transfer for the same pixels.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .cog import CogDescriptor
from .errors import PatchTooLarge, WindowOutOfBounds

PATCH_SIZES = (128, 256, 512, 1024)


@dataclass(frozen=True)
class WindowSpec:
    """A requested pixel window (always square for benchmark patches)."""

    col_off: int
    row_off: int
    width: int
    height: int


@dataclass(frozen=True)
class SamplerPolicy:
    blocked: bool
    patch_size: int
    seed: int = 0

    def __post_init__(self):
        if self.patch_size not in PATCH_SIZES:
            raise PatchTooLarge(
                f"patch_size must be one of {PATCH_SIZES}, got {self.patch_size}"
            )


def tiles_for_window(desc: CogDescriptor, w: WindowSpec) -> List[Tuple[int, int]]:
    """Exactly the tiles whose pixel extents intersect w, row-major."""
    if (w.col_off < 0 or w.row_off < 0 or w.width <= 0 or w.height <= 0
            or w.col_off + w.width > desc.width
            or w.row_off + w.height > desc.height):
        raise WindowOutOfBounds(
            f"window {w} outside {desc.width}x{desc.height} image"
        )
    tx0 = w.col_off // desc.tile_width
    tx1 = (w.col_off + w.width - 1) // desc.tile_width
    ty0 = w.row_off // desc.tile_height
    ty1 = (w.row_off + w.height - 1) // desc.tile_height
    return [(tx, ty) for ty in range(ty0, ty1 + 1) for tx in range(tx0, tx1 + 1)]


def _check_fits(desc: CogDescriptor, p: int) -> None:
    if p > desc.width or p > desc.height:
        raise PatchTooLarge(
            f"patch {p} exceeds image {desc.width}x{desc.height}"
        )


def sample_random(desc: CogDescriptor, policy: SamplerPolicy,
                  rng: np.random.Generator) -> WindowSpec:
    """Offsets uniform over all in-bounds positions."""
    p = policy.patch_size
    _check_fits(desc, p)
    col = int(rng.integers(0, desc.width - p + 1))
    row = int(rng.integers(0, desc.height - p + 1))
    return WindowSpec(col, row, p, p)


def sample_blocked(desc: CogDescriptor, policy: SamplerPolicy,
                   rng: np.random.Generator) -> WindowSpec:
    """Pick a random tile; jitter the window inside it when p <= k,
    otherwise start at the tile origin (clamped to stay in bounds).

    Edge tiles whose clipped extent cannot hold the window are excluded
    from selection, which keeps the one-tile invariant exact for p <= k.
    """
    p = policy.patch_size
    _check_fits(desc, p)
    kx, ky = desc.tile_width, desc.tile_height

    if p <= kx and p <= ky:
        eligible_x = desc.width // kx + (1 if desc.width % kx >= p else 0)
        eligible_y = desc.height // ky + (1 if desc.height % ky >= p else 0)
        tx = int(rng.integers(0, eligible_x))
        ty = int(rng.integers(0, eligible_y))
        clip_w = min(kx, desc.width - tx * kx)
        clip_h = min(ky, desc.height - ty * ky)
        col = tx * kx + int(rng.integers(0, clip_w - p + 1))
        row = ty * ky + int(rng.integers(0, clip_h - p + 1))
    else:
        tx = int(rng.integers(0, desc.tiles_x))
        ty = int(rng.integers(0, desc.tiles_y))
        col = min(tx * kx, desc.width - p)
        row = min(ty * ky, desc.height - p)
    return WindowSpec(col, row, p, p)


def sample_window(desc: CogDescriptor, policy: SamplerPolicy,
                  rng: np.random.Generator) -> WindowSpec:
    if policy.blocked:
        return sample_blocked(desc, policy, rng)
    return sample_random(desc, policy, rng)


def window_stream(desc: CogDescriptor, policy: SamplerPolicy, n: int):
    """n windows from a generator seeded with the policy seed."""
    rng = np.random.default_rng(policy.seed)
    return [sample_window(desc, policy, rng) for _ in range(n)]


def mean_tiles_per_window(desc: CogDescriptor, policy: SamplerPolicy,
                          n_samples: int, rng: np.random.Generator) -> float:
    """Empirical mean of |tiles_for_window| over n draws."""
    if n_samples <= 0:
        raise ValueError("n_samples must be > 0")
    total = 0
    for _ in range(n_samples):
        total += len(tiles_for_window(desc, sample_window(desc, policy, rng)))
    return total / n_samples

"""Synthetic multispectral scene generation.

Desk-scale stand-in for downloaded satellite scenes: deterministic per
seed, with a smoothness knob that controls spatial correlation (and hence
how well the compression variants do). smoothness=0 is full-range white
noise (essentially incompressible), smoothness=1 is a constant field.
"""

import numpy as np
from scipy import ndimage

CENTER = 32768  # mid-range of uint16
MAX_SIGMA = 24.0


def generate_synthetic_scene(width: int, height: int, bands: int, seed: int,
                             smoothness: float = 0.8) -> np.ndarray:
    """Generate a (height, width, bands) uint16 scene.

    Deterministic for a fixed seed. Spatial correlation grows with
    ``smoothness`` while dynamic range shrinks, so compression ratios
    vary meaningfully across the knob's range.
    """
    if width <= 0 or height <= 0 or bands <= 0:
        raise ValueError(f"bad scene dimensions {width}x{height}x{bands}")
    if not 0.0 <= smoothness <= 1.0:
        raise ValueError(f"smoothness must be in [0, 1], got {smoothness}")
    rng = np.random.default_rng(seed)
    half_range = (1.0 - smoothness) * (CENTER - 1)
    out = np.empty((height, width, bands), dtype=np.uint16)
    sigma = smoothness * MAX_SIGMA
    for b in range(bands):
        noise = rng.standard_normal((height, width), dtype=np.float32)
        if sigma > 0:
            noise = ndimage.gaussian_filter(noise, sigma=sigma)
        std = float(np.std(noise))
        if std > 0:
            noise /= 3.0 * std
            np.clip(noise, -1.0, 1.0, out=noise)
        band = np.rint(CENTER + half_range * noise)
        out[:, :, b] = band.astype(np.uint16)
    return out

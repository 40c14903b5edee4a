"""Deterministic synthetic scenes and kernels for demos and self-tests.

Everything here is seeded; the same arguments always produce the same
pixels, which keeps corpus generation and the test suite reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .imagecore import Image, Kernel, convolve_direct

_BLUR3 = Kernel(np.full((3, 3), 1.0 / 9.0))


def textured_scene(side: int = 256, seed: int = 0, blobs: int = 40) -> Image:
    """Disks and rectangles at random intensities: edges at every orientation."""
    if side < 8:
        raise ValidationError(f"side must be at least 8, got {side}")
    rng = np.random.default_rng(seed)
    img = np.full((side, side), 0.5)
    rows, cols = np.mgrid[0:side, 0:side]
    for _ in range(blobs):
        intensity = rng.uniform(0.05, 0.95)
        cy, cx = rng.uniform(0, side, 2)
        radius = rng.uniform(side / 16, side / 5)
        if rng.uniform() < 0.5:
            mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2
        else:
            h = rng.uniform(side / 16, side / 4)
            w = rng.uniform(side / 16, side / 4)
            mask = (np.abs(rows - cy) <= h / 2) & (np.abs(cols - cx) <= w / 2)
        img[mask] = intensity
    grain = rng.uniform(-1.0, 1.0, (side, side))
    grain = convolve_direct(Image(np.clip(grain * 0.5 + 0.5, 0, 1)), _BLUR3).pixels
    img = img + 0.06 * (grain - grain.mean())
    return Image(np.clip(img, 0.0, 1.0))


def stripe_texture(side: int, period: int = 2, low: float = 0.0, high: float = 1.0,
                   horizontal: bool = False) -> Image:
    """Square-wave stripes; fine periods give edges closer than a blur kernel."""
    if period < 2:
        raise ValidationError(f"period must be at least 2, got {period}")
    axis = np.arange(side)
    wave = np.where((axis % period) < period / 2, high, low)
    img = np.tile(wave[:, None], (1, side)) if horizontal else np.tile(wave[None, :], (side, 1))
    return Image(img.astype(np.float64))


def flat_patch(side: int, value: float = 0.5) -> Image:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"value must lie in [0, 1], got {value!r}")
    return Image(np.full((side, side), float(value)))


def smooth_ramp(side: int, low: float = 0.35, high: float = 0.65) -> Image:
    """Gentle diagonal gradient: finite everywhere, no usable edges."""
    axis = np.linspace(0.0, 1.0, side)
    ramp = (axis[:, None] + axis[None, :]) / 2.0
    return Image(low + (high - low) * ramp)


def eval_scene(side: int = 160, seed: int = 0, stripe_period: int = 2) -> Image:
    """Quadrant test scene: texture, fine stripes, flat, and a soft ramp."""
    if side % 2:
        raise ValidationError(f"side must be even, got {side}")
    half = side // 2
    img = np.empty((side, side))
    img[:half, :half] = textured_scene(half, seed=seed, blobs=24).pixels
    img[:half, half:] = stripe_texture(half, period=stripe_period).pixels
    img[half:, :half] = flat_patch(half, 0.4).pixels
    img[half:, half:] = smooth_ramp(half).pixels
    return Image(img)


def random_motion_kernel(side: int = 13, seed: int = 0, steps: int | None = None) -> Kernel:
    """Camera-shake style kernel from a smoothed random walk."""
    if side < 3 or side % 2 == 0:
        raise ValidationError(f"kernel side must be odd and >= 3, got {side}")
    rng = np.random.default_rng(seed)
    if steps is None:
        steps = 6 * side
    grid = np.zeros((side, side))
    pos = np.array([side / 2.0, side / 2.0])
    vel = rng.normal(0.0, 0.4, 2)
    for _ in range(steps):
        vel = 0.85 * vel + rng.normal(0.0, 0.25, 2)
        pos = np.clip(pos + vel, 0.0, side - 1.001)
        r0, c0 = int(pos[0]), int(pos[1])
        fr, fc = pos[0] - r0, pos[1] - c0
        grid[r0, c0] += (1 - fr) * (1 - fc)
        if c0 + 1 < side:
            grid[r0, c0 + 1] += (1 - fr) * fc
        if r0 + 1 < side:
            grid[r0 + 1, c0] += fr * (1 - fc)
        if r0 + 1 < side and c0 + 1 < side:
            grid[r0 + 1, c0 + 1] += fr * fc
    blurred = np.array(convolve_direct(Image(grid / max(grid.max(), 1e-12)), _BLUR3).pixels)
    blurred[blurred < 0] = 0.0
    total = blurred.sum()
    if total <= 0:
        blurred[side // 2, side // 2] = 1.0
        total = 1.0
    return Kernel(blurred / total)


def gaussian_kernel(side: int, sigma: float) -> Kernel:
    """Isotropic Gaussian truncated to an odd square and renormalized."""
    if side < 1 or side % 2 == 0:
        raise ValidationError(f"kernel side must be odd, got {side}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma!r}")
    half = side // 2
    axis = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-axis ** 2 / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return Kernel(k / k.sum())


def linear_motion_kernel(side: int, angle_deg: float, length: float | None = None) -> Kernel:
    """Straight motion streak through the kernel center."""
    if side < 3 or side % 2 == 0:
        raise ValidationError(f"kernel side must be odd and >= 3, got {side}")
    if length is None:
        length = side * 0.8
    if length <= 0:
        raise ValidationError(f"length must be positive, got {length!r}")
    theta = np.deg2rad(angle_deg)
    direction = np.array([np.sin(theta), np.cos(theta)])
    grid = np.zeros((side, side))
    center = (side - 1) / 2.0
    n = max(int(length * 4), 2)
    for i in range(n):
        t = (i / (n - 1) - 0.5) * length
        r = center + t * direction[0]
        c = center + t * direction[1]
        if not (0 <= r <= side - 1 and 0 <= c <= side - 1):
            continue
        r0, c0 = int(min(r, side - 1.001)), int(min(c, side - 1.001))
        fr, fc = r - r0, c - c0
        grid[r0, c0] += (1 - fr) * (1 - fc)
        if c0 + 1 < side:
            grid[r0, c0 + 1] += (1 - fr) * fc
        if r0 + 1 < side:
            grid[r0 + 1, c0] += fr * (1 - fc)
        if r0 + 1 < side and c0 + 1 < side:
            grid[r0 + 1, c0 + 1] += fr * fc
    total = grid.sum()
    if total <= 0:
        grid[side // 2, side // 2] = 1.0
        total = 1.0
    return Kernel(grid / total)

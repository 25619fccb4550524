"""Random-ellipse phantoms (Shepp-Logan-like piecewise-constant images)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class PhantomConfig:
    size: int = 64
    n_ellipses: tuple[int, int] = (3, 8)  # inclusive range, first is a body ellipse
    intensity_range: tuple[float, float] = (-0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_ellipses
        if lo < 0 or hi < lo:
            raise ConfigError("n_ellipses range must satisfy 0 <= lo <= hi")


def _ellipse_mask(xx, yy, cx, cy, a, b, phi):
    dx = xx - cx
    dy = yy - cy
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def gen_phantom(cfg: PhantomConfig, index: int):
    """Deterministic phantom #index: sum of posed ellipses, clamped to [0, 1],
    zero outside the inscribed circle (CT field-of-view convention)."""
    rng = np.random.default_rng([cfg.seed, index])
    n = cfg.size
    c = 0.5 * (n - 1)
    xx, yy = np.meshgrid((np.arange(n) - c) / c, (np.arange(n) - c) / c)
    img = np.zeros((n, n))

    lo, hi = cfg.n_ellipses
    k = int(rng.integers(lo, hi + 1))
    ilo, ihi = cfg.intensity_range
    for e in range(k):
        if e == 0:
            # large body ellipse so phantoms resemble attenuation maps
            cx, cy = rng.uniform(-0.15, 0.15, 2)
            a, b = rng.uniform(0.5, 0.85, 2)
            val = rng.uniform(0.3, 0.7)
        else:
            cx, cy = rng.uniform(-0.6, 0.6, 2)
            a, b = rng.uniform(0.05, 0.35, 2)
            val = rng.uniform(ilo, ihi)
        phi = rng.uniform(0.0, np.pi)
        img[_ellipse_mask(xx, yy, cx, cy, a, b, phi)] += val

    img = np.clip(img, 0.0, 1.0)
    img[xx ** 2 + yy ** 2 > 1.0] = 0.0
    return img

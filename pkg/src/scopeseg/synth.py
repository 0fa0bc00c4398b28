"""Seeded synthetic tubular-structure images standing in for fundus data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOREGROUND_INTENSITY = 0.8


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    height: int = 64
    width: int = 64
    n_branches: int = 3
    radius_range: tuple[float, float] = (1.0, 1.0)
    noise_sigma: float = 0.45

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.height < 16 or self.width < 16:
            raise ValueError("height and width must be at least 16")
        if self.n_branches < 1:
            raise ValueError("n_branches must be at least 1")
        lo, hi = self.radius_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad radius_range {self.radius_range}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def _bezier(p0, p1, p2, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def _stamp(mask: np.ndarray, points: np.ndarray, radius: float) -> None:
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = radius * radius
    for y, x in points:
        y0, y1 = max(int(y - radius) - 1, 0), min(int(y + radius) + 2, h)
        x0, x1 = max(int(x - radius) - 1, 0), min(int(x + radius) + 2, w)
        sub = (yy[y0:y1, x0:x1] - y) ** 2 + (xx[y0:y1, x0:x1] - x) ** 2 <= r2
        mask[y0:y1, x0:x1] |= sub


def _branch(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Control points of one quadratic Bezier, start and end on different edges.

    All control points lie inside the canvas, so the curve (inside their
    convex hull) can never leave it and clipping never splits a branch.
    """
    lim = np.array([h - 1, w - 1], dtype=np.float64)
    while True:
        side_a, side_b = rng.choice(4, size=2, replace=False)
        ends = []
        for side in (side_a, side_b):
            u = rng.uniform(0.1, 0.9)
            ends.append(
                {
                    0: (0.0, u * lim[1]),
                    1: (lim[0], u * lim[1]),
                    2: (u * lim[0], 0.0),
                    3: (u * lim[0], lim[1]),
                }[int(side)]
            )
        p0, p2 = np.array(ends[0]), np.array(ends[1])
        p1 = rng.uniform(0.15, 0.85, size=2) * lim
        if np.hypot(*(p2 - p0)) >= 0.25 * min(h, w):
            return np.stack([p0, p1, p2])


def synth_vessels(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image, mask)`` for one synthetic vessel tree.

    The first branch crosses the canvas; later branches start on a point of
    the existing tree so the foreground forms a single 8-connected tree.
    """
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    mask = np.zeros((h, w), dtype=bool)
    lo, hi = cfg.radius_range
    tree = None
    for b in range(cfg.n_branches):
        ctrl = _branch(rng, h, w)
        if tree is not None:
            ctrl[0] = tree[rng.integers(len(tree))]
        length = sum(np.hypot(*(ctrl[i + 1] - ctrl[i])) for i in range(2))
        pts = _bezier(ctrl[0], ctrl[1], ctrl[2], max(int(4 * length), 8))
        # trunk is the thickest branch
        radius = hi if b == 0 else rng.uniform(lo, hi)
        _stamp(mask, pts, radius)
        tree = pts if tree is None else np.concatenate([tree, pts])

    image = mask * FOREGROUND_INTENSITY
    if cfg.noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.noise_sigma, size=(h, w))
    image = np.clip(image, 0.0, 1.0)
    return image, mask.astype(np.uint8)

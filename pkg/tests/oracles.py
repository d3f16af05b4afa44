"""Independent reference implementations used by several test modules."""
import numpy as np


def ray_square_radius(region, centroid, alpha):
    """Farthest exit distance of the ray from ``centroid`` in direction ``alpha``
    through any foreground pixel square (pixel k covers [k-0.5, k+0.5)).

    Exhaustive over pixels, analytic slab intersection, no marching.
    """
    cy, cx = centroid
    dy, dx = np.sin(alpha), np.cos(alpha)
    best = 0.0
    for r, c in zip(*np.nonzero(region)):
        t_lo, t_hi = 0.0, np.inf
        for p0, d, lo in ((cy, dy, r - 0.5), (cx, dx, c - 0.5)):
            hi = lo + 1.0
            if abs(d) < 1e-12:
                if not lo <= p0 < hi:
                    t_hi = -1.0
                continue
            a, b = (lo - p0) / d, (hi - p0) / d
            t_lo, t_hi = max(t_lo, min(a, b)), min(t_hi, max(a, b))
        if t_hi > t_lo:
            best = max(best, t_hi)
    return best


def random_blob(seed, size=64):
    """Union of 2-5 overlapping ellipses around the image centre."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    region = np.zeros((size, size), bool)
    for _ in range(rng.integers(2, 6)):
        cy, cx = size / 2 + rng.uniform(-size / 10, size / 10, 2)
        ry, rx = rng.uniform(size / 10, size / 4, 2)
        region |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
    return region


def disc(size, radius, center=None):
    cy, cx = center if center is not None else ((size - 1) / 2, (size - 1) / 2)
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2

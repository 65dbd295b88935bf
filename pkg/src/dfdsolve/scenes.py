"""Synthetic scenes for tests, examples and benchmarks."""
import numpy as np

from .fields import DepthMap, Image


def _smooth(a, passes):
    for _ in range(passes):
        p = np.pad(a, [(1, 1), (1, 1)] + [(0, 0)] * (a.ndim - 2), mode="edge")
        a = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] + 4 * p[1:-1, 1:-1]) / 8.0
    return a


def textured_image(shape, seed=0, channels=3, lo=0.1, hi=0.9, smoothing=1):
    """Seeded random texture in ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    h, w = shape
    a = rng.random((h, w, channels) if channels > 1 else (h, w))
    a = _smooth(a, smoothing)
    a = (a - a.min()) / max(a.max() - a.min(), 1e-12)
    return Image(lo + (hi - lo) * a)


def checkerboard(shape, square=4, lo=0.0, hi=1.0):
    h, w = shape
    y, x = np.indices((h, w))
    return Image(np.where(((y // square) + (x // square)) % 2 == 0, hi, lo).astype(np.float64))


def two_plane_depth(shape, near=1.2, far=3.0, depth_range=None):
    """Left half at ``near``, right half at ``far``."""
    h, w = shape
    d = np.full((h, w), float(far))
    d[:, : w // 2] = near
    return DepthMap(d, depth_range)


def textured_mask(img, threshold=0.01, window=3):
    """Pixels whose local intensity standard deviation exceeds ``threshold``."""
    a = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=2)
    r = window // 2
    p = np.pad(a, r, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(p, (window, window))
    return win.std(axis=(-1, -2)) > threshold

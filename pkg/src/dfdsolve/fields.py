"""Dense per-pixel fields (images, depth, defocus, focal stacks) and the
finite-difference operators shared by the renderer and the losses.

Arrays are row-major ``(H, W)`` for single-channel data and ``(H, W, C)``
for colour images. Field objects hold read-only float64 copies; operators
accept either a field or a bare ndarray.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def as_array(x):
    """Underlying ndarray of a field, or ``x`` itself as float64."""
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.flags.writeable = False
    return a


class _Field:
    __slots__ = ("data",)

    def __init__(self, data):
        self.data = _frozen(as_array(data))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.data.shape})"


class Image(_Field):
    """Intensities in [0, 1]; ``(H, W)`` or ``(H, W, 3)``."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data)
        d = self.data
        if d.ndim == 3 and d.shape[2] == 1:
            self.data = d[:, :, 0]
        elif not (d.ndim == 2 or (d.ndim == 3 and d.shape[2] == 3)):
            raise ShapeError(f"image must be (H, W) or (H, W, 3), got {d.shape}")

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else self.data.shape[2]


class DepthMap(_Field):
    """Depth in meters. ``depth_range`` (optional) is checked by :func:`validate`."""

    __slots__ = ("depth_range",)

    def __init__(self, data, depth_range=None):
        super().__init__(data)
        if self.data.ndim != 2:
            raise ShapeError(f"depth map must be 2-D, got {self.data.shape}")
        self.depth_range = None if depth_range is None else tuple(float(v) for v in depth_range)


class DefocusMap(_Field):
    """Gaussian blur radius in pixels."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data)
        if self.data.ndim != 2:
            raise ShapeError(f"defocus map must be 2-D, got {self.data.shape}")


class FocalStack:
    """K images of one scene with their focus distances (meters)."""

    __slots__ = ("data", "focus_distances")

    def __init__(self, images, focus_distances):
        arrs = [as_array(im) for im in images]
        if len(arrs) < 2:
            raise ShapeError(f"a focal stack needs at least 2 images, got {len(arrs)}")
        shapes = {a.shape for a in arrs}
        if len(shapes) != 1:
            raise ShapeError(f"focal stack images differ in shape: {sorted(shapes)}")
        fds = tuple(float(f) for f in focus_distances)
        if len(fds) != len(arrs):
            raise ShapeError(f"{len(arrs)} images but {len(fds)} focus distances")
        if any(b <= a for a, b in zip(fds, fds[1:])):
            raise ShapeError(f"focus distances must be strictly increasing, got {list(fds)}")
        for a in arrs:
            Image(a)  # shape check
        self.data = _frozen(np.stack(arrs))
        self.focus_distances = fds

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, k):
        return Image(self.data[k])

    @property
    def images(self):
        return [Image(a) for a in self.data]

    @property
    def image_shape(self):
        return self.data.shape[1:]

    def __repr__(self):
        return f"FocalStack(K={len(self)}, shape={self.image_shape}, F={list(self.focus_distances)})"


@dataclass(frozen=True)
class Violation:
    message: str
    pixel: tuple | None = None

    def __str__(self):
        return self.message if self.pixel is None else f"{self.message} at pixel {self.pixel}"


def _first(mask):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if len(idx) else None


def validate(obj, cam=None):
    """Check a field's invariants. Returns ``None`` when valid, else the first
    :class:`Violation` (with pixel coordinates where applicable)."""
    if isinstance(obj, FocalStack):
        for k, im in enumerate(obj.data):
            v = validate(Image(im))
            if v is not None:
                return Violation(f"slice {k}: {v.message}", v.pixel)
        if cam is not None and tuple(cam.focus_distances) != obj.focus_distances:
            return Violation(f"focus distances {list(obj.focus_distances)} do not match camera "
                             f"schedule {list(cam.focus_distances)}")
        return None

    d = as_array(obj)
    bad = _first(~np.isfinite(d))
    if bad is not None:
        return Violation(f"non-finite value {d[bad]}", bad)

    if isinstance(obj, Image):
        bad = _first((d < 0) | (d > 1))
        if bad is not None:
            return Violation(f"intensity {d[bad]} outside [0, 1]", bad)
    elif isinstance(obj, DepthMap):
        rng = cam.depth_range if cam is not None else obj.depth_range
        if rng is not None:
            lo, hi = rng
            bad = _first((d < lo) | (d > hi))
            if bad is not None:
                return Violation(f"depth {d[bad]} m outside range [{lo}, {hi}]", bad)
        else:
            bad = _first(d <= 0)
            if bad is not None:
                return Violation(f"depth {d[bad]} m is not positive", bad)
    elif isinstance(obj, DefocusMap):
        bad = _first(d < 0)
        if bad is not None:
            return Violation(f"negative defocus {d[bad]}", bad)
    return None


def spatial_gradients(field):
    """Forward differences ``(dx, dy)``; last column of dx and last row of dy are 0."""
    a = as_array(field)
    if a.ndim < 2 or a.shape[0] < 2 or a.shape[1] < 2:
        raise ShapeError(f"spatial gradients need at least 2x2, got {a.shape}")
    dx = np.zeros_like(a)
    dy = np.zeros_like(a)
    dx[:, :-1] = a[:, 1:] - a[:, :-1]
    dy[:-1] = a[1:] - a[:-1]
    return dx, dy


def spatial_gradients_adjoint(gx, gy):
    """Transpose of :func:`spatial_gradients` applied to ``(gx, gy)``."""
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    out = np.zeros_like(gx)
    out[:, 1:] += gx[:, :-1]
    out[:, :-1] -= gx[:, :-1]
    out[1:] += gy[:-1]
    out[:-1] -= gy[:-1]
    return out


def _laplacian_plane(p):
    q = np.pad(p, 1, mode="edge")
    return (p - q[:-2, 1:-1]) + (p - q[2:, 1:-1]) + (p - q[1:-1, :-2]) + (p - q[1:-1, 2:])


def _laplacian_plane_adjoint(g):
    # scatter into the padded grid, then fold the replicated border back
    h, w = g.shape
    q = np.zeros((h + 2, w + 2))
    q[:-2, 1:-1] -= g
    q[2:, 1:-1] -= g
    q[1:-1, :-2] -= g
    q[1:-1, 2:] -= g
    q[1, :] += q[0, :]
    q[-2, :] += q[-1, :]
    q[:, 1] += q[:, 0]
    q[:, -2] += q[:, -1]
    return 4.0 * g + q[1:-1, 1:-1]


def _check_lap_shape(a):
    if a.ndim < 2 or a.shape[0] < 3 or a.shape[1] < 3:
        raise ShapeError(f"laplacian needs at least 3x3, got {a.shape}")


def laplacian(img):
    """3x3 Laplacian (centre 4, cross -1) of the channel-mean plane, edge-replicated."""
    a = as_array(img)
    _check_lap_shape(a)
    plane = a.mean(axis=2) if a.ndim == 3 else a
    return _laplacian_plane(plane)


def laplacian_channels(img):
    """Per-channel Laplacian; output has the input's shape."""
    a = as_array(img)
    _check_lap_shape(a)
    if a.ndim == 2:
        return _laplacian_plane(a)
    return np.stack([_laplacian_plane(a[..., c]) for c in range(a.shape[2])], axis=-1)


def laplacian_channels_adjoint(g):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 2:
        return _laplacian_plane_adjoint(g)
    return np.stack([_laplacian_plane_adjoint(g[..., c]) for c in range(g.shape[2])], axis=-1)

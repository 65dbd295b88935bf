"""Defocus rendering: per-pixel Gaussian PSF convolution and its derivatives.

``render_defocus`` is linear in the all-in-focus image, so the gradient with
respect to the image is the operator transpose (``adjoint_aif``). The
gradient with respect to the blur map is local: each output pixel depends
only on its own sigma (``grad_sigma``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._accel import BACKEND
from .errors import DomainError, ShapeError
from .fields import DefocusMap, FocalStack, Image, as_array
from .optics import defocus_map

_render, _adjoint, _grad_sigma = _kernels.IMPLS[BACKEND]


@dataclass(frozen=True)
class PsfConfig:
    window: int = 7
    clear_sigma_threshold: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not self.clear_sigma_threshold >= 0:
            raise ValueError(f"clear_sigma_threshold must be >= 0, got {self.clear_sigma_threshold}")

    @property
    def radius(self):
        return self.window // 2


DEFAULT_PSF = PsfConfig()


def gaussian_kernel(sigma, window=7, clear_sigma_threshold=1.0):
    """``window x window`` weights for blur radius ``sigma``, summing to 1.

    Below ``clear_sigma_threshold`` the kernel is the identity.
    """
    if sigma < 0 or not np.isfinite(sigma):
        raise DomainError(f"sigma must be finite and >= 0, got {sigma}")
    cfg = PsfConfig(window, clear_sigma_threshold)
    w1 = _kernels.weights1d_numpy(np.array([[float(sigma)]]), cfg.radius, cfg.clear_sigma_threshold)[0, 0]
    return np.outer(w1, w1)


def _as_hwc(img):
    a = as_array(img)
    if a.ndim == 2:
        return np.ascontiguousarray(a[..., None]), True
    return np.ascontiguousarray(a), False


def _sigma_array(sigma_map, shape):
    s = np.ascontiguousarray(as_array(sigma_map))
    if s.shape != tuple(shape[:2]):
        raise ShapeError(f"sigma map {s.shape} does not match image {tuple(shape[:2])}")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("sigma map must be finite and non-negative")
    return s


def render_array(aif, sigma, cfg=DEFAULT_PSF):
    """Array-in/array-out form of :func:`render_defocus`."""
    a, flat = _as_hwc(aif)
    s = _sigma_array(sigma, a.shape)
    out = _render(a, s, cfg.radius, float(cfg.clear_sigma_threshold))
    return out[..., 0] if flat else out


def render_defocus(aif, sigma_map, cfg=DEFAULT_PSF):
    """Blur ``aif`` with a per-pixel Gaussian whose radius is ``sigma_map``."""
    return Image(render_array(aif, sigma_map, cfg))


def render_stack(aif, depth, cam, cfg=DEFAULT_PSF):
    """Focal stack of ``aif`` seen at each of ``cam``'s focus distances."""
    a = as_array(aif)
    d = as_array(depth)
    if d.shape != a.shape[:2]:
        raise ShapeError(f"depth {d.shape} does not match image {a.shape[:2]}")
    slices = [render_array(a, defocus_map(d, cam, k), cfg) for k in range(cam.num_focus)]
    return FocalStack(slices, cam.focus_distances)


def adjoint_aif(sigma_map, grad_out, cfg=DEFAULT_PSF):
    """Transpose of the blur operator applied to ``grad_out``."""
    g, flat = _as_hwc(grad_out)
    s = _sigma_array(sigma_map, g.shape)
    out = _adjoint(g, s, cfg.radius, float(cfg.clear_sigma_threshold))
    return out[..., 0] if flat else out


def grad_sigma(aif, sigma_map, grad_out, cfg=DEFAULT_PSF):
    """Per-pixel derivative of ``<grad_out, render(aif, sigma)>`` w.r.t. sigma.

    Zero wherever sigma is below the clear-pixel threshold.
    """
    a, _ = _as_hwc(aif)
    g, _ = _as_hwc(grad_out)
    if g.shape != a.shape:
        raise ShapeError(f"grad_out {g.shape} does not match image {a.shape}")
    s = _sigma_array(sigma_map, a.shape)
    return _grad_sigma(a, s, g, cfg.radius, float(cfg.clear_sigma_threshold))


__all__ = [
    "PsfConfig", "DEFAULT_PSF", "gaussian_kernel", "render_array", "render_defocus",
    "render_stack", "adjoint_aif", "grad_sigma", "DefocusMap",
]

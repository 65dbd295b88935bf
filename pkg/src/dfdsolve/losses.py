"""Self-supervised objective: focal-stack reconstruction, sharpness prior on
the all-in-focus image, coarse all-in-focus fusion and edge-aware depth
smoothness. Every term returns its value together with its analytic gradient.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields as dc_fields
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError
from .fields import (FocalStack, Image, as_array, laplacian_channels,
                     laplacian_channels_adjoint, spatial_gradients,
                     spatial_gradients_adjoint)
from .optics import coc_sigma, dsigma_ddepth
from .psf import DEFAULT_PSF, adjoint_aif, grad_sigma, render_array

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
BLUR_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    blur_beta: float = 0.01
    edge_beta: float = 2.5
    lambda_smooth: float = 0.5
    recon_scale: float = 100.0
    coarse_blur_scale: float = 10.0
    # multiplier on the predicted-AIF blur term; 1 in the published objective
    pred_blur_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        for f in dc_fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{f.name} must be finite and >= 0, got {v}")

    @classmethod
    def reconstruction_only(cls, alpha=0.85):
        return cls(alpha=alpha, recon_scale=1.0, coarse_blur_scale=0.0,
                   lambda_smooth=0.0, pred_blur_scale=0.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dc_fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"loss weights have unknown keys: {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in d.items()})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad loss weight value: {exc}") from exc


@dataclass(frozen=True)
class LossReport:
    total: float
    recon: float
    blur_predicted: float
    blur_coarse: float
    smooth: float
    weights: LossWeights = LossWeights()

    def recombine(self):
        w = self.weights
        return (w.recon_scale * self.recon + w.pred_blur_scale * self.blur_predicted
                + w.coarse_blur_scale * self.blur_coarse + w.lambda_smooth * self.smooth)

    def row(self, iteration):
        return (iteration, self.total, self.recon, self.blur_predicted, self.blur_coarse, self.smooth)


CSV_COLUMNS = ("iteration", "total", "recon", "blur_pred", "blur_coarse", "smooth")


# ------------------------------------------------------------------ SSIM

@lru_cache(maxsize=32)
def _ssim_filter(n):
    # row-normalised truncated Gaussian as an n x n matrix; zero outside the image
    r = SSIM_WINDOW // 2
    i = np.arange(n)
    off = i[None, :] - i[:, None]
    k = np.where(np.abs(off) <= r, np.exp(-(off.astype(np.float64) ** 2) / (2 * SSIM_SIGMA ** 2)), 0.0)
    k /= k.sum(axis=1, keepdims=True)
    k.flags.writeable = False
    return k


def _filt(x, ah, aw):
    # x: (..., H, W) planes
    return ah @ x @ aw.T


def _filt_t(x, ah, aw):
    return ah.T @ x @ aw


def _hwc(x):
    x = as_array(x)
    return (x[..., None], True) if x.ndim == 2 else (x, False)


def ssim(a, b):
    """Mean SSIM of ``a`` against ``b`` and its gradient with respect to ``a``.

    Local statistics use an 11x11 Gaussian window (sigma 1.5) renormalised at
    the borders; intensities are assumed to span [0, 1].
    """
    x, flat = _hwc(a)
    y, _ = _hwc(b)
    if x.shape != y.shape:
        raise ShapeError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    ah = _ssim_filter(x.shape[0])
    aw = _ssim_filter(x.shape[1])
    x = np.ascontiguousarray(np.moveaxis(x, 2, 0))
    y = np.ascontiguousarray(np.moveaxis(y, 2, 0))
    mx, my, mxx, myy, mxy = _filt(np.stack([x, y, x * x, y * y, x * y]), ah, aw)

    a1 = 2 * mx * my + SSIM_C1
    b1 = 2 * (mxy - mx * my) + SSIM_C2
    a2 = mx * mx + my * my + SSIM_C1
    b2 = (mxx - mx * mx) + (myy - my * my) + SSIM_C2
    den = a2 * b2
    smap = a1 * b1 / den
    n = smap.size
    value = float(smap.mean())

    # partials of the SSIM map w.r.t. the filtered moments of x
    d_mx = (2 * my * b1 - 2 * my * a1) / den - smap * (2 * mx / a2) + smap * (2 * mx / b2)
    d_mxy = 2 * a1 / den
    d_mxx = -smap / b2
    t_mx, t_mxy, t_mxx = _filt_t(np.stack([d_mx, d_mxy, d_mxx]), ah, aw)
    grad = np.moveaxis((t_mx + t_mxy * y + 2 * x * t_mxx) / n, 0, 2)
    return value, (grad[..., 0] if flat else grad)


# ---------------------------------------------------------- reconstruction

def _stack_array(s):
    return as_array(s)


def recon_loss(rendered, observed, w=LossWeights()):
    """Mean over the stack of ``alpha*(1-SSIM)/2 + (1-alpha)*L1``.

    Returns ``(value, grads)`` with ``grads[k]`` the gradient w.r.t.
    ``rendered[k]``.
    """
    r = _stack_array(rendered)
    o = _stack_array(observed)
    if r.shape != o.shape:
        raise ShapeError(f"stack shapes differ: {r.shape} vs {o.shape}")
    fr = getattr(rendered, "focus_distances", None)
    fo = getattr(observed, "focus_distances", None)
    if fr is not None and fo is not None and tuple(fr) != tuple(fo):
        raise ShapeError(f"focus distances differ: {list(fr)} vs {list(fo)}")
    k = r.shape[0]
    npx = r[0].size
    value = 0.0
    grads = np.empty_like(r)
    for i in range(k):
        diff = r[i] - o[i]
        s, gs = ssim(r[i], o[i]) if w.alpha > 0 else (1.0, 0.0)
        value += w.alpha * (1.0 - s) / 2.0 + (1.0 - w.alpha) * np.abs(diff).mean()
        grads[i] = (-w.alpha / 2.0 * gs + (1.0 - w.alpha) * np.sign(diff) / npx) / k
    return value / k, grads


# ------------------------------------------------------------- blurriness

def blur_loss(img, w=LossWeights()):
    """``-beta * log(Var(laplacian) + eps)`` per channel, averaged; sharper is lower."""
    x = as_array(img)
    lap = laplacian_channels(x)
    lap3 = lap[..., None] if lap.ndim == 2 else lap
    nc = lap3.shape[2]
    m = lap3.shape[0] * lap3.shape[1]
    mean = lap3.mean(axis=(0, 1))
    var = (lap3 * lap3).mean(axis=(0, 1)) - mean * mean
    var = np.maximum(var, 0.0)
    value = float(np.mean(-w.blur_beta * np.log(var + BLUR_EPS)))
    g_lap = (-w.blur_beta / (nc * (var + BLUR_EPS))) * 2.0 * (lap3 - mean) / m
    g_lap = g_lap[..., 0] if lap.ndim == 2 else g_lap
    return value, laplacian_channels_adjoint(g_lap)


# ------------------------------------------------------------- coarse AIF

def coarse_aif(stack, sigma_maps):
    """Per pixel, copy the slice whose predicted blur is smallest.

    Ties go to the lower slice index. Returns ``(Image, indices)``.
    """
    s = _stack_array(stack)
    sig = np.stack([as_array(m) for m in sigma_maps])
    if sig.shape[0] != s.shape[0]:
        raise ShapeError(f"{s.shape[0]} slices but {sig.shape[0]} defocus maps")
    if sig.shape[1:] != s.shape[1:3]:
        raise ShapeError(f"defocus maps {sig.shape[1:]} do not match images {s.shape[1:3]}")
    idx = np.argmin(sig, axis=0)
    rows, cols = np.indices(idx.shape)
    return Image(s[idx, rows, cols]), idx


# -------------------------------------------------------------- smoothness

def _smooth_terms(depth, aif, w):
    d = as_array(depth)
    x = as_array(aif)
    if d.shape != x.shape[:2]:
        raise ShapeError(f"depth {d.shape} does not match image {x.shape[:2]}")
    x3 = x[..., None] if x.ndim == 2 else x
    nc = x3.shape[2]
    ddx, ddy = spatial_gradients(d)
    idx, idy = spatial_gradients(x3)
    ex = np.abs(idx).mean(axis=2)
    ey = np.abs(idy).mean(axis=2)
    wx = np.exp(-w.edge_beta * ex)
    wy = np.exp(-w.edge_beta * ey)
    m = d.size
    value = float((np.abs(ddx) * wx + np.abs(ddy) * wy).mean())
    g_depth = spatial_gradients_adjoint(np.sign(ddx) * wx / m, np.sign(ddy) * wy / m)
    # through the edge weights
    cx = -w.edge_beta * np.abs(ddx) * wx / (m * nc)
    cy = -w.edge_beta * np.abs(ddy) * wy / (m * nc)
    g_img = spatial_gradients_adjoint(cx[..., None] * np.sign(idx), cy[..., None] * np.sign(idy))
    return value, g_depth, (g_img[..., 0] if x.ndim == 2 else g_img)


def smooth_loss(depth, aif, w=LossWeights()):
    """Edge-aware first-order depth smoothness; returns ``(value, grad_depth)``."""
    value, g_depth, _ = _smooth_terms(depth, aif, w)
    return value, g_depth


# ------------------------------------------------------------------ total

@dataclass
class TotalLoss:
    report: LossReport
    grad_depth: np.ndarray
    grad_aif: np.ndarray
    term_grads: dict
    rendered: np.ndarray
    sigma: np.ndarray


def evaluate_total(observed, depth, aif, cam, cfg=DEFAULT_PSF, w=LossWeights()):
    """Full objective with per-term gradients (see :func:`total_loss`)."""
    obs = _stack_array(observed)
    d = as_array(depth)
    x = as_array(aif)
    k = obs.shape[0]
    if k != cam.num_focus:
        raise ShapeError(f"stack has {k} slices, camera schedule has {cam.num_focus}")
    if obs.shape[1:] != x.shape or d.shape != x.shape[:2]:
        raise ShapeError(f"shape mismatch: stack {obs.shape[1:]}, aif {x.shape}, depth {d.shape}")

    sigma = np.stack([coc_sigma(d, cam, i) for i in range(k)])
    rendered = np.stack([render_array(x, sigma[i], cfg) for i in range(k)])

    recon, g_rend = recon_loss(rendered, obs, w)
    g_depth_recon = np.zeros_like(d)
    g_aif_recon = np.zeros_like(x)
    if w.recon_scale > 0:
        for i in range(k):
            g_aif_recon += adjoint_aif(sigma[i], g_rend[i], cfg)
            g_depth_recon += grad_sigma(x, sigma[i], g_rend[i], cfg) * dsigma_ddepth(d, cam, i)

    blur_pred, g_aif_blur = blur_loss(x, w)
    coarse, _ = coarse_aif(obs, sigma)
    blur_coarse, _ = blur_loss(coarse, w)
    smooth, g_depth_smooth, g_aif_smooth = _smooth_terms(d, x, w)

    report = LossReport(0.0, recon, blur_pred, blur_coarse, smooth, w)
    report = LossReport(report.recombine(), recon, blur_pred, blur_coarse, smooth, w)

    term_grads = {
        "recon": (w.recon_scale * g_depth_recon, w.recon_scale * g_aif_recon),
        "blur_pred": (np.zeros_like(d), w.pred_blur_scale * g_aif_blur),
        "blur_coarse": (np.zeros_like(d), np.zeros_like(x)),
        "smooth": (w.lambda_smooth * g_depth_smooth, w.lambda_smooth * g_aif_smooth),
    }
    g_depth = sum(g[0] for g in term_grads.values())
    g_aif = sum(g[1] for g in term_grads.values())
    return TotalLoss(report, g_depth, g_aif, term_grads, rendered, sigma)


def total_loss(observed, depth, aif, cam, cfg=DEFAULT_PSF, w=LossWeights()):
    """Weighted objective and its gradients.

    Returns ``(LossReport, grad_depth, grad_aif)``. The coarse-AIF blur term is
    reported and included in the total but passes no gradient (its only path
    to depth is a per-pixel argmin).
    """
    t = evaluate_total(observed, depth, aif, cam, cfg, w)
    return t.report, t.grad_depth, t.grad_aif


__all__ = [
    "LossWeights", "LossReport", "CSV_COLUMNS", "ssim", "recon_loss", "blur_loss",
    "coarse_aif", "smooth_loss", "total_loss", "evaluate_total", "TotalLoss", "FocalStack",
]

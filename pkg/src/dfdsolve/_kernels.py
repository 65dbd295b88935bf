"""Spatially varying Gaussian blur kernels, numba and numpy variants.

All functions take ``img`` as (H, W, C) float64, ``sigma`` as (H, W) and
``radius`` = window // 2. Every output pixel uses its own separable,
renormalised Gaussian (identity when sigma < thr); borders replicate.
Both variants sum in the same kernel-scan order but are not bit-identical to
each other.
"""
import numpy as np

from ._accel import njit, prange


# ----------------------------------------------------------------- numpy

def weights1d_numpy(sigma, radius, thr):
    off = np.arange(-radius, radius + 1, dtype=np.float64)
    clear = sigma < thr
    s = np.where(clear, 1.0, sigma)
    g = np.exp(-(off * off) / (2.0 * s[..., None] ** 2))
    w = g / g.sum(axis=-1, keepdims=True)
    ident = np.zeros(2 * radius + 1)
    ident[radius] = 1.0
    return np.where(clear[..., None], ident, w)


def _windows(img, radius):
    pad = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    # (H, W, C, k, k) view, last two axes are (row offset, col offset)
    return np.lib.stride_tricks.sliding_window_view(pad, (2 * radius + 1,) * 2, axis=(0, 1))


def render_numpy(img, sigma, radius, thr):
    w1 = weights1d_numpy(sigma, radius, thr)
    win = _windows(img, radius)
    # sum over column offset, then row offset
    rows = np.einsum("hwcvu,hwu->hwcv", win, w1)
    return np.einsum("hwcv,hwv->hwc", rows, w1)


def _fold(pad, radius, h, w):
    # add replicated-border cells back onto the edge pixels they copy
    r = radius
    p = pad.copy()
    p[r] += p[:r].sum(axis=0)
    p[r + h - 1] += p[r + h:].sum(axis=0)
    p[:, r] += p[:, :r].sum(axis=1)
    p[:, r + w - 1] += p[:, r + w:].sum(axis=1)
    return p[r:r + h, r:r + w]


def adjoint_numpy(grad_out, sigma, radius, thr):
    h, w, c = grad_out.shape
    k = 2 * radius + 1
    w1 = weights1d_numpy(sigma, radius, thr)
    pad = np.zeros((h + 2 * radius, w + 2 * radius, c))
    for v in range(k):
        for u in range(k):
            wt = w1[:, :, v] * w1[:, :, u]
            pad[v:v + h, u:u + w] += wt[..., None] * grad_out
    return _fold(pad, radius, h, w)


def grad_sigma_numpy(img, sigma, grad_out, radius, thr):
    w1 = weights1d_numpy(sigma, radius, thr)
    clear = sigma < thr
    s = np.where(clear, 1.0, sigma)
    off = np.arange(-radius, radius + 1, dtype=np.float64)
    off2 = off * off
    m1 = (w1 * off2).sum(axis=-1)  # E[u^2] under the 1-D weights
    win = _windows(img, radius)
    resp = np.einsum("hwcvu,hwc->hwvu", win, grad_out)
    r2 = off2[:, None] + off2[None, :]
    dw = w1[:, :, :, None] * w1[:, :, None, :] * (r2 - 2.0 * m1[:, :, None, None])
    out = np.einsum("hwvu,hwvu->hw", dw, resp) / s ** 3
    return np.where(clear, 0.0, out)


# ----------------------------------------------------------------- numba

@njit(cache=True, parallel=True)
def weights1d_numba(sigma, radius, thr):
    h, w = sigma.shape
    k = 2 * radius + 1
    out = np.zeros((h, w, k))
    for y in prange(h):
        for x in range(w):
            s = sigma[y, x]
            if s < thr:
                out[y, x, radius] = 1.0
                continue
            z = 0.0
            for i in range(k):
                o = i - radius
                g = np.exp(-(o * o) / (2.0 * s * s))
                out[y, x, i] = g
                z += g
            for i in range(k):
                out[y, x, i] /= z
    return out


@njit(cache=True, parallel=True)
def render_numba(img, sigma, radius, thr):
    h, w, c = img.shape
    k = 2 * radius + 1
    w1 = weights1d_numba(sigma, radius, thr)
    out = np.empty_like(img)
    for y in prange(h):
        acc = np.empty(c)
        for x in range(w):
            if sigma[y, x] < thr:
                for ch in range(c):
                    out[y, x, ch] = img[y, x, ch]
                continue
            for ch in range(c):
                acc[ch] = 0.0
            for v in range(k):
                yy = min(max(y + v - radius, 0), h - 1)
                wv = w1[y, x, v]
                for u in range(k):
                    xx = min(max(x + u - radius, 0), w - 1)
                    wt = wv * w1[y, x, u]
                    for ch in range(c):
                        acc[ch] += wt * img[yy, xx, ch]
            for ch in range(c):
                out[y, x, ch] = acc[ch]
    return out


@njit(cache=True, parallel=True)
def _adjoint_padded_numba(grad_out, w1, radius):
    # gather form of the scatter: padded cell (a, b) collects from every
    # output pixel whose window covers it; rows are written disjointly
    h, w, c = grad_out.shape
    k = 2 * radius + 1
    ph = h + 2 * radius
    pw = w + 2 * radius
    pad = np.zeros((ph, pw, c))
    for a in prange(ph):
        for b in range(pw):
            for v in range(k):
                y = a - v
                if y < 0 or y >= h:
                    continue
                for u in range(k):
                    x = b - u
                    if x < 0 or x >= w:
                        continue
                    wt = w1[y, x, v] * w1[y, x, u]
                    if wt == 0.0:
                        continue
                    for ch in range(c):
                        pad[a, b, ch] += wt * grad_out[y, x, ch]
    return pad


def adjoint_numba(grad_out, sigma, radius, thr):
    h, w, _ = grad_out.shape
    w1 = weights1d_numba(sigma, radius, thr)
    return _fold(_adjoint_padded_numba(grad_out, w1, radius), radius, h, w)


@njit(cache=True, parallel=True)
def grad_sigma_numba(img, sigma, grad_out, radius, thr):
    h, w, c = img.shape
    k = 2 * radius + 1
    w1 = weights1d_numba(sigma, radius, thr)
    out = np.zeros((h, w))
    for y in prange(h):
        for x in range(w):
            s = sigma[y, x]
            if s < thr:
                continue
            m1 = 0.0
            for i in range(k):
                o = i - radius
                m1 += w1[y, x, i] * o * o
            total = 0.0
            for v in range(k):
                yy = min(max(y + v - radius, 0), h - 1)
                ov = v - radius
                for u in range(k):
                    xx = min(max(x + u - radius, 0), w - 1)
                    ou = u - radius
                    dw = w1[y, x, v] * w1[y, x, u] * (ov * ov + ou * ou - 2.0 * m1)
                    r = 0.0
                    for ch in range(c):
                        r += img[yy, xx, ch] * grad_out[y, x, ch]
                    total += dw * r
            out[y, x] = total / (s * s * s)
    return out


IMPLS = {
    "numpy": (render_numpy, adjoint_numpy, grad_sigma_numpy),
    "numba": (render_numba, adjoint_numba, grad_sigma_numba),
}

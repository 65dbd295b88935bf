import math

import numpy as np
import pytest
from scipy import ndimage

from dfdsolve import _kernels
from dfdsolve.errors import DomainError, ShapeError
from dfdsolve.fields import laplacian, validate
from dfdsolve.optics import coc_sigma
from dfdsolve.psf import (PsfConfig, adjoint_aif, gaussian_kernel, grad_sigma, render_array,
                          render_defocus, render_stack)
from dfdsolve.scenes import checkerboard, two_plane_depth

BACKENDS = sorted(_kernels.IMPLS)


def brute_kernel(sigma, window):
    r = window // 2
    k = np.zeros((window, window))
    for v in range(-r, r + 1):
        for u in range(-r, r + 1):
            k[v + r, u + r] = math.exp(-(u * u + v * v) / (2 * sigma * sigma))
    return k / k.sum()


def test_kernel_examples():
    ident = np.zeros((7, 7))
    ident[3, 3] = 1
    np.testing.assert_array_equal(gaussian_kernel(0.0), ident)
    np.testing.assert_array_equal(gaussian_kernel(0.99), ident)
    for s in (1.0, 1.7, 2.0, 5.0, 40.0):
        assert abs(gaussian_kernel(s).sum() - 1) < 1e-12
    k = gaussian_kernel(2.0)
    np.testing.assert_allclose(k, brute_kernel(2.0, 7), rtol=1e-13)
    assert k[3, 3] == pytest.approx(1.0 / np.exp(-np.add.outer(np.arange(-3, 4) ** 2, np.arange(-3, 4) ** 2) / 8).sum())
    assert gaussian_kernel(1.5, window=5).shape == (5, 5)
    with pytest.raises(DomainError):
        gaussian_kernel(-0.1)
    with pytest.raises(ValueError):
        PsfConfig(window=6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_render_constant_and_identity(backend, rng):
    render = _kernels.IMPLS[backend][0]
    sig = rng.uniform(0, 4, (9, 11))
    const = np.full((9, 11, 3), 0.37)
    out = render(const, sig, 3, 1.0)
    assert np.max(np.abs(out - 0.37)) < 1e-12
    img = rng.random((9, 11, 3))
    np.testing.assert_array_equal(render(img, np.zeros((9, 11)), 3, 1.0), img)


@pytest.mark.parametrize("backend", BACKENDS)
def test_render_uniform_sigma_matches_dense_convolution(backend, rng):
    render = _kernels.IMPLS[backend][0]
    img = rng.random((16, 16, 3))
    k = brute_kernel(2.0, 7)
    ref = np.stack([ndimage.correlate(img[..., c], k, mode="nearest") for c in range(3)], axis=-1)
    out = render(img, np.full((16, 16), 2.0), 3, 1.0)
    assert np.max(np.abs(out - ref)) < 1e-6


def test_backends_agree(rng):
    img = rng.random((13, 10, 3))
    sig = rng.uniform(0, 5, (13, 10))
    g = rng.random((13, 10, 3))
    r = [(f[0](img, sig, 3, 1.0), f[1](g, sig, 3, 1.0), f[2](img, sig, g, 3, 1.0))
         for f in _kernels.IMPLS.values()]
    for a, b in zip(r[0], r[1]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
def test_adjoint_dot_product(backend, rng):
    render, adjoint, _ = _kernels.IMPLS[backend]
    for _ in range(20):
        x = rng.random((16, 16, 1))
        y = rng.random((16, 16, 1))
        sig = rng.uniform(0, 4, (16, 16))
        lhs = float(np.sum(render(x, sig, 3, 1.0) * y))
        rhs = float(np.sum(x * adjoint(y, sig, 3, 1.0)))
        assert abs(lhs - rhs) <= 1e-6 * abs(lhs)


def test_adjoint_examples(rng):
    y = rng.random((8, 8))
    np.testing.assert_array_equal(adjoint_aif(np.zeros((8, 8)), y), y)
    g = np.zeros((16, 16))
    g[5:11, 5:11] = 1.0
    out = adjoint_aif(rng.uniform(0, 3, (16, 16)), g)
    assert out.sum() == pytest.approx(g.sum(), rel=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("s0", [1.5, 2.0, 3.0])
def test_grad_sigma_finite_difference(backend, s0, rng):
    render, _, gs = _kernels.IMPLS[backend]
    img = rng.random((10, 10, 3))
    sig = rng.uniform(1.2, 4, (10, 10))
    g = rng.random((10, 10, 3))
    grad = gs(img, sig, g, 3, 1.0)
    assert grad.shape == (10, 10)
    for p in [(4, 5), (0, 0), (9, 3)]:
        at = sig.copy()
        at[p] = s0
        up, down = at.copy(), at.copy()
        up[p] += 1e-3
        down[p] -= 1e-3
        fd = (np.sum(render(img, up, 3, 1.0) * g) - np.sum(render(img, down, 3, 1.0) * g)) / 2e-3
        assert gs(img, at, g, 3, 1.0)[p] == pytest.approx(fd, rel=1e-4)


def test_grad_sigma_examples(rng):
    sig = rng.uniform(1.5, 4, (8, 8))
    # output is invariant to sigma for a constant image
    assert np.abs(grad_sigma(np.full((8, 8), 0.4), sig, rng.random((8, 8)))).max() < 1e-12
    low = rng.uniform(0, 0.99, (8, 8))
    assert not grad_sigma(rng.random((8, 8)), low, rng.random((8, 8))).any()


def test_render_errors():
    with pytest.raises(ShapeError):
        render_array(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(DomainError):
        render_array(np.zeros((4, 4)), -np.ones((4, 4)))


def test_render_output_valid(rng, nyu):
    img = render_defocus(rng.random((12, 12, 3)), rng.uniform(0, 5, (12, 12)))
    assert validate(img) is None


def test_render_deterministic(rng):
    img, sig = rng.random((20, 20, 3)), rng.uniform(0, 5, (20, 20))
    a = render_array(img, sig)
    b = render_array(img, sig)
    assert a.tobytes() == b.tobytes()


def test_render_stack_focus_plane(nyu, rng):
    aif = rng.random((12, 12))
    for k, F in enumerate(nyu.focus_distances):
        st = render_stack(aif, np.full((12, 12), F), nyu)
        assert len(st) == nyu.num_focus
        np.testing.assert_array_equal(st.data[k], aif)
        others = [j for j in range(len(st)) if j != k]
        assert all(np.abs(st.data[j] - aif).max() > 0.01 for j in others)


def test_render_stack_checkerboard_sharpness_swaps(nyu):
    aif = checkerboard((32, 32), square=2)
    depth = two_plane_depth((32, 32), near=1.0, far=4.0)
    st = render_stack(aif, depth, nyu)
    near_k, far_k = 0, 3
    assert coc_sigma(1.0, nyu, near_k) == 0 and coc_sigma(4.0, nyu, far_k) == 0

    def energy(img, cols):
        return float((laplacian(img)[4:-4, cols] ** 2).mean())

    left, right = slice(2, 12), slice(20, 30)
    assert energy(st.data[near_k], left) > energy(st.data[far_k], left)
    assert energy(st.data[far_k], right) > energy(st.data[near_k], right)

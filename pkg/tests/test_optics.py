import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from dfdsolve.errors import ConfigError, DomainError
from dfdsolve.fields import DepthMap
from dfdsolve.optics import (CameraIntrinsics, PRESETS, coc_sigma, defocus_map, distinguishability_report,
                             dsigma_ddepth, preset, response_curve)


def eq2(d, f, N, F, p):
    # straight transcription of the thin-lens blur radius, used as oracle
    return (1.0 / (2 * p)) * abs(d - F) / d * f * f / (N * (F - f))


def test_in_focus_is_zero(nyu):
    for k, F in enumerate(nyu.focus_distances):
        assert coc_sigma(F, nyu, k) == 0.0


def test_reference_value(nyu):
    # 0.5 * (0.0025 / 7.6) / 1e-5 / 2
    assert coc_sigma(2.0, nyu, 0) == pytest.approx(8.223684210526317, rel=1e-12)
    assert coc_sigma(2.0, nyu, 0) == pytest.approx(eq2(2.0, 0.05, 8, 1.0, 1e-5), rel=1e-14)


def test_far_limit(nyu):
    limit = (1 / 2e-5) * 0.0025 / (8 * 0.95)
    vals = [coc_sigma(d, nyu, 0) for d in (10.0, 100.0, 1e4, 1e8)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(limit, rel=1e-7)
    assert all(v < limit for v in vals)


def test_errors(nyu):
    with pytest.raises(DomainError):
        coc_sigma(0.0, nyu, 0)
    with pytest.raises(DomainError):
        coc_sigma(np.array([1.0, -2.0]), nyu, 0)
    with pytest.raises(IndexError):
        coc_sigma(1.0, nyu, 5)
    with pytest.raises(IndexError):
        dsigma_ddepth(1.0, nyu, -1)
    with pytest.raises(DomainError):
        dsigma_ddepth(-1.0, nyu, 0)


def test_camera_invariants():
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.05, 8, 1e-5, (0.04, 1.0), (0.5, 10))
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.05, 8, 1e-5, (1.0, 1.0), (0.5, 10))
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.05, 0, 1e-5, (1.0, 2.0), (0.5, 10))
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.05, 8, 1e-5, (1.0, 2.0), (10, 0.5))


def test_presets_match_published_settings():
    n = preset("nyuv2")
    assert (n.focal_length, n.f_number, n.focus_distances, n.d_max) == (0.05, 8.0, (1, 1.5, 2.5, 4, 6), 10.0)
    d = preset("defocusnet")
    assert (d.focal_length, d.f_number, d.focus_distances, d.d_max) == (
        0.0029, 1.2, (0.3, 0.45, 0.75, 1.2, 1.8), 3.0)
    with pytest.raises(ConfigError):
        preset("nope")


def test_config_roundtrip(nyu):
    assert CameraIntrinsics.from_dict(nyu.to_dict()) == nyu
    with pytest.raises(ConfigError):
        CameraIntrinsics.from_dict({"f": 0.05})
    with pytest.raises(ConfigError):
        CameraIntrinsics.from_dict({**nyu.to_dict(), "bogus": 1})


def test_derivative_reference(nyu):
    assert dsigma_ddepth(1.0, nyu, 0) == 0.0
    assert dsigma_ddepth(2.0, nyu, 0) == pytest.approx(4.111842105263158, rel=1e-12)
    h = 1e-4
    fd = (coc_sigma(2.0 + h, nyu, 0) - coc_sigma(2.0 - h, nyu, 0)) / (2 * h)
    assert dsigma_ddepth(2.0, nyu, 0) == pytest.approx(fd, rel=1e-6)
    assert dsigma_ddepth(0.7, nyu, 2) < 0


@given(d=st.floats(0.05, 50.0), k=st.integers(0, 4))
def test_derivative_matches_finite_difference(d, k):
    cam = preset("nyuv2")
    F = cam.focus_distances[k]
    if abs(d - F) <= 1e-3:
        return
    h = min(1e-5, abs(d - F) / 10, d / 10)
    fd = (coc_sigma(d + h, cam, k) - coc_sigma(d - h, cam, k)) / (2 * h)
    assert dsigma_ddepth(d, cam, k) == pytest.approx(fd, rel=1e-6, abs=1e-9)


@given(d=st.floats(0.05, 100.0), c=st.floats(0.1, 10.0))
def test_pixel_pitch_scaling(d, c):
    a = preset("nyuv2")
    b = CameraIntrinsics(a.focal_length, a.f_number, a.pixel_pitch * c, a.focus_distances, a.depth_range)
    assert coc_sigma(d, b, 1) == pytest.approx(coc_sigma(d, a, 1) / c, rel=1e-12, abs=1e-15)


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1))
def test_defocus_map_elementwise(seed):
    cam = preset("nyuv2")
    r = np.random.default_rng(seed)
    d = r.uniform(0.5, 10.0, (5, 7))
    sig = defocus_map(DepthMap(d), cam, 3).data
    assert sig.shape == d.shape
    for i in range(5):
        for j in range(7):
            assert sig[i, j] == coc_sigma(float(d[i, j]), cam, 3)


def test_defocus_map_examples(nyu):
    assert np.all(defocus_map(np.full((3, 4), 1.0), nyu, 0).data == 0)
    two = np.array([[1.0, 2.0], [2.0, 1.0]])
    sig = defocus_map(two, nyu, 0).data
    assert set(np.round(sig.ravel(), 6)) == {0.0, round(8.223684210526317, 6)}
    one = defocus_map(np.array([[3.3]]), nyu, 2).data
    assert one.shape == (1, 1) and one[0, 0] == coc_sigma(3.3, nyu, 2)


def test_response_curve_shape(nyu):
    assert response_curve(nyu, 1, []) == []
    assert response_curve(nyu, 1, [1.5]) == [(1.5, 0.0)]
    for k, F in enumerate(nyu.focus_distances):
        depths = np.linspace(nyu.d_min, nyu.d_max, 2001)
        sig = np.array([s for _, s in response_curve(nyu, k, depths)])
        below, above = sig[depths <= F], sig[depths >= F]
        assert np.all(np.diff(below) < 0)
        assert np.all(np.diff(above) > 0)


@pytest.mark.parametrize("k1,k2", [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
def test_curves_cross_once_between_focus_distances(nyu, k1, k2):
    F1, F2 = nyu.focus_distances[k1], nyu.focus_distances[k2]
    root = brentq(lambda d: eq2(d, 0.05, 8, F1, 1e-5) - eq2(d, 0.05, 8, F2, 1e-5), F1 + 1e-9, F2 - 1e-9)
    depths = np.linspace(F1, F2, 4001)
    a = np.array([s for _, s in response_curve(nyu, k1, depths)])
    b = np.array([s for _, s in response_curve(nyu, k2, depths)])
    sgn = np.sign(a - b)
    changes = np.nonzero(np.diff(sgn))[0]
    assert len(changes) == 1
    assert depths[changes[0]] <= root <= depths[changes[0] + 1]


def test_distinguishability(nyu):
    rep = distinguishability_report(nyu)
    assert rep.min_gap > 0
    assert len(rep.depths) == 951
    # oracle: brute-force grid at 1 cm
    best = math.inf
    for d in np.round(np.arange(0.5, 10.0 + 1e-9, 0.01), 10):
        s = [eq2(d, 0.05, 8, F, 1e-5) for F in nyu.focus_distances]
        best = min(best, max(s) - min(s))
    assert rep.min_gap == pytest.approx(best, rel=1e-9)


def test_distinguishability_degenerate(nyu):
    rep = distinguishability_report(nyu, focus_distances=(2.0, 2.0))
    assert rep.min_gap == 0 and np.all(rep.gap == 0)
    single = CameraIntrinsics(0.05, 8, 1e-5, (2.0,), (0.5, 10))
    with pytest.raises(ConfigError):
        distinguishability_report(single)


def test_distinguishability_scales_with_f_number(nyu):
    a = distinguishability_report(nyu)
    wide = CameraIntrinsics(0.05, 16.0, 1e-5, nyu.focus_distances, nyu.depth_range)
    b = distinguishability_report(wide)
    np.testing.assert_allclose(b.gap, a.gap / 2, rtol=1e-12)


def test_presets_dict():
    assert set(PRESETS) == {"nyuv2", "defocusnet"}

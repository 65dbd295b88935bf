"""Thin-lens defocus model: scene depth to Gaussian blur radius in pixels."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Lens geometry plus the focus schedule of a focal stack.

    All lengths are in meters. ``pixel_pitch`` is the sensor pixel size.
    """

    focal_length: float
    f_number: float
    pixel_pitch: float = 1e-5
    focus_distances: tuple = ()
    depth_range: tuple = (0.1, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "focus_distances", tuple(float(x) for x in self.focus_distances))
        object.__setattr__(self, "depth_range", tuple(float(x) for x in self.depth_range))
        if not self.focal_length > 0:
            raise ConfigError(f"focal_length must be > 0, got {self.focal_length}")
        if not self.f_number > 0:
            raise ConfigError(f"f_number must be > 0, got {self.f_number}")
        if not self.pixel_pitch > 0:
            raise ConfigError(f"pixel_pitch must be > 0, got {self.pixel_pitch}")
        fd = self.focus_distances
        if not fd:
            raise ConfigError("focus_distances must not be empty")
        for F in fd:
            if not F > self.focal_length:
                raise ConfigError(f"focus distance {F} must exceed focal length {self.focal_length}")
        if any(b <= a for a, b in zip(fd, fd[1:])):
            raise ConfigError(f"focus_distances must be strictly increasing, got {list(fd)}")
        if len(self.depth_range) != 2:
            raise ConfigError("depth_range must be (d_min, d_max)")
        d_min, d_max = self.depth_range
        if not d_min > 0 or not d_max > d_min:
            raise ConfigError(f"need 0 < d_min < d_max, got {self.depth_range}")

    @property
    def aperture(self):
        return self.focal_length / self.f_number

    @property
    def d_min(self):
        return self.depth_range[0]

    @property
    def d_max(self):
        return self.depth_range[1]

    @property
    def num_focus(self):
        return len(self.focus_distances)

    def with_focus_distances(self, focus_distances):
        return replace(self, focus_distances=tuple(focus_distances))

    def to_dict(self):
        return {
            "f": self.focal_length,
            "N": self.f_number,
            "p": self.pixel_pitch,
            "focus_distances": list(self.focus_distances),
            "depth_min": self.d_min,
            "depth_max": self.d_max,
        }

    @classmethod
    def from_dict(cls, d):
        required = ("f", "N", "focus_distances", "depth_min", "depth_max")
        missing = [k for k in required if k not in d]
        if missing:
            raise ConfigError(f"camera config missing keys: {missing}")
        unknown = set(d) - set(required) - {"p", "name"}
        if unknown:
            raise ConfigError(f"camera config has unknown keys: {sorted(unknown)}")
        try:
            return cls(
                focal_length=float(d["f"]),
                f_number=float(d["N"]),
                pixel_pitch=float(d.get("p", 1e-5)),
                focus_distances=tuple(float(x) for x in d["focus_distances"]),
                depth_range=(float(d["depth_min"]), float(d["depth_max"])),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad camera config value: {exc}") from exc


PRESETS = {
    "nyuv2": CameraIntrinsics(
        focal_length=0.05, f_number=8.0, pixel_pitch=1e-5,
        focus_distances=(1.0, 1.5, 2.5, 4.0, 6.0), depth_range=(0.5, 10.0),
    ),
    "defocusnet": CameraIntrinsics(
        focal_length=0.0029, f_number=1.2, pixel_pitch=1e-5,
        focus_distances=(0.3, 0.45, 0.75, 1.2, 1.8), depth_range=(0.1, 3.0),
    ),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown camera preset {name!r}; choose from {sorted(PRESETS)}") from None


def _focus(cam, focus_index):
    n = cam.num_focus
    if isinstance(focus_index, (bool, np.bool_)) or not isinstance(focus_index, (int, np.integer)):
        raise IndexError(f"focus_index must be an integer, got {focus_index!r}")
    if not 0 <= focus_index < n:
        raise IndexError(f"focus_index {focus_index} out of range for {n} focus distances")
    return cam.focus_distances[focus_index]


def _blur_gain(cam, F):
    # sigma = gain * |d - F| / d
    f = cam.focal_length
    return f * f / (cam.f_number * (F - f)) / (2.0 * cam.pixel_pitch)


def _check_depth(depth):
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(d > 0):
        bad = np.argwhere(~(d > 0))
        where = f" at {tuple(int(i) for i in bad[0])}" if d.ndim else ""
        raise DomainError(f"depth must be > 0 (found {d[tuple(bad[0])] if d.ndim else d}{where})")
    return d


def coc_sigma(depth, cam, focus_index):
    """Blur radius in pixels for ``depth`` (scalar or array, meters).

    Returns a float for scalar input, an array otherwise.
    """
    F = _focus(cam, focus_index)
    d = _check_depth(depth)
    sigma = _blur_gain(cam, F) * np.abs(d - F) / d
    return float(sigma) if sigma.ndim == 0 else sigma


def dsigma_ddepth(depth, cam, focus_index):
    """Derivative of :func:`coc_sigma` with respect to depth (pixels per meter).

    The kink at ``depth == F`` gets derivative 0.
    """
    F = _focus(cam, focus_index)
    d = _check_depth(depth)
    g = _blur_gain(cam, F) * np.sign(d - F) * F / (d * d)
    return float(g) if g.ndim == 0 else g


def defocus_map(depth, cam, focus_index):
    """Per-pixel :func:`coc_sigma` of a depth map; returns a DefocusMap."""
    from .fields import DefocusMap, as_array

    d = as_array(depth)
    return DefocusMap(coc_sigma(np.atleast_1d(d), cam, focus_index).reshape(d.shape))


def response_curve(cam, focus_index, depth_samples):
    """List of ``(depth, sigma)`` pairs for plotting or export."""
    samples = [float(x) for x in depth_samples]
    if not samples:
        return []
    sig = coc_sigma(np.asarray(samples), cam, focus_index)
    return list(zip(samples, (float(s) for s in sig)))


def depth_grid(cam, resolution=0.01):
    """Inclusive grid over ``cam.depth_range`` with the given step."""
    d_min, d_max = cam.depth_range
    n = int(round((d_max - d_min) / resolution)) + 1
    # rounded so grid points that should coincide with a focus distance do
    return np.round(d_min + resolution * np.arange(n, dtype=np.float64), 10)


@dataclass
class DistinguishabilityReport:
    depths: np.ndarray
    gap: np.ndarray  # per depth: max over focus pairs of |sigma_i - sigma_j|
    min_gap: float
    worst_depth: float
    focus_distances: tuple = field(default=())


def distinguishability_report(cam, resolution=0.01, focus_distances: Sequence[float] | None = None):
    """How well the focus schedule separates depths by blur.

    ``focus_distances`` overrides the camera's schedule and, unlike the camera,
    may contain repeats (useful for checking degenerate designs).
    """
    fds = tuple(cam.focus_distances if focus_distances is None else focus_distances)
    if len(fds) < 2:
        raise ConfigError("distinguishability needs at least two focus distances")
    for F in fds:
        if not F > cam.focal_length:
            raise ConfigError(f"focus distance {F} must exceed focal length {cam.focal_length}")
    depths = depth_grid(cam, resolution)
    sig = np.stack([_blur_gain(cam, F) * np.abs(depths - F) / depths for F in fds])
    gap = sig.max(axis=0) - sig.min(axis=0)
    i = int(np.argmin(gap))
    return DistinguishabilityReport(depths, gap, float(gap[i]), float(depths[i]), fds)

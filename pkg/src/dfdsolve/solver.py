"""Recover depth and an all-in-focus image from a focal stack by direct
per-pixel optimisation of the self-supervised objective.

Unknowns live in unconstrained coordinates: depth is a sigmoid onto
``[d_min, d_max]`` and the all-in-focus image a sigmoid onto ``[0, 1]``, so
every iterate is in range without projection. Updates use Adam with an
optional cosine learning-rate decay.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields as dc_fields, replace

import numpy as np

from .errors import ConfigError, ShapeError, SolverFault
from .fields import DepthMap, FocalStack, Image, as_array, laplacian
from .losses import LossWeights, evaluate_total
from .optics import coc_sigma, distinguishability_report
from .psf import DEFAULT_PSF, adjoint_aif, render_array

log = logging.getLogger(__name__)

INIT_NUDGE = 1.02
AIF_INIT_CLIP = 0.005
SHARPNESS_WINDOW = 7
INIT_STRATEGIES = ("sweep", "sharpness")


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 0.01
    iterations: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    cosine: bool = True
    init: str = "sweep"
    sweep_candidates: int = 48
    sweep_cg_iterations: int = 20
    tolerance: float = 1e-7
    tolerance_window: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.init not in INIT_STRATEGIES:
            raise ConfigError(f"unknown init strategy {self.init!r}")
        if self.tolerance_window < 1:
            raise ConfigError("tolerance_window must be >= 1")

    def lr_at(self, t):
        if not self.cosine:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * min(t, self.iterations) / self.iterations))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f.type for f in dc_fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"solver config has unknown keys: {sorted(unknown)}")
        try:
            kw = {}
            for k, v in d.items():
                if k in ("iterations", "tolerance_window", "seed", "sweep_candidates", "sweep_cg_iterations"):
                    if isinstance(v, float) and not v.is_integer():
                        raise ValueError(f"{k} must be an integer")
                    kw[k] = int(v)
                elif k == "cosine":
                    if not isinstance(v, bool):
                        raise ValueError("cosine must be true or false")
                    kw[k] = v
                elif k == "init":
                    kw[k] = str(v)
                else:
                    kw[k] = float(v)
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad solver config value: {exc}") from exc


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass
class SolveState:
    depth_param: np.ndarray
    aif_param: np.ndarray
    depth_range: tuple
    m_depth: np.ndarray = None
    v_depth: np.ndarray = None
    m_aif: np.ndarray = None
    v_aif: np.ndarray = None
    iteration: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.depth_param = np.array(self.depth_param, dtype=np.float64)
        self.aif_param = np.array(self.aif_param, dtype=np.float64)
        for name, ref in (("m_depth", self.depth_param), ("v_depth", self.depth_param),
                          ("m_aif", self.aif_param), ("v_aif", self.aif_param)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(ref))
        self.depth_range = tuple(float(v) for v in self.depth_range)

    @classmethod
    def from_estimate(cls, depth, aif, depth_range):
        lo, hi = depth_range
        d = as_array(depth)
        frac = np.clip((d - lo) / (hi - lo), 1e-6, 1 - 1e-6)
        x = np.clip(as_array(aif), AIF_INIT_CLIP, 1 - AIF_INIT_CLIP)
        return cls(_logit(frac), _logit(x), depth_range)

    def decode_depth(self):
        lo, hi = self.depth_range
        return lo + (hi - lo) * _sigmoid(self.depth_param)

    def decode_aif(self):
        return _sigmoid(self.aif_param)

    def copy(self):
        return SolveState(self.depth_param.copy(), self.aif_param.copy(), self.depth_range,
                          self.m_depth.copy(), self.v_depth.copy(), self.m_aif.copy(),
                          self.v_aif.copy(), self.iteration, list(self.history))


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"DFDSOLV\0"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIdd")  # magic, version, H, W, K, C, iteration, d_min, d_max


def dump_state(state, path, num_focus=0):
    """Write ``state`` as a versioned header followed by little-endian float64s.

    Body order: depth_param, aif_param, m_depth, v_depth, m_aif, v_aif, then
    the loss history as ``iteration`` rows of (total, recon, blur_pred,
    blur_coarse, smooth).
    """
    h, w = state.depth_param.shape
    c = 1 if state.aif_param.ndim == 2 else state.aif_param.shape[2]
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, h, w, int(num_focus), c,
                          state.iteration, *state.depth_range)
    hist = np.array([[r.total, r.recon, r.blur_predicted, r.blur_coarse, r.smooth]
                     for r in state.history], dtype="<f8").reshape(-1, 5)
    body = [state.depth_param, state.aif_param, state.m_depth, state.v_depth,
            state.m_aif, state.v_aif, hist]
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in body:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path, weights=LossWeights()):
    """Inverse of :func:`dump_state`. Returns ``(state, num_focus)``."""
    from .losses import LossReport

    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, h, w, k, c, it, lo, hi = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a solver checkpoint")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    npx = h * w
    sizes = [npx, npx * c, npx, npx, npx * c, npx * c, 5 * it]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    ishape = (h, w) if c == 1 else (h, w, c)
    history = [LossReport(*row, weights=weights) for row in parts[6].reshape(-1, 5).tolist()]
    state = SolveState(parts[0].reshape(h, w), parts[1].reshape(ishape), (lo, hi),
                       parts[2].reshape(h, w), parts[3].reshape(h, w),
                       parts[4].reshape(ishape), parts[5].reshape(ishape), it, history)
    return state, k


# ---------------------------------------------------------- initialisation

def _box_sum(a, size):
    r = size // 2
    p = np.pad(a, r, mode="edge")
    c = np.cumsum(np.cumsum(np.pad(p, ((1, 0), (1, 0))), axis=0), axis=1)
    h, w = a.shape
    return c[size:size + h, size:size + w] - c[:h, size:size + w] - c[size:size + h, :w] + c[:h, :w]


def sharpness(img, window=SHARPNESS_WINDOW):
    """Local Laplacian energy over a ``window x window`` neighbourhood."""
    lap = laplacian(img)
    return _box_sum(lap * lap, window)


def init_estimate(stack, cam):
    """Depth and AIF guesses from the sharpest slice at each pixel.

    Depth starts slightly beyond the chosen slice's focus distance so the
    renderer is not inside its clear-pixel dead zone. Ties pick the lowest
    slice index.
    """
    obs = as_array(stack)
    if obs.shape[0] < 2:
        raise ConfigError(f"need at least 2 slices, got {obs.shape[0]}")
    fds = np.asarray(getattr(stack, "focus_distances", cam.focus_distances), dtype=np.float64)
    sharp = np.stack([sharpness(obs[k]) for k in range(obs.shape[0])])
    idx = np.argmax(sharp, axis=0)
    lo, hi = cam.depth_range
    margin = 1e-3 * (hi - lo)
    depth = np.clip(fds[idx] * INIT_NUDGE, lo + margin, hi - margin)
    rows, cols = np.indices(idx.shape)
    aif = obs[idx, rows, cols]
    return DepthMap(depth, cam.depth_range), Image(aif)


def _blur_all(x, sig, psf):
    return np.stack([render_array(x, sig[k], psf) for k in range(sig.shape[0])])


def _blur_all_t(r, sig, psf):
    return sum(adjoint_aif(sig[k], r[k], psf) for k in range(sig.shape[0]))


def _lsq_aif(obs, sig, psf, x0, iterations):
    """Conjugate gradients on the normal equations of ``min_x sum_k |B_k x - J_k|^2``."""
    x = x0.copy()
    r = _blur_all_t(obs - _blur_all(x, sig, psf), sig, psf)
    p = r.copy()
    rr = float(np.vdot(r, r))
    for _ in range(iterations):
        if rr <= 1e-30:
            break
        bp = _blur_all(p, sig, psf)
        q = _blur_all_t(bp, sig, psf)
        alpha = rr / float(np.vdot(p, q))
        x += alpha * p
        r -= alpha * q
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def sweep_candidates(cam, n):
    """``n`` depths evenly spaced in inverse depth over the camera's range."""
    lo, hi = cam.depth_range
    inv = np.linspace(1.0 / lo, 1.0 / hi, n + 2)[1:-1]
    return 1.0 / inv


SWEEP_TIE_TOL = 1e-9


def sweep_init(stack, cam, psf=DEFAULT_PSF, candidates=48, cg_iterations=20):
    """Plane-sweep initialisation.

    For each candidate depth, fit the all-in-focus image to the whole stack by
    least squares under a fronto-parallel blur, then give each pixel the
    candidate with the smallest local reconstruction error.
    """
    obs = as_array(stack)
    if obs.shape[0] < 2:
        raise ConfigError(f"need at least 2 slices, got {obs.shape[0]}")
    shape = obs.shape[1:3]
    x0 = obs.mean(axis=0)
    best_err = np.full(shape, np.inf)
    best_depth = np.zeros(shape)
    best_aif = np.zeros_like(x0)
    for d in sweep_candidates(cam, candidates):
        sig = np.stack([np.full(shape, coc_sigma(d, cam, k)) for k in range(cam.num_focus)])
        x = _lsq_aif(obs, sig, psf, x0, cg_iterations)
        res = np.abs(_blur_all(x, sig, psf) - obs).sum(axis=0)
        if res.ndim == 3:
            res = res.mean(axis=2)
        err = _box_sum(res, SHARPNESS_WINDOW)
        # near-ties (e.g. texture-free regions) keep the earlier candidate
        better = err < best_err - SWEEP_TIE_TOL
        best_err[better] = err[better]
        best_depth[better] = d
        best_aif[better] = x[better]
    return DepthMap(best_depth, cam.depth_range), Image(np.clip(best_aif, 0.0, 1.0))


def initial_estimate(stack, cam, cfg, psf=DEFAULT_PSF):
    if cfg.init == "sweep":
        return sweep_init(stack, cam, psf, cfg.sweep_candidates, cfg.sweep_cg_iterations)
    return init_estimate(stack, cam)


# ------------------------------------------------------------------- step

def _check_finite(tl):
    for term, (gd, ga) in tl.term_grads.items():
        for g in (gd, ga):
            bad = np.argwhere(~np.isfinite(g))
            if len(bad):
                pix = tuple(int(i) for i in bad[0][:2])
                raise SolverFault(f"non-finite gradient in term {term!r} at pixel {pix}",
                                  term=term, pixel=pix)
    if not np.isfinite(tl.report.total):
        raise SolverFault("non-finite loss value", term="total")


def step(state, stack, cam, cfg=SolverConfig(), weights=LossWeights(), psf=DEFAULT_PSF):
    """One Adam update of ``state`` (in place); returns ``state``."""
    depth = state.decode_depth()
    aif = state.decode_aif()
    tl = evaluate_total(stack, depth, aif, cam, psf, weights)
    _check_finite(tl)

    lo, hi = state.depth_range
    sd = _sigmoid(state.depth_param)
    g_z = tl.grad_depth * (hi - lo) * sd * (1.0 - sd)
    g_a = tl.grad_aif * aif * (1.0 - aif)

    t = state.iteration + 1
    lr = cfg.lr_at(state.iteration)
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v, g in ((state.depth_param, state.m_depth, state.v_depth, g_z),
                       (state.aif_param, state.m_aif, state.v_aif, g_a)):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    state.iteration = t
    state.history.append(tl.report)
    return state


# ------------------------------------------------------------------ solve

@dataclass
class SolveResult:
    depth: DepthMap
    aif: Image
    history: list
    final: object  # LossReport at the returned estimate
    initial_depth: DepthMap
    initial_aif: Image
    state: SolveState
    converged: bool

    def __iter__(self):
        return iter((self.depth, self.aif, self.history))


def _texture_warning(stack, cam):
    obs = as_array(stack)
    energy = float(np.mean([np.var(laplacian(obs[k])) for k in range(obs.shape[0])]))
    if energy < 1e-8:
        log.warning("focal stack is nearly texture-free; depth is constrained only by smoothness")
    if cam.num_focus >= 2:
        rep = distinguishability_report(cam)
        if rep.min_gap <= 0:
            log.warning("focus schedule cannot separate depth %.3f m by blur", rep.worst_depth)


def solve(stack, cam, cfg=SolverConfig(), weights=LossWeights(), psf=DEFAULT_PSF, callback=None):
    """Optimise depth and AIF until the iteration budget or the relative
    loss change over ``cfg.tolerance_window`` iterations drops below
    ``cfg.tolerance``."""
    obs = as_array(stack)
    if obs.shape[0] != cam.num_focus:
        raise ShapeError(f"stack has {obs.shape[0]} slices, camera schedule has {cam.num_focus}")
    fds = getattr(stack, "focus_distances", None)
    if fds is not None and tuple(fds) != tuple(cam.focus_distances):
        raise ConfigError(f"stack focus distances {list(fds)} differ from camera {list(cam.focus_distances)}")
    _texture_warning(stack, cam)

    d0, a0 = initial_estimate(stack, cam, cfg, psf)
    state = SolveState.from_estimate(d0, a0, cam.depth_range)
    converged = False
    win = cfg.tolerance_window
    for _ in range(cfg.iterations):
        step(state, obs, cam, cfg, weights, psf)
        if callback is not None:
            callback(state)
        h = state.history
        if len(h) > win:
            prev, cur = h[-1 - win].total, h[-1].total
            if abs(cur - prev) <= cfg.tolerance * max(abs(prev), 1e-300):
                converged = True
                break
    depth = state.decode_depth()
    aif = state.decode_aif()
    final = evaluate_total(obs, depth, aif, cam, psf, weights).report
    return SolveResult(DepthMap(depth, cam.depth_range), Image(aif), state.history, final,
                       d0, a0, state, converged)


def add_noise(stack, noise_sigma, seed=0):
    """Stack with i.i.d. Gaussian noise added to each slice, clipped to [0, 1]."""
    if not noise_sigma >= 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    obs = as_array(stack)
    fds = getattr(stack, "focus_distances", None)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        obs = np.clip(obs + rng.normal(0.0, noise_sigma, obs.shape), 0.0, 1.0)
    return FocalStack(list(obs), fds) if fds is not None else obs


def solve_with_noise_protocol(stack, noise_sigma, cam, cfg=SolverConfig(), weights=LossWeights(),
                              psf=DEFAULT_PSF, seed=None):
    """Corrupt every slice with seeded Gaussian noise, then :func:`solve`."""
    seed = cfg.seed if seed is None else seed
    noisy = add_noise(stack, noise_sigma, seed)
    if not hasattr(noisy, "focus_distances"):
        noisy = FocalStack(list(noisy), cam.focus_distances)
    return solve(noisy, cam, cfg, weights, psf)


__all__ = [
    "SolverConfig", "SolveState", "SolveResult", "init_estimate", "step", "solve",
    "solve_with_noise_protocol", "add_noise", "dump_state", "load_state", "sharpness", "replace",
]

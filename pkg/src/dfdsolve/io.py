"""PNG / PFM image and depth I/O, JSON configs and focal-stack manifests.

PNG intensities map linearly to [0, 1] (8- or 16-bit). Depth PNGs are
16-bit millimetres. PFM holds float32 maps, stored bottom row first.
"""
from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import png

from .errors import ConfigError
from .fields import FocalStack, as_array


class ImageIOError(OSError):
    """A file could not be read or written; ``path`` names it."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


# ------------------------------------------------------------------ PNG

def read_png(path):
    """Image as float64 in [0, 1]: ``(H, W)`` for grey, ``(H, W, 3)`` for colour.

    Alpha is dropped; palette images are expanded.
    """
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        data = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    except (png.Error, OSError, ValueError) as exc:
        raise ImageIOError(path, f"cannot read PNG ({exc})") from exc
    planes = info["planes"]
    maxval = float(2 ** info["bitdepth"] - 1)
    data = data.reshape(h, w, planes) / maxval
    if info.get("alpha"):
        data = data[..., :-1]
    return data[..., 0] if data.shape[2] == 1 else data


def write_png(path, img, bitdepth=8):
    """Write intensities in [0, 1] (values are clipped) as 8- or 16-bit PNG."""
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    a = as_array(img)
    maxval = 2 ** bitdepth - 1
    q = np.round(np.clip(a, 0.0, 1.0) * maxval).astype(np.uint16 if bitdepth == 16 else np.uint8)
    _write_png_ints(path, q, bitdepth)


def _write_png_ints(path, q, bitdepth):
    h, w = q.shape[:2]
    grey = q.ndim == 2
    writer = png.Writer(w, h, greyscale=grey, bitdepth=bitdepth)
    rows = q.reshape(h, -1)
    try:
        with open(path, "wb") as fh:
            writer.write(fh, rows.tolist())
    except OSError as exc:
        raise ImageIOError(path, f"cannot write PNG ({exc})") from exc


def read_depth_png(path):
    """16-bit PNG in millimetres to meters."""
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        data = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    except (png.Error, OSError, ValueError) as exc:
        raise ImageIOError(path, f"cannot read PNG ({exc})") from exc
    if info["planes"] != 1:
        raise ImageIOError(path, "depth PNG must be single-channel")
    return data.reshape(h, w) / 1000.0


def write_depth_png(path, depth):
    """Meters to 16-bit millimetres (``round(d * 1000)``)."""
    d = as_array(depth)
    mm = np.round(d * 1000.0)
    if np.any(mm < 0) or np.any(mm > 65535) or not np.all(np.isfinite(mm)):
        raise ValueError("depth must lie in [0, 65.535] m for millimetre PNG")
    _write_png_ints(path, mm.astype(np.uint16), 16)


# ------------------------------------------------------------------ PFM

def write_pfm(path, arr):
    a = np.asarray(as_array(arr), dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) data, got {a.shape}")
    h, w = a.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
            fh.write(np.ascontiguousarray(a[::-1]).tobytes())
    except OSError as exc:
        raise ImageIOError(path, f"cannot write PFM ({exc})") from exc


_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path):
    """PFM to float64 array (top row first)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageIOError(path, f"cannot read PFM ({exc})") from exc
    m = _PFM_HEADER.match(raw)
    if not m:
        raise ImageIOError(path, "not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    c = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * c
    body = raw[m.end():]
    if len(body) < 4 * n:
        raise ImageIOError(path, f"truncated PFM: need {4 * n} bytes, found {len(body)}")
    a = np.frombuffer(body[:4 * n], dtype=dtype).astype(np.float64)
    a = a.reshape((h, w, c) if c == 3 else (h, w))[::-1]
    return np.ascontiguousarray(a)


def read_depth(path):
    """Depth map in meters from ``.pfm`` or millimetre ``.png``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".png":
        return read_depth_png(path)
    raise ImageIOError(path, "depth files must be .pfm or .png")


def read_image(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    return read_png(path)


# --------------------------------------------------------------- configs

def read_json(path, what="config"):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ImageIOError(path, f"cannot read {what} ({exc})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON in {what}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: {what} must be a JSON object")
    return data


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -------------------------------------------------------------- manifests

@dataclass
class StackManifest:
    scene_id: str
    slices: list  # (filename, focus distance in meters), relative to ``root``
    camera_preset: str | None = None
    truth_depth: str | None = None
    noise_sigma: float | None = None
    camera: dict | None = None
    root: Path = field(default=Path("."))

    def __post_init__(self):
        fds = [float(f) for _, f in self.slices]
        if len(fds) < 2:
            raise ConfigError(f"manifest {self.scene_id!r} lists {len(fds)} slices; need at least 2")
        if any(b <= a for a, b in zip(fds, fds[1:])):
            raise ConfigError(f"manifest {self.scene_id!r}: focus distances must be strictly increasing")

    @property
    def focus_distances(self):
        return tuple(float(f) for _, f in self.slices)

    def to_dict(self):
        d = {
            "scene_id": self.scene_id,
            "slices": [{"file": fn, "focus_distance": float(f)} for fn, f in self.slices],
        }
        for key in ("camera_preset", "truth_depth", "noise_sigma", "camera"):
            v = getattr(self, key)
            if v is not None:
                d[key] = v
        return d

    def write(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path, check_files=True):
        path = Path(path)
        d = read_json(path, "manifest")
        try:
            slices = [(str(s["file"]), float(s["focus_distance"])) for s in d["slices"]]
            m = cls(
                scene_id=str(d.get("scene_id", path.parent.name)),
                slices=slices,
                camera_preset=d.get("camera_preset"),
                truth_depth=d.get("truth_depth"),
                noise_sigma=None if d.get("noise_sigma") is None else float(d["noise_sigma"]),
                camera=d.get("camera"),
                root=path.parent,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: malformed manifest ({exc!r})") from exc
        if check_files:
            for fn, _ in m.slices:
                if not (m.root / fn).is_file():
                    raise ImageIOError(m.root / fn, "slice file listed in manifest is missing")
        return m

    def load_stack(self):
        imgs = [read_image(self.root / fn) for fn, _ in self.slices]
        return FocalStack(imgs, self.focus_distances)

    def truth_path(self):
        return None if self.truth_depth is None else self.root / self.truth_depth


def eprint(*args):
    print(*args, file=sys.stderr)

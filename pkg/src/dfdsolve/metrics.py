"""Depth accuracy metrics (threshold accuracy, RMSE, AbsRel) and CSV export."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ShapeError
from .fields import as_array

CSV_COLUMNS = ("scene_id", "delta1", "delta2", "delta3", "rmse", "absrel", "valid_pixels", "cap")


@dataclass(frozen=True)
class DepthMetrics:
    delta1: float
    delta2: float
    delta3: float
    rmse: float
    absrel: float
    valid_pixel_count: int
    scene_id: str = ""
    cap: float | None = None


def evaluate(pred, truth, mask=None, cap=None, scene_id=""):
    """Compare predicted and true depth over valid pixels.

    A pixel is valid where ``mask`` is true (if given), the truth is
    positive, and the truth is below ``cap`` (if given). Threshold accuracy
    uses a strict ``<`` against 1.25**i.
    """
    p = as_array(pred)
    t = as_array(truth)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and truth {t.shape} differ in shape")
    valid = np.isfinite(t) & (t > 0) & np.isfinite(p)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != t.shape:
            raise ShapeError(f"mask {m.shape} does not match depth {t.shape}")
        valid &= m
    if cap is not None:
        valid &= t < cap
    n = int(valid.sum())
    if n == 0:
        raise EvaluationError("no valid pixels to evaluate")
    p, t = p[valid], t[valid]
    if np.any(p <= 0):
        raise EvaluationError("predicted depth must be positive on valid pixels")
    ratio = np.maximum(p / t, t / p)
    d1, d2, d3 = (float(np.mean(ratio < 1.25 ** i)) for i in (1, 2, 3))
    rmse = float(np.sqrt(np.mean((p - t) ** 2)))
    absrel = float(np.mean(np.abs(p - t) / t))
    return DepthMetrics(d1, d2, d3, rmse, absrel, n, scene_id, None if cap is None else float(cap))


def report_csv(metrics, path):
    """Write one header row plus one row per :class:`DepthMetrics`."""
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for m in metrics:
                wr.writerow([m.scene_id, repr(m.delta1), repr(m.delta2), repr(m.delta3),
                             repr(m.rmse), repr(m.absrel), m.valid_pixel_count,
                             "" if m.cap is None else repr(m.cap)])
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {path}: {exc}") from exc
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        DepthMetrics(float(r["delta1"]), float(r["delta2"]), float(r["delta3"]),
                     float(r["rmse"]), float(r["absrel"]), int(r["valid_pixels"]),
                     r["scene_id"], float(r["cap"]) if r["cap"] else None)
        for r in rows
    ]

"""Command-line entry point: ``dfdsolve {render,solve,eval,curves}``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 solver fault.
Failures print a one-line JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, ShapeError, SolverFault, EvaluationError
from .fields import DepthMap, Image, validate
from .io import (ImageIOError, StackManifest, read_depth, read_image, read_json, read_png,
                 write_json, write_pfm, write_png)
from .losses import CSV_COLUMNS as LOSS_COLUMNS, LossWeights
from .metrics import evaluate, report_csv
from .optics import CameraIntrinsics, coc_sigma, depth_grid, preset
from .psf import render_stack
from .solver import SolverConfig, add_noise, dump_state, solve

log = logging.getLogger("dfdsolve")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, kind, message, path=None):
        super().__init__(message)
        self.code, self.kind, self.path = code, kind, path

    def payload(self):
        d = {"error": self.kind, "message": str(self)}
        if self.path is not None:
            d["path"] = str(self.path)
        return d


def _config_hash(*dicts):
    blob = json.dumps(dicts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _resolve_camera(source, fallback_preset=None, fallback_dict=None):
    if source:
        p = Path(source)
        if p.is_file():
            return CameraIntrinsics.from_dict(read_json(p, "camera config")), str(p)
        return preset(source), source
    if fallback_dict:
        return CameraIntrinsics.from_dict(fallback_dict), "manifest"
    if fallback_preset:
        return preset(fallback_preset), fallback_preset
    raise ConfigError("no camera given: pass --camera or name a preset in the manifest")


# ----------------------------------------------------------------- render

def _scene_pairs(input_dir):
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise ImageIOError(input_dir, "input directory does not exist")
    pairs = []
    for rgb in sorted(input_dir.glob("*_rgb.png")):
        sid = rgb.name[: -len("_rgb.png")]
        depth = next((input_dir / f"{sid}_depth{ext}" for ext in (".pfm", ".png")
                      if (input_dir / f"{sid}_depth{ext}").is_file()), None)
        pairs.append((sid, rgb, depth))
    return pairs


def render_scene(sid, rgb_path, depth_path, cam, cam_name, out_dir, noise_sigma, seed):
    """Render one RGB-D pair into ``out_dir/sid``; returns the manifest path."""
    if depth_path is None:
        raise ImageIOError(rgb_path, f"no depth file for scene {sid!r}")
    aif = read_png(rgb_path)
    depth = read_depth(depth_path)
    if depth.shape != aif.shape[:2]:
        raise ShapeError(f"{depth_path}: depth {depth.shape} misaligned with image {aif.shape[:2]}")
    v = validate(Image(aif))
    if v is not None:
        raise DomainError(f"{rgb_path}: {v}")
    v = validate(DepthMap(depth), cam)
    if v is not None:
        raise DomainError(f"{depth_path}: {v}")

    stack = render_stack(aif, depth, cam)
    scene_seed = [int(seed), zlib.crc32(sid.encode())]
    data = add_noise(stack, noise_sigma, scene_seed).data if noise_sigma > 0 else stack.data

    sdir = Path(out_dir) / sid
    sdir.mkdir(parents=True, exist_ok=True)
    slices = []
    for k, (img, F) in enumerate(zip(data, cam.focus_distances)):
        name = f"slice_{k:02d}.png"
        write_png(sdir / name, img, bitdepth=16)
        slices.append((name, F))
    truth_name = "depth_truth" + depth_path.suffix.lower()
    shutil.copyfile(depth_path, sdir / truth_name)
    manifest = StackManifest(sid, slices, camera_preset=cam_name, truth_depth=truth_name,
                             noise_sigma=float(noise_sigma), camera=cam.to_dict())
    manifest.write(sdir / "manifest.json")
    write_json(sdir / "provenance.json", {
        "command": "render", "version": __version__, "preset": cam_name, "seed": int(seed),
        "noise_sigma": float(noise_sigma), "config_hash": _config_hash(cam.to_dict()),
        "source": {"image": rgb_path.name, "depth": depth_path.name},
    })
    return sdir / "manifest.json"


def render_dataset(input_dir, cam_name, out_dir, noise_sigma=0.0, seed=0):
    """Render every ``<id>_rgb.png`` + ``<id>_depth.{pfm,png}`` pair.

    Scenes that fail are reported and skipped. Returns ``(manifests, failures)``.
    """
    cam, cam_name = _resolve_camera(cam_name)
    if noise_sigma < 0:
        raise ConfigError("--noise-sigma must be >= 0")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    manifests, failures = [], []
    for sid, rgb, depth in _scene_pairs(input_dir):
        try:
            manifests.append(render_scene(sid, rgb, depth, cam, cam_name, out_dir, noise_sigma, seed))
        except (ImageIOError, ShapeError, DomainError, ValueError) as exc:
            log.error("scene %s skipped: %s", sid, exc)
            failures.append({"scene_id": sid, "message": str(exc)})
    return manifests, failures


def cmd_render(args):
    manifests, failures = render_dataset(args.input, args.preset, args.out, args.noise_sigma, args.seed)
    print(json.dumps({"rendered": [str(m) for m in manifests], "failed": failures}))
    if failures:
        raise CliError(EXIT_IO, "scene_failures", f"{len(failures)} scene(s) failed", args.input)
    return EXIT_OK


# ------------------------------------------------------------------ solve

def solve_command(manifest_path, out_dir, camera=None, solver_path=None, weights_path=None,
                  checkpoint=False):
    manifest = StackManifest.load(manifest_path)
    cam, cam_name = _resolve_camera(camera, manifest.camera_preset, manifest.camera)
    if tuple(cam.focus_distances) != manifest.focus_distances:
        log.warning("camera focus schedule %s replaced by manifest schedule %s",
                    list(cam.focus_distances), list(manifest.focus_distances))
        cam = cam.with_focus_distances(manifest.focus_distances)
    cfg = SolverConfig.from_dict(read_json(solver_path, "solver config")) if solver_path else SolverConfig()
    weights = LossWeights.from_dict(read_json(weights_path, "loss weights")) if weights_path else LossWeights()
    stack = manifest.load_stack()
    v = validate(stack)
    if v is not None:
        raise DomainError(f"{manifest_path}: {v}")

    result = solve(stack, cam, cfg, weights)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "depth.pfm", result.depth)
    write_png(out / "aif.png", result.aif, bitdepth=16)
    with open(out / "loss.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LOSS_COLUMNS)
        for i, rep in enumerate(result.history):
            wr.writerow([repr(v) if isinstance(v, float) else v for v in rep.row(i)])
    if checkpoint:
        dump_state(result.state, out / "state.ckpt", num_focus=cam.num_focus)

    metrics = None
    truth = manifest.truth_path()
    if truth is not None and truth.is_file():
        t = read_depth(truth)
        metrics = evaluate(result.depth, t, scene_id=manifest.scene_id)
        report_csv([metrics], out / "metrics.csv")
    else:
        log.warning("manifest %s has no truth depth; metrics skipped", manifest_path)

    write_json(out / "provenance.json", {
        "command": "solve", "version": __version__, "preset": cam_name, "seed": cfg.seed,
        "scene_id": manifest.scene_id,
        "config_hash": _config_hash(cam.to_dict(), cfg.to_dict(), weights.to_dict(), manifest.to_dict()),
        "iterations_run": len(result.history), "converged": result.converged,
    })
    return result, metrics


def cmd_solve(args):
    result, metrics = solve_command(args.manifest, args.out, args.camera, args.solver,
                                    args.weights, args.checkpoint)
    summary = {"out": str(args.out), "iterations": len(result.history),
               "final_total": result.final.total, "final_recon": result.final.recon}
    if metrics is not None:
        summary["metrics"] = {k: getattr(metrics, k) for k in ("delta1", "delta2", "delta3", "rmse", "absrel")}
    print(json.dumps(summary))
    return EXIT_OK


# ------------------------------------------------------------------- eval

def cmd_eval(args):
    pred = read_depth(args.pred)
    truth = read_depth(args.truth)
    mask = None
    if args.mask:
        m = read_image(args.mask)
        mask = (m if m.ndim == 2 else m.mean(axis=2)) > 0
    metrics = evaluate(pred, truth, mask=mask, cap=args.cap, scene_id=Path(args.pred).stem)
    if args.csv:
        report_csv([metrics], args.csv)
    summary = {k: getattr(metrics, k) for k in
               ("delta1", "delta2", "delta3", "rmse", "absrel", "valid_pixel_count")}
    summary.update(masked=mask is not None, cap=args.cap)
    print(json.dumps(summary))
    return EXIT_OK


# ----------------------------------------------------------------- curves

def curves_table(cam, resolution=0.01):
    depths = depth_grid(cam, resolution)
    cols = [coc_sigma(depths, cam, k) for k in range(cam.num_focus)]
    return depths, np.stack(cols, axis=1)


def cmd_curves(args):
    cam, _ = _resolve_camera(args.preset)
    depths, sig = curves_table(cam)
    try:
        with open(args.out, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["depth"] + [f"sigma_F{k + 1}" for k in range(cam.num_focus)])
            for d, row in zip(depths, sig):
                wr.writerow([repr(float(d))] + [repr(float(s)) for s in row])
    except OSError as exc:
        raise ImageIOError(args.out, f"cannot write curves CSV ({exc})") from exc
    print(json.dumps({"out": str(args.out), "rows": len(depths)}))
    return EXIT_OK


# ------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="dfdsolve", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render focal stacks from RGB-D pairs")
    r.add_argument("--input", required=True, help="directory of <id>_rgb.png + <id>_depth.{pfm,png}")
    r.add_argument("--preset", default="nyuv2", help="camera preset name or camera JSON")
    r.add_argument("--out", required=True)
    r.add_argument("--noise-sigma", type=float, default=0.0)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("solve", help="recover depth and AIF from a stack manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--camera", help="camera JSON or preset name (default: from manifest)")
    s.add_argument("--solver", help="solver config JSON")
    s.add_argument("--weights", help="loss weights JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint", action="store_true", help="also write the final solver state")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="depth metrics of a prediction against truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--cap", type=float)
    e.add_argument("--mask")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("curves", help="tabulate blur radius against depth")
    c.add_argument("--preset", default="nyuv2")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curves)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        err = exc
    except ConfigError as exc:
        err = CliError(EXIT_CONFIG, "config", str(exc))
    except ImageIOError as exc:
        err = CliError(EXIT_IO, "io", str(exc), exc.path)
    except OSError as exc:
        err = CliError(EXIT_IO, "io", str(exc), getattr(exc, "filename", None))
    except SolverFault as exc:
        err = CliError(EXIT_SOLVER, "solver", str(exc))
        err.path = None
    except (DomainError, ShapeError, EvaluationError) as exc:
        err = CliError(EXIT_CONFIG, "invalid_input", str(exc))
    print(json.dumps(err.payload()), file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())

"""Thin-lens defocus rendering and self-supervised recovery of depth and an
all-in-focus image from a sparse focal stack."""

__version__ = "0.1.0"

from ._accel import BACKEND
from .errors import ConfigError, DomainError, EvaluationError, ShapeError, SolverFault
from .fields import DefocusMap, DepthMap, FocalStack, Image, validate
from .losses import LossReport, LossWeights, total_loss
from .metrics import DepthMetrics, evaluate
from .optics import CameraIntrinsics, coc_sigma, defocus_map, dsigma_ddepth, preset
from .psf import PsfConfig, render_defocus, render_stack
from .solver import SolverConfig, SolveState, solve, solve_with_noise_protocol

__all__ = [
    "BACKEND", "CameraIntrinsics", "ConfigError", "DefocusMap", "DepthMap", "DepthMetrics",
    "DomainError", "EvaluationError", "FocalStack", "Image", "LossReport", "LossWeights",
    "PsfConfig", "ShapeError", "SolveState", "SolverConfig", "SolverFault", "coc_sigma",
    "defocus_map", "dsigma_ddepth", "evaluate", "preset", "render_defocus", "render_stack",
    "solve", "solve_with_noise_protocol", "total_loss", "validate",
]

"""Segmentation-free multi-body feature tracking.

A robust L1 KLT tracker regularized by epipolar subspace
self-expressiveness, solved with a five-block ADMM whose subproblems all
have closed-form solutions, plus frame-by-frame motion segmentation from
the learned coefficient matrix.
"""

from .admm import AdmmParams, AdmmState, run_admm
from .imaging import GrayImage, Pyramid, build_pyramid, gradient, load_image
from .linearize import FeatureSet, LinearizedModel, linearize, residual_map
from .epipolar import EpipolarEmbedding, embed_point, subspace_rank
from .tracker import TrackerConfig, TrackResult, track_frame, track_sequence
from .segmentation import affinity_from_C, segmentation_error, spectral_cluster
from .synthlab import make_preset, render_scene

__version__ = "0.1.0"

__all__ = [
    "AdmmParams",
    "AdmmState",
    "EpipolarEmbedding",
    "FeatureSet",
    "GrayImage",
    "LinearizedModel",
    "Pyramid",
    "TrackResult",
    "TrackerConfig",
    "affinity_from_C",
    "build_pyramid",
    "embed_point",
    "gradient",
    "linearize",
    "load_image",
    "make_preset",
    "render_scene",
    "residual_map",
    "run_admm",
    "segmentation_error",
    "spectral_cluster",
    "subspace_rank",
    "track_frame",
    "track_sequence",
    "__version__",
]

"""Streaming RGB-D semantic mapping with per-segment class-probability fusion."""

from .core import CameraIntrinsics, Pose, backproject, project
from .mapping import SurfelMap
from .pipeline import Pipeline, PipelineConfig, run_pipeline
from .semfusion import LabelTable

__all__ = [
    "CameraIntrinsics",
    "LabelTable",
    "Pipeline",
    "PipelineConfig",
    "Pose",
    "SurfelMap",
    "backproject",
    "project",
    "run_pipeline",
]
__version__ = "0.1.0"

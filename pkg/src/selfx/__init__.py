"""Video super-resolution from long-term cross-scale self-exemplars."""
from .frames import Frame, ScaleSequence, band_limit, resample_bicubic
from .pipeline import PipelineConfig, RunReport, run, super_resolve_frame
from .store import FrameStore
from .synthetic import generate_synthetic

__version__ = "0.1.0"

__all__ = ["Frame", "FrameStore", "PipelineConfig", "RunReport", "ScaleSequence", "band_limit",
           "generate_synthetic", "resample_bicubic", "run", "super_resolve_frame"]

"""Semi-automatic semantic annotation toolkit for urban triangle meshes."""

__version__ = "0.1.0"

from .errors import (PipelineStageError, PlyParseError, SessionLockError,
                     SidecarError)
from .evaluate import accumulate, evaluate_upper_bound, report
from .features import FEATURE_NAMES, featurize_segments
from .forest import ForestParams, load_model, save_model, train
from .mesh import (CLASS_NAMES, REAL_CLASSES, TriangleMesh,
                   attach_texel_samples, make_mesh, parse_ply, write_ply)
from .sampler import sample_mesh
from .segmentation import SegmentationParams, SegmentSet, oversegment
from .workflow import PipelineConfig, run_pipeline

__all__ = [
    "TriangleMesh", "parse_ply", "write_ply", "attach_texel_samples",
    "make_mesh", "CLASS_NAMES", "REAL_CLASSES",
    "SegmentationParams", "SegmentSet", "oversegment",
    "FEATURE_NAMES", "featurize_segments",
    "ForestParams", "train", "save_model", "load_model",
    "accumulate", "report", "evaluate_upper_bound",
    "sample_mesh", "PipelineConfig", "run_pipeline",
    "PlyParseError", "SidecarError", "SessionLockError", "PipelineStageError",
]

"""Sequence-based visual place recognition over low-resolution,
patch-normalized images."""

from .blur import BlurSpec, expected_lag, temporal_blur
from .estimators import SequenceMatcher, TemplateTransformer, TemporalBlur
from .evaluate import (
    EvalReport,
    GroundTruth,
    RankingDistribution,
    ranking_analysis,
    score_matches,
    sweep_threshold,
)
from .imaging import (
    CropRect,
    crop,
    downsample,
    load_frames,
    patch_normalize,
    preprocess_frame,
    to_grayscale,
    write_frames,
)
from .matching import (
    DifferenceMatrix,
    TemplateStore,
    difference_vector,
    neighborhood_normalize,
    sad_difference,
)
from .sequence import (
    NotReadyError,
    SequenceMatch,
    SlopeConfig,
    best_match,
    trajectory_score,
)

__version__ = "0.1.0"

__all__ = [
    "BlurSpec",
    "CropRect",
    "DifferenceMatrix",
    "EvalReport",
    "GroundTruth",
    "NotReadyError",
    "RankingDistribution",
    "SequenceMatch",
    "SequenceMatcher",
    "SlopeConfig",
    "TemplateStore",
    "TemplateTransformer",
    "TemporalBlur",
    "best_match",
    "crop",
    "difference_vector",
    "downsample",
    "expected_lag",
    "load_frames",
    "neighborhood_normalize",
    "patch_normalize",
    "preprocess_frame",
    "ranking_analysis",
    "sad_difference",
    "score_matches",
    "sweep_threshold",
    "temporal_blur",
    "to_grayscale",
    "trajectory_score",
    "write_frames",
    "__version__",
]

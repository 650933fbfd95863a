"""Clip curation (scene cuts, quality filter, validator) and dataset I/O."""

from .dataset import CorruptRecord, DatasetError, DatasetRecord, read_dataset, read_keypoints, write_dataset, write_keypoints
from .postprocess import PostprocessConfig, postprocess_clip
from .quality import ClipQualityStats, QualityConfig, QualityThresholds, compute_quality_stats, failed_checks, passes_quality
from .scenes import SceneCutConfig, Segment, detect_scene_cuts
from .validator import ClipRejected, HttpValidatorClient, RetryPolicy, ValidatorVerdict, vlm_validate

__all__ = [
    "ClipQualityStats",
    "ClipRejected",
    "CorruptRecord",
    "DatasetError",
    "DatasetRecord",
    "HttpValidatorClient",
    "PostprocessConfig",
    "QualityConfig",
    "QualityThresholds",
    "RetryPolicy",
    "SceneCutConfig",
    "Segment",
    "ValidatorVerdict",
    "compute_quality_stats",
    "detect_scene_cuts",
    "failed_checks",
    "passes_quality",
    "postprocess_clip",
    "read_dataset",
    "read_keypoints",
    "vlm_validate",
    "write_dataset",
    "write_keypoints",
]

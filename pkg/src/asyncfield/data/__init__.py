"""Datasets: records, synthetic generation, file format and annotations."""
from .annotations import (ActivityInterval, AnnotationError, frame_activity, parse_annotations,
                          progress_labels)
from .records import UNLABELED, Dataset, VideoRecord
from .sampling import rows_of, sample_equidistant
from .synthetic import GeneratorConfig, generate_synthetic

__all__ = [
    "ActivityInterval",
    "AnnotationError",
    "Dataset",
    "GeneratorConfig",
    "UNLABELED",
    "VideoRecord",
    "frame_activity",
    "generate_synthetic",
    "parse_annotations",
    "progress_labels",
    "rows_of",
    "sample_equidistant",
]

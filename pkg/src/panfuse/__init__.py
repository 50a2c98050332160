"""Panoptic fusion of semantic and instance predictions, with PQ evaluation."""

from .core import (
    BoundingBox,
    CapacityError,
    ClassCatalog,
    ClassInfo,
    ClassKind,
    ConfigurationError,
    FormatError,
    InstanceDetection,
    InstanceSet,
    PanfuseError,
    PanopticMap,
    Segment,
    SemanticScoreMap,
    ValidationError,
    argmax_map,
    decode_segment_id,
    encode_segment_id,
    normalize_scores,
)
from .fusion import FusionConfig, fuse
from .metrics import MetricsReport, PqStats, accumulate, merge_stats, report

__version__ = "0.1.0"

"""Common-interest scoring pipeline for liked-image collections."""

from .errors import ConfigError, DataError, FormatError, PipelineError
from .model import (
    GROUP_COMM,
    GROUP_INTER,
    GROUP_SUBJ,
    GROUPS,
    AttributeTable,
    CiRegressor,
    EmbeddingRecord,
    GroupAssignment,
    LikesIndex,
    MergeEvent,
    Partition,
    PartitionModel,
    PipelineConfig,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeTable",
    "CiRegressor",
    "ConfigError",
    "DataError",
    "EmbeddingRecord",
    "FormatError",
    "GROUPS",
    "GROUP_COMM",
    "GROUP_INTER",
    "GROUP_SUBJ",
    "GroupAssignment",
    "LikesIndex",
    "MergeEvent",
    "Partition",
    "PartitionModel",
    "PipelineConfig",
    "PipelineError",
    "__version__",
]

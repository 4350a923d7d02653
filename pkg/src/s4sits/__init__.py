"""Multi-modal self-supervised pre-training for satellite image time series segmentation."""
from .sits_core import (
    IGNORE_INDEX,
    AlignedPair,
    Modality,
    ModalitySeries,
    NormalizationStats,
    SitsPair,
    cloud_cover_ratio,
    fit_normalization,
    nearest_timestamp_align,
    normalize,
)

__version__ = "0.1.0"

__all__ = [
    "IGNORE_INDEX",
    "AlignedPair",
    "Modality",
    "ModalitySeries",
    "NormalizationStats",
    "SitsPair",
    "cloud_cover_ratio",
    "fit_normalization",
    "nearest_timestamp_align",
    "normalize",
]

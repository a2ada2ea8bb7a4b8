"""Feature-map exporter feeding the msvlad retrieval pipeline."""

from .backbone import CHANNELS, STRIDE, TAP_POINTS, Vgg16Backbone
from .export import (
    DEFAULT_RESOLUTIONS,
    ExportConfig,
    ExportResult,
    ImageSpec,
    export,
    load_image_list,
)

__version__ = "0.1.0"

__all__ = [
    "CHANNELS",
    "DEFAULT_RESOLUTIONS",
    "ExportConfig",
    "ExportResult",
    "ImageSpec",
    "STRIDE",
    "TAP_POINTS",
    "Vgg16Backbone",
    "export",
    "load_image_list",
]

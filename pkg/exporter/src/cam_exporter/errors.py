class ExporterError(Exception):
    """Base class for exporter errors."""


class ModelLoadFailure(ExporterError):
    """Model weights file missing, unreadable, or structurally invalid."""


class ImageDecodeFailure(ExporterError):
    """Input image could not be read or decoded."""

"""Image-directory to CIEM embedding exporter."""

from .export import ExportError, export

__version__ = "0.1.0"

__all__ = ["ExportError", "export", "__version__"]

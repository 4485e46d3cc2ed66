"""tdpe-export: one-shot transformer vocabulary/embedding exporter."""

__version__ = "0.1.0"

from .export import ExportError, ExportSpec, ModelUnavailableError, export

__all__ = ["ExportError", "ExportSpec", "ModelUnavailableError", "export"]

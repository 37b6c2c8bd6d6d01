"""Thin TableVault client: the repository API over the tablevault CLI."""

__version__ = "0.1.0"

from .client import TableVault, dataframe_to_schema, frame_doc_to_dataframe
from .errors import Busy, NotFound, Reverted, SdkError, ValidationError

__all__ = [
    "Busy",
    "NotFound",
    "Reverted",
    "SdkError",
    "TableVault",
    "ValidationError",
    "__version__",
    "dataframe_to_schema",
    "frame_doc_to_dataframe",
]

"""TableVault: a filesystem-backed metadata governance vault.

Every dataframe, artifact, builder configuration and operation execution
is versioned, lineage-linked and recorded, with database-grade atomicity
around all mutations.
"""

__version__ = "0.1.0"

from . import errors
from .builders import (
    BuilderSpec,
    ExecutorRegistry,
    default_registry,
    execute_instance,
    invoke_subprocess,
    load_builder,
    register_builtin,
)
from .layout import RepoConfig
from .refparse import classify, extract_dependencies, parse, resolve, to_string
from .repository import ArchiveReceipt, Repository, TableHandle, init_repository
from .tabular import TabularData

__all__ = [
    "ArchiveReceipt",
    "BuilderSpec",
    "ExecutorRegistry",
    "RepoConfig",
    "Repository",
    "TableHandle",
    "TabularData",
    "__version__",
    "classify",
    "default_registry",
    "errors",
    "execute_instance",
    "extract_dependencies",
    "init_repository",
    "invoke_subprocess",
    "load_builder",
    "parse",
    "register_builtin",
    "resolve",
    "to_string",
]

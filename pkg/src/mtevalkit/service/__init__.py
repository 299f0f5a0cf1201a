from .core import AnnotationService
from .storage import MemoryStorage, SqliteStorage, Storage

__all__ = ["AnnotationService", "MemoryStorage", "SqliteStorage", "Storage"]

"""Fixed-size object pool with constant-time allocation and ordered traversal."""

from .bin import Bin, StatusWord, slot_footprint
from .errors import AllocatorError, BinFullError, PoolMemoryError, SizeError, UsageError
from .pool import Cursor, CursorRange, Handle, Pool
from .sync import RWLock, SharedPool

__all__ = [
    "AllocatorError", "Bin", "BinFullError", "Cursor", "CursorRange", "Handle", "Pool",
    "PoolMemoryError", "RWLock", "SharedPool", "SizeError", "StatusWord", "UsageError",
    "slot_footprint",
]
__version__ = "0.1.0"

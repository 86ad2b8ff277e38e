"""Exception types raised by the allocator."""


class AllocatorError(Exception):
    """Base class for allocator errors."""


class UsageError(AllocatorError):
    """The caller broke a precondition: double free, stale handle, pseudo slot..."""


class BinFullError(AllocatorError):
    """The bin has no free slot left; allocate from another bin."""


class SizeError(AllocatorError, ValueError):
    """A bin capacity outside the 31-bit index range."""


class PoolMemoryError(AllocatorError, MemoryError):
    """Storage for a new bin could not be reserved."""

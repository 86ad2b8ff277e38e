"""A single bin of fixed-size slots.

Layout for a bin of capacity ``c`` (``c + 4`` slots)::

    0        assigned pseudo slot
    1        free pseudo slot (never in the free-list)
    2..c+1   user slots
    c+2      free pseudo slot (never in the free-list)
    c+3      assigned pseudo slot

A free slot's overlay holds two links: the index of the next assigned slot
above it and of the previous assigned slot below it. Only free slots that
border an assigned slot need correct links; a run of free slots is skipped
in one hop by reading the link of its boundary slot.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import BinFullError, PoolMemoryError, SizeError, UsageError

FREE_FLAG = K.FREE_FLAG
END = K.END
MAX_CAPACITY = K.MAX_CAPACITY
LINK_WIDTH = 8
STATUS_WIDTH = 4
OVERLAY_ALIGN = 8


class StatusWord(NamedTuple):
    raw: int

    @property
    def free(self) -> bool:
        return bool(self.raw & FREE_FLAG)

    @property
    def next_free_index(self) -> int:
        """Free-list link; meaningless for assigned slots."""
        return self.raw & K.INDEX_MASK


class Links(NamedTuple):
    next_assigned: int
    prev_assigned: int


def overlay_size(payload_size: int, link_width: int = LINK_WIDTH) -> int:
    """Bytes of the payload/link overlay, padded to the overlay alignment."""
    size = max(payload_size, 2 * link_width)
    align = max(link_width, OVERLAY_ALIGN)
    return -(-size // align) * align


def slot_footprint(payload_size: int, link_width: int = LINK_WIDTH) -> int:
    """Bytes per slot, alignment padding included.

    >>> slot_footprint(24), slot_footprint(16), slot_footprint(4)
    (28, 20, 20)
    """
    return overlay_size(payload_size, link_width) + STATUS_WIDTH


def check_geometry(capacity: int, payload_size: int) -> None:
    if not isinstance(capacity, (int, np.integer)) or isinstance(capacity, bool):
        raise TypeError(f"capacity must be an integer, got {type(capacity).__name__}")
    if not 1 <= capacity <= MAX_CAPACITY:
        raise SizeError(f"capacity must be in [1, {MAX_CAPACITY}], got {capacity}")
    if not isinstance(payload_size, (int, np.integer)) or payload_size < 1:
        raise ValueError(f"payload_size must be a positive integer, got {payload_size!r}")


class Bin:
    """``capacity`` user slots of ``payload_size`` bytes plus four pseudo slots.

    Not thread-safe: at most one mutating call at a time, and stepping must
    not overlap mutation. :class:`travalloc.sync.SharedPool` adds locking.
    """

    __slots__ = (
        "id", "capacity", "payload_size", "words", "status", "overlay", "meta",
        "kernels", "next", "prev", "_payload",
    )

    def __init__(self, capacity: int, payload_size: int, *, bin_id: int = 0,
                 kernels: K.Kernels | None = None):
        check_geometry(capacity, payload_size)
        self.id = bin_id
        self.capacity = int(capacity)
        self.payload_size = int(payload_size)
        self.words = overlay_size(self.payload_size) // 8
        try:
            self.status, self.overlay, self.meta = K.empty_arrays(self.capacity, self.words)
        except MemoryError as exc:
            raise PoolMemoryError(f"cannot reserve a bin of {capacity} slots") from exc
        K.init_bin(self.status, self.overlay, self.meta, self.capacity)
        self.kernels = kernels if kernels is not None else K.kernels()
        # neighbours in the owning pool's bin list
        self.next: Bin | None = None
        self.prev: Bin | None = None
        self._payload = None

    def __repr__(self) -> str:
        return (f"Bin(id={self.id}, capacity={self.capacity}, "
                f"live={self.live_count}, payload_size={self.payload_size})")

    @property
    def size(self) -> int:
        """Number of slots including the four pseudo slots."""
        return self.capacity + 4

    @property
    def last(self) -> int:
        """Index of the trailing (assigned) pseudo slot."""
        return self.capacity + 3

    @property
    def free_head(self) -> int:
        return int(self.meta[K.M_FREE_HEAD])

    @property
    def live_count(self) -> int:
        return int(self.meta[K.M_LIVE])

    @property
    def last_op_writes(self) -> int:
        return int(self.meta[K.M_LAST_WRITES])

    @property
    def last_op_reads(self) -> int:
        return int(self.meta[K.M_LAST_READS])

    def is_full(self) -> bool:
        return self.meta[K.M_FREE_HEAD] == END

    def is_empty(self) -> bool:
        return self.meta[K.M_LIVE] == 0

    def is_assigned(self, i: int) -> bool:
        return not self.status[i] & FREE_FLAG

    def is_user_slot(self, i: int) -> bool:
        return 2 <= i <= self.capacity + 1

    def status_word(self, i: int) -> StatusWord:
        return StatusWord(int(self.status[i]))

    def links(self, i: int) -> Links:
        """Raw link pair of slot ``i``; only meaningful while it is free."""
        return Links(int(self.overlay[i, K.NEXT]), int(self.overlay[i, K.PREV]))

    def set_links(self, i: int, next_assigned: int, prev_assigned: int) -> None:
        # for building corrupted states in tests
        self.overlay[i, K.NEXT] = next_assigned
        self.overlay[i, K.PREV] = prev_assigned

    def allocate(self) -> int:
        i = self.kernels.allocate(self.status, self.overlay, self.meta)
        if i < 0:
            raise BinFullError(f"bin {self.id} is full")
        return i

    def deallocate(self, i: int) -> None:
        code = self.kernels.deallocate(self.status, self.overlay, self.meta, i)
        if code:
            raise UsageError(_DEALLOC_ERRORS[code].format(i=i, bin=self.id))

    def next_assigned(self, i: int) -> int:
        """Smallest assigned index above assigned slot ``i``; ``last`` at the end."""
        if not 0 <= i < self.last or not self.is_assigned(i):
            raise UsageError(f"next_assigned needs an assigned slot below {self.last}, got {i}")
        return K.next_assigned(self.status, self.overlay, i)

    def prev_assigned(self, i: int) -> int:
        """Largest assigned index below assigned slot ``i``; 0 at the start."""
        if not 0 < i <= self.last or not self.is_assigned(i):
            raise UsageError(f"prev_assigned needs an assigned slot above 0, got {i}")
        return K.prev_assigned(self.status, self.overlay, i)

    def assigned(self) -> np.ndarray:
        """Assigned user-slot indices in ascending order, found by traversal."""
        out = np.empty(self.capacity, dtype=np.int64)
        n = K.walk(self.status, self.overlay, out)
        if n < 0:
            raise UsageError(f"bin {self.id}: traversal links are corrupt")
        return out[:n]

    def assigned_reversed(self) -> np.ndarray:
        out = np.empty(self.capacity, dtype=np.int64)
        n = K.walk_back(self.status, self.overlay, out)
        if n < 0:
            raise UsageError(f"bin {self.id}: traversal links are corrupt")
        return out[:n]

    @property
    def payload(self) -> np.ndarray:
        """``(capacity + 4, payload_size)`` uint8 view over the overlay."""
        if self._payload is None:
            raw = self.overlay.view(np.uint8)
            self._payload = raw[:, : self.payload_size]
        return self._payload

    def read(self, i: int) -> bytes:
        self._check_live(i)
        return self.payload[i].tobytes()

    def write(self, i: int, data) -> None:
        self._check_live(i)
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        if buf.size != self.payload_size:
            raise ValueError(f"payload must be {self.payload_size} bytes, got {buf.size}")
        self.payload[i] = buf

    def _check_live(self, i: int) -> None:
        if not self.is_user_slot(i):
            raise UsageError(f"slot {i} is not a user slot of bin {self.id}")
        if not self.is_assigned(i):
            raise UsageError(f"slot {i} of bin {self.id} is free")

    @property
    def bytes_reserved(self) -> int:
        """Slot storage plus the bin header."""
        return self.size * slot_footprint(self.payload_size) + self.meta.nbytes

    def copy(self) -> Bin:
        other = Bin.__new__(Bin)
        other.id = self.id
        other.capacity = self.capacity
        other.payload_size = self.payload_size
        other.words = self.words
        other.status = self.status.copy()
        other.overlay = self.overlay.copy()
        other.meta = self.meta.copy()
        other.kernels = self.kernels
        other.next = other.prev = None
        other._payload = None
        return other


_DEALLOC_ERRORS = {
    K.E_RANGE: "slot {i} is outside bin {bin}",
    K.E_PSEUDO: "slot {i} of bin {bin} is a pseudo slot",
    K.E_DOUBLE_FREE: "slot {i} of bin {bin} is already free (double free)",
}

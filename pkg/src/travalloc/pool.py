"""Multi-bin pool with handle-based allocation and ordered traversal.

Bins form a doubly linked list. A cursor reaching the trailing pseudo slot
of a bin hops to the leading pseudo slot of the next bin; bins never store
links into each other, so inserting or retiring a bin does not disturb any
slot.

Cursors are plain values. Whether a cursor survives allocations or
deallocations elsewhere in the pool is unspecified; create cursors after
the last mutation and do not mutate while iterating.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from . import _kernels as K
from .bin import Bin, check_geometry
from .errors import UsageError

DEFAULT_BIN_CAPACITY = 64_000


class Handle(NamedTuple):
    """Locator of one assigned slot: owning bin id and slot index."""
    bin_id: int
    slot: int


class Cursor(NamedTuple):
    bin_id: int
    slot: int


EMPTY_CURSOR = Cursor(0, 0)


class Pool:
    """Fixed-size object pool built from equally sized bins.

    Parameters
    ----------
    payload_size : int
        Bytes per object.
    bin_capacity : int
        User slots per bin.
    kernels : Kernels, optional
        Compiled slot routines; only tests pass anything but the default.
    """

    def __init__(self, payload_size: int, bin_capacity: int = DEFAULT_BIN_CAPACITY,
                 *, kernels: K.Kernels | None = None):
        check_geometry(bin_capacity, payload_size)
        self.payload_size = int(payload_size)
        self.bin_capacity = int(bin_capacity)
        self.kernels = kernels if kernels is not None else K.kernels()
        self.head: Bin | None = None
        self.tail: Bin | None = None
        self.bin_count = 0
        self._bins: dict[int, Bin] = {}
        self._next_id = 1
        self._mru: Bin | None = None

    def __repr__(self) -> str:
        return (f"Pool(payload_size={self.payload_size}, bin_capacity={self.bin_capacity}, "
                f"bins={self.bin_count}, live={len(self)})")

    def __len__(self) -> int:
        return sum(b.live_count for b in self.bins())

    # bin list

    def bins(self) -> Iterator[Bin]:
        b = self.head
        while b is not None:
            yield b
            b = b.next

    def bin(self, bin_id: int) -> Bin:
        try:
            return self._bins[bin_id]
        except KeyError:
            raise UsageError(f"no bin with id {bin_id}") from None

    def new_bin(self) -> Bin:
        """Append a freshly initialised bin at the tail."""
        b = Bin(self.bin_capacity, self.payload_size, bin_id=self._next_id, kernels=self.kernels)
        self._next_id += 1
        b.prev = self.tail
        if self.tail is None:
            self.head = b
        else:
            self.tail.next = b
        self.tail = b
        self._bins[b.id] = b
        self.bin_count += 1
        return b

    def _unlink(self, b: Bin) -> None:
        if b.prev is None:
            self.head = b.next
        else:
            b.prev.next = b.next
        if b.next is None:
            self.tail = b.prev
        else:
            b.next.prev = b.prev
        b.next = b.prev = None
        del self._bins[b.id]
        self.bin_count -= 1
        if self._mru is b:
            self._mru = None

    def retire_empty_bins(self) -> int:
        """Unlink and release every bin without live slots; returns how many."""
        empty = [b for b in self.bins() if b.is_empty()]
        for b in empty:
            self._unlink(b)
        return len(empty)

    # allocation

    def _pick_bin(self) -> Bin:
        start = self._mru or self.head
        b = start
        while b is not None:
            if not b.is_full():
                return b
            b = b.next or self.head
            if b is start:
                break
        return self.new_bin()

    def allocate(self) -> Handle:
        b = self._pick_bin()
        i = self.kernels.allocate(b.status, b.overlay, b.meta)
        self._mru = b
        return Handle(b.id, i)

    def allocate_many(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Allocate ``count`` objects; returns (bin ids, slot indices) arrays.

        Same bin choice and slot order as ``count`` calls to :meth:`allocate`,
        with the per-object loop running in compiled code.
        """
        bin_ids = np.empty(count, dtype=np.int64)
        slots = np.empty(count, dtype=np.int64)
        done = 0
        while done < count:
            b = self._pick_bin()
            n = self.kernels.allocate_many(b.status, b.overlay, b.meta, slots, done, count - done)
            bin_ids[done:done + n] = b.id
            done += n
            self._mru = b
        return bin_ids, slots

    def deallocate_many(self, bin_ids: np.ndarray, slots: np.ndarray) -> None:
        """Free many handles given as parallel arrays, in array order per bin."""
        bin_ids = np.asarray(bin_ids, dtype=np.int64)
        slots = np.asarray(slots, dtype=np.int64)
        for bin_id in np.unique(bin_ids):
            b = self.bin(int(bin_id))
            mine = slots[bin_ids == bin_id]
            n = self.kernels.deallocate_many(b.status, b.overlay, b.meta, mine)
            if n < mine.size:
                b.deallocate(int(mine[n]))  # raises the specific error

    def deallocate(self, h: Handle) -> None:
        self.bin(h[0]).deallocate(h[1])

    def read(self, h: Handle) -> bytes:
        return self.bin(h[0]).read(h[1])

    def write(self, h: Handle, data) -> None:
        self.bin(h[0]).write(h[1], data)

    def is_live(self, h: Handle) -> bool:
        b = self._bins.get(h[0])
        return b is not None and b.is_user_slot(h[1]) and b.is_assigned(h[1])

    # traversal

    def end(self) -> Cursor:
        if self.tail is None:
            return EMPTY_CURSOR
        return Cursor(self.tail.id, self.tail.last)

    def begin(self) -> Cursor:
        if self.head is None:
            return EMPTY_CURSOR
        return self._first_from(self.head, None)

    def _first_from(self, b: Bin, stop: Bin | None) -> Cursor:
        """First assigned slot at or after the start of ``b``.

        Stops at the trailing pseudo slot of ``stop`` (or of the tail).
        """
        i = 0
        while True:
            j = K.next_assigned(b.status, b.overlay, i)
            if j != b.last or b is stop or b.next is None:
                return Cursor(b.id, j)
            b = b.next

    def advance(self, c: Cursor, stop: Cursor | None = None) -> Cursor:
        """Cursor of the next live object.

        ``stop`` bounds a sub-range: reaching the trailing pseudo slot of its
        bin returns ``stop`` instead of hopping further.
        """
        b = self.bin(c[0])
        i = c[1]
        if i == b.last:
            raise UsageError("cannot advance an end cursor")
        if not b.is_assigned(i):
            raise UsageError(f"cursor {c} does not designate a live object")
        stop_bin = self.bin(stop[0]) if stop is not None and stop[0] else None
        while True:
            j = K.next_assigned(b.status, b.overlay, i)
            if j != b.last or b is stop_bin or b.next is None:
                return Cursor(b.id, j)
            b = b.next
            i = 0

    def retreat(self, c: Cursor) -> Cursor:
        """Cursor of the previous live object; ``c`` may be an end cursor."""
        b = self.bin(c[0])
        i = c[1]
        if i == 0 or not b.is_assigned(i):
            raise UsageError(f"cursor {c} cannot be retreated")
        while True:
            j = K.prev_assigned(b.status, b.overlay, i)
            if j != 0:
                return Cursor(b.id, j)
            if b.prev is None:
                raise UsageError("cannot retreat past the first live object")
            b = b.prev
            i = b.last

    def deref(self, c: Cursor) -> Handle:
        b = self.bin(c[0])
        if not b.is_user_slot(c[1]) or not b.is_assigned(c[1]):
            raise UsageError(f"cursor {c} is not dereferenceable")
        return Handle(c[0], c[1])

    def cursor_read(self, c: Cursor) -> bytes:
        return self.read(self.deref(c))

    def cursor_write(self, c: Cursor, data) -> None:
        self.write(self.deref(c), data)

    def __iter__(self) -> Iterator[Handle]:
        return iter(CursorRange(self, self.begin(), self.end()))

    def handles(self) -> list[Handle]:
        """All live handles in traversal order, walked per bin in compiled code."""
        return [Handle(b.id, int(i)) for b in self.bins() for i in b.assigned()]

    def partition(self, k: int) -> list[CursorRange]:
        """Split the bin list into ``k`` contiguous runs of near-equal bin count.

        Runs differ by at most one bin; surplus ranges (``k`` greater than the
        bin count) are empty.
        """
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise ValueError(f"partition count must be >= 1, got {k!r}")
        q, r = divmod(self.bin_count, k)
        ranges = []
        b = self.head
        for n in range(k):
            size = q + (1 if n < r else 0)
            if size == 0:
                ranges.append(CursorRange(self, EMPTY_CURSOR, EMPTY_CURSOR))
                continue
            first = b
            for _ in range(size - 1):
                b = b.next
            last = b
            b = b.next
            stop = Cursor(last.id, last.last)
            ranges.append(CursorRange(self, self._first_from(first, last), stop, first.id))
        return ranges

    # accounting

    @property
    def bytes_reserved(self) -> int:
        return sum(b.bytes_reserved for b in self.bins())

    def copy(self) -> Pool:
        """Deep copy; bin ids and the most-recently-used bin are preserved."""
        other = Pool(self.payload_size, self.bin_capacity, kernels=self.kernels)
        other._next_id = self._next_id
        for b in self.bins():
            nb_ = b.copy()
            nb_.prev = other.tail
            if other.tail is None:
                other.head = nb_
            else:
                other.tail.next = nb_
            other.tail = nb_
            other._bins[nb_.id] = nb_
            other.bin_count += 1
        if self._mru is not None:
            other._mru = other._bins[self._mru.id]
        return other


class CursorRange:
    """Half-open range ``[begin, end)`` of live objects.

    ``end`` is the trailing pseudo slot of the range's last bin, so ranges
    from :meth:`Pool.partition` can be walked independently of each other.
    """

    def __init__(self, pool: Pool, begin: Cursor, end: Cursor, first_bin: int | None = None):
        self.pool = pool
        self.begin = begin
        self.end = end
        # begin may sit past leading empty bins; remember where the run starts
        self.first_bin = begin[0] if first_bin is None else first_bin

    def __repr__(self) -> str:
        return f"CursorRange({self.begin}, {self.end})"

    def __iter__(self) -> Iterator[Handle]:
        c = self.begin
        while c != self.end:
            yield Handle(c[0], c[1])
            c = self.pool.advance(c, self.end)

    def bins(self) -> Iterator[Bin]:
        """Bins covered by the range, in list order."""
        if self.end == EMPTY_CURSOR:
            return
        b = self.pool.bin(self.first_bin)
        while True:
            yield b
            if b.id == self.end[0]:
                return
            b = b.next

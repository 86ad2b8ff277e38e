"""Thread-safe pool: shared/exclusive bin-list lock, per-bin try-locks,
per-thread bin affinity.

Allocation path::

    shared lock on bin list
      -> affinity bin: try-lock, allocate if not full
      -> other bins (list order, wrapping): skip full or locked bins
    no usable bin:
      exclusive lock on bin list -> append bin -> allocate from it

Per-bin locks are only ever *tried* during allocation, so a thread never
waits for another thread's bin while any other bin has room. The bin-list
lock is taken exclusively only to insert or retire bins.

Concurrent allocate/deallocate/retire calls are safe. Iteration over
``SharedPool.pool`` is not: callers must make sure no thread mutates the
pool while cursors are in use.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterator

from . import _kernels as K
from .bin import Bin
from .errors import UsageError
from .pool import DEFAULT_BIN_CAPACITY, Handle, Pool


class RWLock:
    """Readers-writer lock with one reader mutex per thread.

    A reader only takes its own mutex, which nobody else touches unless a
    writer is active, so shared acquisition never contends between readers.
    A writer takes every reader mutex. While a writer waits, new readers
    step aside so writers are not starved.

    Not reentrant in either mode.
    """

    def __init__(self) -> None:
        self._local = threading.local()
        self._registry = threading.Lock()  # also serialises writers
        self._reader_locks: list[threading.Lock] = []
        self._gate = threading.Condition(threading.Lock())
        self._writer_pending = False

    def _reader_lock(self) -> threading.Lock:
        try:
            return self._local.lock
        except AttributeError:
            lock = threading.Lock()
            with self._registry:
                self._reader_locks.append(lock)
            self._local.lock = lock
            return lock

    def acquire_shared(self) -> None:
        lock = self._reader_lock()
        while True:
            lock.acquire()
            if not self._writer_pending:
                return
            lock.release()
            with self._gate:
                while self._writer_pending:
                    self._gate.wait()

    def release_shared(self) -> None:
        self._local.lock.release()

    def acquire_exclusive(self) -> None:
        self._registry.acquire()
        self._writer_pending = True
        for lock in self._reader_locks:
            lock.acquire()

    def release_exclusive(self) -> None:
        with self._gate:
            self._writer_pending = False
            self._gate.notify_all()
        for lock in self._reader_locks:
            lock.release()
        self._registry.release()

    @contextmanager
    def shared(self) -> Iterator[None]:
        self.acquire_shared()
        try:
            yield
        finally:
            self.release_shared()

    @contextmanager
    def exclusive(self) -> Iterator[None]:
        self.acquire_exclusive()
        try:
            yield
        finally:
            self.release_exclusive()


class _Affinity:
    """Per-thread allocation state: reader mutex and preferred bin.

    ``lock`` and ``args`` duplicate what hangs off ``bin`` so the fast path
    does no dictionary or attribute chasing.
    """
    __slots__ = ("reader", "bin", "lock", "args")

    def __init__(self, reader: threading.Lock) -> None:
        self.reader = reader
        self.bin: Bin | None = None
        self.lock: threading.Lock | None = None
        self.args: tuple = ()

    def set(self, b: Bin | None, lock: threading.Lock | None) -> None:
        self.bin = b
        self.lock = lock
        self.args = () if b is None else (b.status, b.overlay, b.meta)


class SharedPool:
    """:class:`Pool` safe for concurrent allocation and deallocation.

    Each thread remembers the bin it last allocated from and tries that bin
    first, so threads mostly work in different bins and never contend.
    """

    def __init__(self, payload_size: int, bin_capacity: int = DEFAULT_BIN_CAPACITY,
                 *, kernels: K.Kernels | None = None):
        self.pool = Pool(payload_size, bin_capacity, kernels=kernels)
        self._allocate = self.pool.kernels.allocate
        self._list_lock = RWLock()
        self._bin_locks: dict[int, threading.Lock] = {}
        self._local = threading.local()
        self._affinities: dict[int, _Affinity] = {}
        self._affinities_lock = threading.Lock()
        self.bins_appended = 0

    def __repr__(self) -> str:
        return f"SharedPool({self.pool!r})"

    @property
    def bin_count(self) -> int:
        return self.pool.bin_count

    def _mine(self) -> _Affinity:
        try:
            return self._local.affinity
        except AttributeError:
            aff = self._local.affinity = _Affinity(self._list_lock._reader_lock())
            with self._affinities_lock:
                self._affinities[threading.get_ident()] = aff
            return aff

    def affinity(self) -> int | None:
        """Id of the bin the calling thread tries first, if any."""
        b = self._mine().bin
        return None if b is None else b.id

    def _try_bin(self, b: Bin) -> int:
        if b.meta[K.M_FREE_HEAD] == K.END:
            return -1
        lock = self._bin_locks[b.id]
        if not lock.acquire(False):
            return -1
        try:
            return self._allocate(b.status, b.overlay, b.meta)
        finally:
            lock.release()

    def allocate(self) -> Handle:
        try:
            aff = self._local.affinity
        except AttributeError:
            aff = self._mine()
        # Fast path: shared lock taken inline, affinity bin tried once.
        reader = aff.reader
        reader.acquire()
        if self._list_lock._writer_pending:
            reader.release()
            return self._allocate_slow(aff)
        lock = aff.lock
        if lock is not None and lock.acquire(False):
            i = self._allocate(*aff.args)
            lock.release()
            if i >= 0:
                reader.release()
                return Handle(aff.bin.id, i)
        reader.release()
        return self._allocate_slow(aff)

    def _allocate_slow(self, aff: _Affinity) -> Handle:
        lists = self._list_lock
        lists.acquire_shared()
        try:
            start = aff.bin or self.pool.head
            b = start
            while b is not None:
                i = self._try_bin(b)
                if i >= 0:
                    aff.set(b, self._bin_locks[b.id])
                    return Handle(b.id, i)
                b = b.next or self.pool.head
                if b is start:
                    break
        finally:
            lists.release_shared()
        lists.acquire_exclusive()
        try:
            b = self.pool.new_bin()
            lock = self._bin_locks[b.id] = threading.Lock()
            self.bins_appended += 1
            i = self._allocate(b.status, b.overlay, b.meta)
            aff.set(b, lock)
            return Handle(b.id, i)
        finally:
            lists.release_exclusive()

    def _locked_bin_call(self, h: Handle, fn):
        self._list_lock.acquire_shared()
        try:
            b = self.pool._bins.get(h[0])
            if b is None:
                raise UsageError(f"handle {tuple(h)} refers to a retired or unknown bin")
            with self._bin_locks[b.id]:
                return fn(b)
        finally:
            self._list_lock.release_shared()

    def deallocate(self, h: Handle) -> None:
        self._locked_bin_call(h, lambda b: b.deallocate(h[1]))

    def write(self, h: Handle, data) -> None:
        self._locked_bin_call(h, lambda b: b.write(h[1], data))

    def read(self, h: Handle) -> bytes:
        return self._locked_bin_call(h, lambda b: b.read(h[1]))

    def retire_empty_bins(self) -> int:
        """Release empty bins; affinities pointing at them are cleared."""
        with self._list_lock.exclusive():
            before = set(self.pool._bins)
            n = self.pool.retire_empty_bins()
            live = self.pool._bins
            for bin_id in before - set(live):
                del self._bin_locks[bin_id]
            with self._affinities_lock:
                for aff in self._affinities.values():
                    if aff.bin is not None and aff.bin.id not in live:
                        aff.set(None, None)
            return n

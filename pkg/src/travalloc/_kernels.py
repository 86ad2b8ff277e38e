"""Compiled slot-level routines for a single bin.

A bin is three arrays:

* ``status``  -- uint32[capacity + 4], one status word per slot.
* ``overlay`` -- int64[capacity + 4, words]; column 0 is the next-assigned
  link and column 1 the previous-assigned link while a slot is free, the
  payload bytes while it is assigned.
* ``meta``    -- int64[META_SIZE], the bin header (see the ``M_*`` offsets).

Everything here works on slot indices. The Python wrappers in
:mod:`travalloc.bin` own validation and error reporting.
"""

from __future__ import annotations

import functools

import numba as nb
import numpy as np

FREE_FLAG = 0x80000000
INDEX_MASK = 0x7FFFFFFF
END = INDEX_MASK  # free-list terminator; never a slot index
MAX_CAPACITY = (1 << 31) - 6

NEXT = 0
PREV = 1

M_CAPACITY = 0
M_FREE_HEAD = 1
M_LIVE = 2
M_LAST_WRITES = 3  # slot-field writes done by the last allocate/deallocate
M_LAST_READS = 4  # slot-field reads done by the last allocate/deallocate
M_MAX_ALLOC_WRITES = 5
M_MAX_DEALLOC_WRITES = 6
META_SIZE = 8

# deallocate() return codes
OK = 0
E_RANGE = 1
E_PSEUDO = 2
E_DOUBLE_FREE = 3

# Correction steps that can be switched off to build mutant kernels for
# mutation testing of the checkers.
CORRECTIONS = frozenset({"alloc_prev", "alloc_next", "dealloc_prev", "dealloc_next"})


@nb.njit(cache=True)
def init_bin(status, overlay, meta, capacity):
    last = capacity + 3
    status[0] = 0
    status[last] = 0
    status[1] = FREE_FLAG | END
    status[capacity + 2] = FREE_FLAG | END
    for j in range(2, capacity + 1):
        status[j] = FREE_FLAG | (j + 1)
    status[capacity + 1] = FREE_FLAG | END
    for j in range(1, capacity + 3):
        overlay[j, NEXT] = last
        overlay[j, PREV] = 0
    meta[:] = 0
    meta[M_CAPACITY] = capacity
    meta[M_FREE_HEAD] = 2


@nb.njit(cache=True)
def next_assigned(status, overlay, i):
    j = i + 1
    if status[j] & FREE_FLAG:
        return overlay[j, NEXT]
    return j


@nb.njit(cache=True)
def prev_assigned(status, overlay, i):
    j = i - 1
    if status[j] & FREE_FLAG:
        return overlay[j, PREV]
    return j


@nb.njit(cache=True)
def walk(status, overlay, out):
    """Write assigned user-slot indices in ascending order into ``out``.

    Returns the count, or -1 if a link leads somewhere it never should
    (backwards, out of range, or onto a free slot).
    """
    last = status.shape[0] - 1
    i = 0
    n = 0
    while True:
        j = i + 1
        if status[j] & FREE_FLAG:
            j = overlay[j, NEXT]
            if j <= i or j > last or status[j] & FREE_FLAG:
                return -1
        if j == last:
            return n
        if n == out.shape[0]:
            return -1
        out[n] = j
        n += 1
        i = j


@nb.njit(cache=True)
def walk_back(status, overlay, out):
    last = status.shape[0] - 1
    i = last
    n = 0
    while True:
        j = i - 1
        if status[j] & FREE_FLAG:
            j = overlay[j, PREV]
            if j >= i or j < 0 or status[j] & FREE_FLAG:
                return -1
        if j == 0:
            return n
        if n == out.shape[0]:
            return -1
        out[n] = j
        n += 1
        i = j


def _build(alloc_prev, alloc_next, dealloc_prev, dealloc_next):
    @nb.njit(cache=True)
    def allocate(status, overlay, meta):
        i = meta[M_FREE_HEAD]
        if i == END:
            return -1
        word = status[i]
        meta[M_FREE_HEAD] = word & INDEX_MASK
        status[i] = word & INDEX_MASK
        writes = 1
        reads = 3
        # links of slot i are still intact here; payload writes come later
        if alloc_prev and status[i - 1] & FREE_FLAG:
            overlay[overlay[i, PREV] + 1, NEXT] = i
            writes += 1
            reads += 1
        if alloc_next and status[i + 1] & FREE_FLAG:
            overlay[overlay[i, NEXT] - 1, PREV] = i
            writes += 1
            reads += 1
        meta[M_LIVE] += 1
        meta[M_LAST_WRITES] = writes
        meta[M_LAST_READS] = reads
        if writes > meta[M_MAX_ALLOC_WRITES]:
            meta[M_MAX_ALLOC_WRITES] = writes
        return i

    @nb.njit(cache=True)
    def deallocate(status, overlay, meta, i):
        capacity = meta[M_CAPACITY]
        if i < 0 or i > capacity + 3:
            return E_RANGE
        if i < 2 or i > capacity + 1:
            return E_PSEUDO
        if status[i] & FREE_FLAG:
            return E_DOUBLE_FREE
        status[i] = meta[M_FREE_HEAD] | FREE_FLAG
        meta[M_FREE_HEAD] = i
        writes = 3
        reads = 3
        after_free = status[i + 1] & FREE_FLAG
        before_free = status[i - 1] & FREE_FLAG
        if after_free:
            nxt = overlay[i + 1, NEXT]
            reads += 1
        else:
            nxt = i + 1
        if before_free:
            prv = overlay[i - 1, PREV]
            reads += 1
        else:
            prv = i - 1
        overlay[i, NEXT] = nxt
        overlay[i, PREV] = prv
        if dealloc_prev and before_free:
            overlay[prv + 1, NEXT] = nxt
            writes += 1
        if dealloc_next and after_free:
            overlay[nxt - 1, PREV] = prv
            writes += 1
        meta[M_LIVE] -= 1
        meta[M_LAST_WRITES] = writes
        meta[M_LAST_READS] = reads
        if writes > meta[M_MAX_DEALLOC_WRITES]:
            meta[M_MAX_DEALLOC_WRITES] = writes
        return OK

    @nb.njit(cache=True)
    def allocate_many(status, overlay, meta, out, start, count):
        n = 0
        while n < count:
            i = allocate(status, overlay, meta)
            if i < 0:
                break
            out[start + n] = i
            n += 1
        return n

    @nb.njit(cache=True)
    def deallocate_many(status, overlay, meta, slots):
        for n in range(slots.shape[0]):
            code = deallocate(status, overlay, meta, slots[n])
            if code != OK:
                return n
        return slots.shape[0]

    return allocate, deallocate, allocate_many, deallocate_many


class Kernels:
    """Allocation routines compiled with a given set of corrections."""

    def __init__(self, disabled: frozenset = frozenset()):
        unknown = set(disabled) - CORRECTIONS
        if unknown:
            raise ValueError(f"unknown corrections: {sorted(unknown)}")
        self.disabled = frozenset(disabled)
        self.allocate, self.deallocate, self.allocate_many, self.deallocate_many = _build(
            "alloc_prev" not in disabled,
            "alloc_next" not in disabled,
            "dealloc_prev" not in disabled,
            "dealloc_next" not in disabled,
        )

    def __repr__(self) -> str:
        off = ",".join(sorted(self.disabled)) or "none"
        return f"Kernels(disabled={off})"


@functools.lru_cache(maxsize=None)
def kernels(disabled: frozenset = frozenset()) -> Kernels:
    return Kernels(frozenset(disabled))


def empty_arrays(capacity: int, words: int):
    status = np.empty(capacity + 4, dtype=np.uint32)
    overlay = np.empty((capacity + 4, words), dtype=np.int64)
    meta = np.zeros(META_SIZE, dtype=np.int64)
    return status, overlay, meta

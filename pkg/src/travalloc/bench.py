"""Benchmarks: allocation, iteration with gaps, multi-threaded allocation,
partitioned parallel iteration and memory accounting.

Objects are three unsigned 64-bit integers (24 bytes). The iteration
workload adds 20 pre-drawn random values to every object, doubled for ``y``
and quadrupled for ``z``.

Every run produces one :class:`BenchRecord` per repetition plus a
``rep="median"`` record. Timings use :func:`time.perf_counter`.
"""

from __future__ import annotations

import csv
import functools
import logging
import os
import statistics
import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numba as nb
import numpy as np
from numba.typed import List as TypedList

from . import _kernels as K
from .bin import slot_footprint
from .pool import DEFAULT_BIN_CAPACITY, Pool
from .sync import SharedPool

log = logging.getLogger(__name__)

ELEMENT24 = np.dtype([("x", "<u8"), ("y", "<u8"), ("z", "<u8")])
PAYLOAD_SIZE = ELEMENT24.itemsize
RANDOM_VALUES = 20
BIN_SIZE_SWEEP = (4000, 8000, 16000, 32000, 64000, 128000)
THREAD_SWEEP = (1, 2, 4, 8)
CSV_COLUMNS = ("benchmark", "variant", "objects", "bin_size", "threads", "gap_percent",
               "seed", "rep", "seconds", "ops_per_sec", "bytes_reserved", "checksum")


@dataclass
class BenchConfig:
    objects: int = 2_000_000
    bin_size: int = DEFAULT_BIN_CAPACITY
    threads: int | None = None  # None: sweep THREAD_SWEEP
    gap_percent: float = 0.0
    seed: int = 0
    repetitions: int = 3
    output: str | None = None

    def __post_init__(self):
        if self.objects < 1:
            raise ValueError("objects must be >= 1")
        if not 0 <= self.gap_percent <= 100:
            raise ValueError("gap_percent must be within [0, 100]")
        if self.threads is not None and self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 1 <= self.bin_size <= K.MAX_CAPACITY:
            raise ValueError("bin_size out of range")

    def thread_counts(self) -> tuple[int, ...]:
        if self.threads is None:
            return THREAD_SWEEP
        return tuple(sorted({1, self.threads}))


@dataclass
class BenchRecord:
    benchmark: str
    variant: str
    objects: int
    bin_size: int
    threads: int
    gap_percent: float
    seed: int
    rep: int | str
    seconds: float
    ops_per_sec: float
    bytes_reserved: int
    checksum: int


def medians(records: Iterable[BenchRecord]) -> dict[tuple, BenchRecord]:
    """Median records keyed by (variant, bin_size, threads, gap_percent)."""
    return {(r.variant, r.bin_size, r.threads, r.gap_percent): r
            for r in records if r.rep == "median"}


def write_csv(records: Iterable[BenchRecord], path: str) -> None:
    """Append records; the header is written only to a new or empty file."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# workload

def draw_random_values(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << 31, size=RANDOM_VALUES, dtype=np.int64)


@nb.njit(cache=True)
def _kernel(rows, j, values):
    for k in range(values.shape[0]):
        v = values[k]
        rows[j, 0] += v
        rows[j, 1] += 2 * v
        rows[j, 2] += 4 * v


def workload_kernel(element: np.ndarray, random_values: np.ndarray) -> None:
    """Apply the iteration workload in place to one (x, y, z) element."""
    row = np.asarray(element).reshape(1, 3)
    if row.dtype == np.uint64:
        row = row.view(np.int64)
    _kernel(row, 0, np.asarray(random_values, dtype=np.int64))


def _fold(total: int) -> int:
    return int(total) & 0xFFFFFFFFFFFFFFFF


@nb.njit(cache=True)
def _visit_bin(status, overlay, values):
    """Traverse one bin's live slots, apply the workload, fold a checksum."""
    last = status.shape[0] - 1
    i = 0
    acc = 0
    while True:
        j = i + 1
        if status[j] & K.FREE_FLAG:
            j = overlay[j, K.NEXT]
        if j == last:
            return acc
        _kernel(overlay, j, values)
        acc += overlay[j, 0] + overlay[j, 1] + overlay[j, 2]
        i = j


# same body, GIL released so partitioned workers run in parallel
_visit_bin_nogil = nb.njit(nogil=True)(_visit_bin.py_func)


@nb.njit(cache=True)
def _visit_array(rows, values):
    acc = 0
    for j in range(rows.shape[0]):
        _kernel(rows, j, values)
        acc += rows[j, 0] + rows[j, 1] + rows[j, 2]
    return acc


@nb.njit(cache=True)
def _visit_list(nodes, head, values):
    acc = 0
    i = head
    while i != -1:
        node = nodes[i]
        for k in range(values.shape[0]):
            v = values[k]
            node[0] += v
            node[1] += 2 * v
            node[2] += 4 * v
        acc += node[0] + node[1] + node[2]
        i = node[3]
    return acc


# baselines: per-object heap allocation, growable array, linked list

@nb.njit(cache=True)
def _alloc_general(n):
    objs = TypedList()
    for i in range(n):
        objs.append(np.empty(3, dtype=np.int64))
    return objs


@nb.njit(cache=True)
def _alloc_growable(n):
    rows = np.empty((16, 3), dtype=np.int64)
    for i in range(n):
        if i == rows.shape[0]:
            bigger = np.empty((2 * rows.shape[0], 3), dtype=np.int64)
            bigger[:i] = rows
            rows = bigger
        rows[i, 0] = 0
    return rows


@nb.njit(cache=True)
def _alloc_list(n):
    """Doubly linked list of individually allocated nodes [x, y, z, next, prev]."""
    nodes = TypedList()
    for i in range(n):
        node = np.empty(5, dtype=np.int64)
        node[3] = -1
        node[4] = i - 1
        if i:
            nodes[i - 1][3] = i
        nodes.append(node)
    return nodes


@nb.njit(cache=True)
def _fill_list(nodes, init):
    for i in range(len(nodes)):
        node = nodes[i]
        node[0] = init[i, 0]
        node[1] = init[i, 1]
        node[2] = init[i, 2]


def _initial_values(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.int64)
    return np.stack([i, 2 * i + 1, 3 * i + 2], axis=1)


def filled_pool(objects: int, bin_size: int, gap_percent: float = 0.0,
                seed: int = 0) -> Pool:
    """Pool holding ``objects`` elements, then with each freed with
    probability ``gap_percent / 100`` (fixed seed)."""
    pool = Pool(PAYLOAD_SIZE, bin_size)
    bin_ids, slots = pool.allocate_many(objects)
    init = _initial_values(objects)
    for b in pool.bins():
        sel = bin_ids == b.id
        b.overlay[slots[sel], :3] = init[sel]
    if gap_percent:
        rng = np.random.default_rng(seed)
        drop = rng.random(objects) < gap_percent / 100.0
        pool.deallocate_many(bin_ids[drop], slots[drop])
    return pool


def _records(benchmark: str, variant: str, cfg: BenchConfig, runs: list[tuple[float, int, int]],
             *, objects: int | None = None, bin_size: int | None = None, threads: int = 1,
             gap_percent: float | None = None) -> list[BenchRecord]:
    n = cfg.objects if objects is None else objects
    common = dict(benchmark=benchmark, variant=variant, objects=n,
                  bin_size=cfg.bin_size if bin_size is None else bin_size, threads=threads,
                  gap_percent=cfg.gap_percent if gap_percent is None else gap_percent,
                  seed=cfg.seed)
    out = []
    for rep, (secs, nbytes, checksum) in enumerate(runs):
        out.append(BenchRecord(rep=rep, seconds=secs, ops_per_sec=n / secs if secs else float("inf"),
                               bytes_reserved=nbytes, checksum=checksum, **common))
    secs = statistics.median(r[0] for r in runs)
    out.append(BenchRecord(rep="median", seconds=secs,
                           ops_per_sec=n / secs if secs else float("inf"),
                           bytes_reserved=runs[-1][1], checksum=runs[-1][2], **common))
    log.info("%s/%s bin=%s threads=%s gap=%s: %.4fs", benchmark, variant,
             common["bin_size"], threads, common["gap_percent"], secs)
    return out


def _interleave(cfg: BenchConfig, onces: list[Callable[[], tuple[float, int, int]]]):
    """Run each measurement ``cfg.repetitions`` times, round-robin.

    Alternating variants spreads bursts of host noise over all of them
    instead of penalising whichever variant happened to be running.
    """
    runs: list[list] = [[] for _ in onces]
    for _ in range(cfg.repetitions):
        for out, once in zip(runs, onces):
            out.append(once())
    return runs


def _warm_up() -> None:
    """Compile everything outside the timed regions."""
    pool = filled_pool(8, 4, 50.0)
    values = draw_random_values(0)
    for b in pool.bins():
        _visit_bin(b.status, b.overlay, values)
        _visit_bin_nogil(b.status, b.overlay, values)
    _visit_array(_initial_values(4), values)
    nodes = _alloc_list(4)
    _fill_list(nodes, _initial_values(4))
    _visit_list(nodes, 0, values)
    _alloc_general(4)
    _alloc_growable(40)


# benchmarks

def run_alloc_bench(cfg: BenchConfig, bin_sizes: Iterable[int] = BIN_SIZE_SWEEP) -> list[BenchRecord]:
    """Time ``cfg.objects`` allocations per allocator variant.

    The pool is measured at every bin size; the baselines have no bin size
    and are measured once.
    """
    _warm_up()
    n = cfg.objects
    records: list[BenchRecord] = []

    sizes = tuple(bin_sizes)

    def pool_once(size):
        pool = Pool(PAYLOAD_SIZE, size)
        t0 = time.perf_counter()
        bin_ids, slots = pool.allocate_many(n)
        secs = time.perf_counter() - t0
        return secs, pool.bytes_reserved, _fold(bin_ids.sum() * 1_000_003 + slots.sum())

    def general_once():
        t0 = time.perf_counter()
        objs = _alloc_general(n)
        secs = time.perf_counter() - t0
        return secs, n * (PAYLOAD_SIZE + 8), len(objs)

    def growable_once():
        t0 = time.perf_counter()
        rows = _alloc_growable(n)
        secs = time.perf_counter() - t0
        return secs, rows.nbytes, n

    def list_once():
        t0 = time.perf_counter()
        nodes = _alloc_list(n)
        secs = time.perf_counter() - t0
        return secs, n * (5 * 8 + 8), len(nodes)

    onces = [functools.partial(pool_once, size) for size in sizes]
    runs = _interleave(cfg, onces + [general_once, growable_once, list_once])
    for size, r in zip(sizes, runs):
        records += _records("alloc", "pool", cfg, r, bin_size=size)
    for variant, r in zip(("general", "growable-array", "linked-list"), runs[len(sizes):]):
        records += _records("alloc", variant, cfg, r, bin_size=0)
    return records


def run_iter_bench(cfg: BenchConfig, gaps: Iterable[float] | None = None,
                   baselines: bool = True) -> list[BenchRecord]:
    """Time one full traversal applying the workload to every live element.

    The pool is filled with ``cfg.objects`` elements and thinned to each gap
    percentage (default: just ``cfg.gap_percent``). State is rebuilt before
    every repetition so checksums repeat.
    """
    _warm_up()
    n = cfg.objects
    values = draw_random_values(cfg.seed)
    gaps = (cfg.gap_percent,) if gaps is None else tuple(gaps)
    records: list[BenchRecord] = []

    def pool_once(gap):
        pool = filled_pool(n, cfg.bin_size, gap, cfg.seed)
        t0 = time.perf_counter()
        acc = 0
        for b in pool.bins():
            acc += _visit_bin(b.status, b.overlay, values)
        secs = time.perf_counter() - t0
        return secs, pool.bytes_reserved, _fold(acc)

    onces = [functools.partial(pool_once, gap) for gap in gaps]
    labels = [("pool", gap) for gap in gaps]
    if baselines:
        def array_once():
            rows = _initial_values(n)
            t0 = time.perf_counter()
            acc = _visit_array(rows, values)
            secs = time.perf_counter() - t0
            return secs, rows.nbytes, _fold(acc)

        def list_once():
            nodes = _alloc_list(n)
            _fill_list(nodes, _initial_values(n))
            t0 = time.perf_counter()
            acc = _visit_list(nodes, 0, values)
            secs = time.perf_counter() - t0
            return secs, n * (5 * 8 + 8), _fold(acc)

        onces += [array_once, list_once]
        labels += [("array", 0.0), ("linked-list", 0.0)]
    for (variant, gap), runs in zip(labels, _interleave(cfg, onces)):
        records += _records("iter", variant, cfg, runs, gap_percent=gap)
    return records


def _run_threads(count: int, work: Callable[[int], None]) -> float:
    """Run ``work(t)`` on ``count`` threads released together; wall time."""
    barrier = threading.Barrier(count + 1)
    errors: list[BaseException] = []

    def body(t: int) -> None:
        barrier.wait()
        try:
            work(t)
        except BaseException as exc:  # re-raised in the caller
            errors.append(exc)

    threads = [threading.Thread(target=body, args=(t,)) for t in range(count)]
    for th in threads:
        th.start()
    barrier.wait()
    t0 = time.perf_counter()
    for th in threads:
        th.join()
    secs = time.perf_counter() - t0
    if errors:
        raise errors[0]
    return secs


def _split(n: int, k: int) -> list[int]:
    return [n // k + (1 if t < n % k else 0) for t in range(k)]


def _global_lock_once(cfg: BenchConfig, threads: int):
    shares = _split(cfg.objects, threads)
    pool = Pool(PAYLOAD_SIZE, cfg.bin_size)
    lock = threading.Lock()
    got: list[list] = [[] for _ in range(threads)]

    def work(t):
        mine = got[t]
        for _ in range(shares[t]):
            with lock:
                h = pool.allocate()
            mine.append(h)
    secs = _run_threads(threads, work)
    return secs, pool.bytes_reserved, len({h for hs in got for h in hs})


def _shared_once(cfg: BenchConfig, threads: int):
    shares = _split(cfg.objects, threads)
    sp = SharedPool(PAYLOAD_SIZE, cfg.bin_size)
    got: list[list] = [[] for _ in range(threads)]

    def work(t):
        mine = got[t]
        allocate = sp.allocate
        for _ in range(shares[t]):
            mine.append(allocate())
    secs = _run_threads(threads, work)
    return secs, sp.pool.bytes_reserved, len({h for hs in got for h in hs})


def _unsynchronized_once(cfg: BenchConfig):
    pool = Pool(PAYLOAD_SIZE, cfg.bin_size)
    got = []
    t0 = time.perf_counter()
    allocate = pool.allocate
    for _ in range(cfg.objects):
        got.append(allocate())
    secs = time.perf_counter() - t0
    return secs, pool.bytes_reserved, len(set(got))


def run_mt_alloc_bench(cfg: BenchConfig) -> list[BenchRecord]:
    """``cfg.objects`` allocations split over worker threads.

    Variants: a pool behind one global lock, and the shared pool. With one
    thread an unsynchronised pool is measured as well.
    """
    _warm_up()
    labels, onces = [], []
    for threads in cfg.thread_counts():
        labels += [("global-lock", threads), ("shared-pool", threads)]
        onces += [functools.partial(_global_lock_once, cfg, threads),
                  functools.partial(_shared_once, cfg, threads)]
        if threads == 1:
            labels.append(("unsynchronized", 1))
            onces.append(functools.partial(_unsynchronized_once, cfg))
    records: list[BenchRecord] = []
    for (variant, threads), runs in zip(labels, _interleave(cfg, onces)):
        records += _records("mt-alloc", variant, cfg, runs, threads=threads)
    return records


def run_par_iter_bench(cfg: BenchConfig) -> list[BenchRecord]:
    """Partitioned traversal: each worker walks its own run of bins.

    The traversal kernel releases the GIL, so workers run in parallel when
    the machine has the cores. Speedup is seconds(1 thread) / seconds(k).
    """
    _warm_up()
    values = draw_random_values(cfg.seed)

    def once(threads):
        pool = filled_pool(cfg.objects, cfg.bin_size, cfg.gap_percent, cfg.seed)
        ranges = pool.partition(threads)
        partial = [0] * threads

        def work(t):
            acc = 0
            for b in ranges[t].bins():
                acc += _visit_bin_nogil(b.status, b.overlay, values)
            partial[t] = acc
        secs = _run_threads(threads, work)
        return secs, pool.bytes_reserved, _fold(sum(partial))

    counts = cfg.thread_counts()
    runs = _interleave(cfg, [functools.partial(once, k) for k in counts])
    records: list[BenchRecord] = []
    for threads, r in zip(counts, runs):
        records += _records("par-iter", "pool", cfg, r, threads=threads)
    return records


def speedups(records: Iterable[BenchRecord]) -> dict[int, float]:
    """Median seconds at one thread over median seconds at k threads."""
    med = {r.threads: r.seconds for r in records if r.rep == "median"}
    base = med.get(1)
    if base is None:
        raise ValueError("no single-thread measurement")
    return {k: base / v for k, v in sorted(med.items())}


def pool_accounting(objects: int, bin_size: int, payload_size: int = PAYLOAD_SIZE) -> int:
    """Bytes a pool reserves for ``objects`` live elements, densely packed."""
    bins = -(-objects // bin_size)
    return bins * ((bin_size + 4) * slot_footprint(payload_size) + K.META_SIZE * 8)


def resident_bytes() -> int | None:
    """Resident set size of this process, where the platform exposes it."""
    try:
        with open("/proc/self/statm") as fh:
            return int(fh.read().split()[1]) * os.sysconf("SC_PAGE_SIZE")
    except (OSError, ValueError, IndexError, AttributeError):
        return None


def report_memory(cfg: BenchConfig) -> list[BenchRecord]:
    """Allocator accounting versus the payload-only lower bound.

    Variants: ``pool`` (measured from the bins), ``pool-formula`` (closed
    form), ``payload-bound`` (objects x 24 bytes) and, when available,
    best-effort resident-memory deltas labelled ``rss:pool`` and
    ``rss:general``.
    """
    n = cfg.objects
    records: list[BenchRecord] = []
    kw = dict(benchmark="memory", objects=n, bin_size=cfg.bin_size, threads=1,
              gap_percent=0.0, seed=cfg.seed, rep="median", seconds=0.0, ops_per_sec=0.0)
    _alloc_general(4)
    before = resident_bytes()
    t0 = time.perf_counter()
    pool = filled_pool(n, cfg.bin_size)
    secs = time.perf_counter() - t0
    after = resident_bytes()
    records.append(BenchRecord(variant="pool", bytes_reserved=pool.bytes_reserved,
                               checksum=len(pool), **{**kw, "seconds": secs}))
    records.append(BenchRecord(variant="pool-formula",
                               bytes_reserved=pool_accounting(n, cfg.bin_size),
                               checksum=n, **kw))
    records.append(BenchRecord(variant="payload-bound", bytes_reserved=n * PAYLOAD_SIZE,
                               checksum=n, **kw))
    if before is not None and after is not None:
        records.append(BenchRecord(variant="rss:pool", bytes_reserved=after - before,
                                   checksum=n, **kw))
        del pool
        before = resident_bytes()
        objs = _alloc_general(n)
        after = resident_bytes()
        records.append(BenchRecord(variant="rss:general", bytes_reserved=after - before,
                                   checksum=len(objs), **kw))
    return records


def overhead_ratio(records: Iterable[BenchRecord]) -> float:
    """Pool bytes over payload-only bytes, minus one."""
    by = {r.variant: r.bytes_reserved for r in records}
    return by["pool"] / by["payload-bound"] - 1.0

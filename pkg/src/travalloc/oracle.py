"""Reference model, structural validity scanner and fuzzers.

The model predicts every allocation from the operation sequence alone: per
bin a stack of freed slots (most recent on top) and a counter of fresh
slots handed out in ascending order from 2. It never looks at the pool's
links or status words.

Traces are text, one operation per line::

    A       allocate
    F <k>   free the k-th oldest live object (k = 0 is the oldest)
    R       retire empty bins
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numba as nb
import numpy as np

from . import _kernels as K
from .bin import Bin
from .errors import UsageError
from .pool import Handle, Pool

# violation codes reported by the scanner
PREV_LINK = 1
NEXT_LINK = 2
PSEUDO = 3
FREE_LIST = 4
FREE_LIST_MISSING = 5
LIVE_COUNT = 6
FREE_TOP = 7

CONDITION_NAMES = {
    PREV_LINK: "prev-link",
    NEXT_LINK: "next-link",
    PSEUDO: "pseudo-slot",
    FREE_LIST: "free-list",
    FREE_LIST_MISSING: "free-list-missing",
    LIVE_COUNT: "live-count",
    FREE_TOP: "free-top",
}

MAX_ALLOC_WRITES = 3
MAX_DEALLOC_WRITES = 5
MAX_OP_READS = 5


class Violation(NamedTuple):
    slot: int
    condition: str
    expected: int
    found: int


@dataclass
class ValidityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid

    def __str__(self) -> str:
        if self.valid:
            return "valid"
        shown = "; ".join(
            f"slot {v.slot} {v.condition}: expected {v.expected}, found {v.found}"
            for v in self.violations[:5])
        more = len(self.violations) - 5
        return shown + (f" (+{more} more)" if more > 0 else "")


@nb.njit(cache=True)
def _nearest_assigned(status):
    n = status.shape[0]
    below = np.empty(n, dtype=np.int64)
    above = np.empty(n, dtype=np.int64)
    last = -1
    for j in range(n):
        below[j] = last
        if not status[j] & K.FREE_FLAG:
            last = j
    last = n
    for j in range(n - 1, -1, -1):
        above[j] = last
        if not status[j] & K.FREE_FLAG:
            last = j
    return below, above


@nb.njit(cache=True)
def _scan(status, overlay, free_head, live, out):
    n = status.shape[0]
    cap = n - 4
    k = 0
    below, above = _nearest_assigned(status)
    for j in (0, n - 1):
        if status[j] & K.FREE_FLAG:
            out[k, 0] = j; out[k, 1] = PSEUDO; out[k, 2] = 0; out[k, 3] = status[j]
            k += 1
    for j in (1, n - 2):
        if status[j] != (K.FREE_FLAG | K.END):
            out[k, 0] = j; out[k, 1] = PSEUDO; out[k, 2] = K.FREE_FLAG | K.END; out[k, 3] = status[j]
            k += 1
    for j in range(1, n - 1):
        if not status[j] & K.FREE_FLAG:
            continue
        if not status[j + 1] & K.FREE_FLAG and overlay[j, K.PREV] != below[j]:
            out[k, 0] = j; out[k, 1] = PREV_LINK; out[k, 2] = below[j]; out[k, 3] = overlay[j, K.PREV]
            k += 1
        if not status[j - 1] & K.FREE_FLAG and overlay[j, K.NEXT] != above[j]:
            out[k, 0] = j; out[k, 1] = NEXT_LINK; out[k, 2] = above[j]; out[k, 3] = overlay[j, K.NEXT]
            k += 1
    seen = np.zeros(n, dtype=np.bool_)
    h = free_head
    while h != K.END:
        if h < 2 or h > cap + 1 or seen[h] or not status[h] & K.FREE_FLAG:
            out[k, 0] = h; out[k, 1] = FREE_LIST; out[k, 2] = -1; out[k, 3] = h
            k += 1
            break
        seen[h] = True
        h = status[h] & K.INDEX_MASK
    assigned = 0
    for j in range(2, cap + 2):
        if status[j] & K.FREE_FLAG:
            if not seen[j]:
                out[k, 0] = j; out[k, 1] = FREE_LIST_MISSING; out[k, 2] = 1; out[k, 3] = 0
                k += 1
        else:
            assigned += 1
    if assigned != live:
        out[k, 0] = -1; out[k, 1] = LIVE_COUNT; out[k, 2] = assigned; out[k, 3] = live
        k += 1
    return k


@nb.njit(cache=True)
def _walk_agrees(status, overlay, mask, expected):
    """Run the bin's own traversal and compare it with ``mask``.

    Returns -1 on agreement, else the position of the first disagreement.
    """
    out = np.empty(status.shape[0], dtype=np.int64)
    n = K.walk(status, overlay, out)
    if n < 0:
        return 0
    for p in range(n):
        if not mask[out[p]]:
            return p
    if n != expected:
        return n
    return -1


def _report(rows: np.ndarray) -> ValidityReport:
    return ValidityReport([Violation(int(r[0]), CONDITION_NAMES[int(r[1])], int(r[2]), int(r[3]))
                           for r in rows])


def scan_validity(b: Bin) -> ValidityReport:
    """Full scan of one bin.

    Checks the prev link of every free slot directly below an assigned slot,
    the next link of every free slot directly above one, the pseudo slots,
    free-list exactness and the live count. Links of free slots with free
    neighbours on both sides are not looked at.
    """
    out = np.empty((2 * b.size + 8, 4), dtype=np.int64)
    k = _scan(b.status, b.overlay, b.free_head, b.live_count, out)
    return _report(out[:k])


@nb.njit(cache=True)
def _free_top(status, overlay, free_head, strict, out):
    if free_head == K.END:
        return 0
    n = status.shape[0]
    if free_head < 2 or free_head > n - 3:
        out[0, 0] = free_head; out[0, 1] = FREE_LIST; out[0, 2] = -1; out[0, 3] = free_head
        return 1
    lo = free_head - 1
    while status[lo] & K.FREE_FLAG:
        lo -= 1
    hi = free_head + 1
    while status[hi] & K.FREE_FLAG:
        hi += 1
    k = 0
    check_prev = strict or status[free_head - 1] & K.FREE_FLAG
    check_next = strict or status[free_head + 1] & K.FREE_FLAG
    if check_prev and overlay[free_head, K.PREV] != lo:
        out[k, 0] = free_head; out[k, 1] = FREE_TOP; out[k, 2] = lo; out[k, 3] = overlay[free_head, K.PREV]
        k += 1
    if check_next and overlay[free_head, K.NEXT] != hi:
        out[k, 0] = free_head; out[k, 1] = FREE_TOP; out[k, 2] = hi; out[k, 3] = overlay[free_head, K.NEXT]
        k += 1
    return k


def check_free_top(b: Bin, strict: bool = True) -> ValidityReport:
    """Links of the slot on top of the free-list against a brute-force search.

    ``strict`` demands both links be exact. Otherwise only the links the next
    allocation reads are checked: prev when the slot below is free, next when
    the slot above is free. A never-used slot popped in ascending order has a
    stale prev link (its lower neighbour is assigned), so only slots pushed
    by a deallocation satisfy the strict form.
    """
    out = np.empty((2, 4), dtype=np.int64)
    k = _free_top(b.status, b.overlay, b.free_head, strict, out)
    return _report(out[:k])


# reference model

class Alloc(NamedTuple):
    pass


class Free(NamedTuple):
    pair: tuple[int, int]


class RetireScan(NamedTuple):
    pass


class ModelError(Exception):
    """The model was asked to do something impossible, e.g. free a dead pair."""


@dataclass
class _ModelBin:
    capacity: int
    freed: list[int] = field(default_factory=list)
    fresh: int = 2
    live: int = 0

    def full(self) -> bool:
        return self.live == self.capacity


class ReferenceModel:
    """Predicts pool behaviour from the operation sequence alone."""

    def __init__(self, bin_capacity: int):
        self.bin_capacity = bin_capacity
        self.order: list[int] = []
        self.bins: dict[int, _ModelBin] = {}
        self.masks: dict[int, np.ndarray] = {}
        self.live: list[tuple[int, int]] = []  # allocation order
        self.payloads: dict[tuple[int, int], bytes] = {}
        self.mru: int | None = None
        self.next_id = 1

    def copy(self) -> ReferenceModel:
        m = ReferenceModel.__new__(ReferenceModel)
        m.bin_capacity = self.bin_capacity
        m.order = list(self.order)
        m.bins = {k: _ModelBin(v.capacity, list(v.freed), v.fresh, v.live)
                  for k, v in self.bins.items()}
        m.masks = {k: v.copy() for k, v in self.masks.items()}
        m.live = list(self.live)
        m.payloads = dict(self.payloads)
        m.mru = self.mru
        m.next_id = self.next_id
        return m

    def predict_bin(self) -> int | None:
        """Bin the next allocation will use; None means a new bin."""
        if not self.order:
            return None
        start = self.order.index(self.mru) if self.mru is not None else 0
        n = len(self.order)
        for step in range(n):
            bid = self.order[(start + step) % n]
            if not self.bins[bid].full():
                return bid
        return None

    def alloc(self) -> tuple[int, int]:
        bid = self.predict_bin()
        if bid is None:
            bid = self.next_id
            self.next_id += 1
            self.order.append(bid)
            self.bins[bid] = _ModelBin(self.bin_capacity)
            self.masks[bid] = np.zeros(self.bin_capacity + 4, dtype=bool)
        mb = self.bins[bid]
        if mb.freed:
            slot = mb.freed.pop()
        else:
            slot = mb.fresh
            mb.fresh += 1
        mb.live += 1
        self.masks[bid][slot] = True
        self.mru = bid
        pair = (bid, slot)
        self.live.append(pair)
        return pair

    def free(self, pair: tuple[int, int], index: int | None = None) -> None:
        """Free ``pair``; ``index`` is its position in ``live`` when known."""
        bid, slot = pair
        mask = self.masks.get(bid)
        if mask is None or not 2 <= slot < mask.size - 2 or not mask[slot]:
            raise ModelError(f"{pair} is not live")
        mask[slot] = False
        mb = self.bins[bid]
        mb.freed.append(slot)
        mb.live -= 1
        if index is not None and self.live[index] == pair:
            del self.live[index]
        else:
            self.live.remove(pair)
        self.payloads.pop(pair, None)

    def retire(self) -> list[int]:
        gone = [bid for bid in self.order if self.bins[bid].live == 0]
        for bid in gone:
            self.order.remove(bid)
            del self.bins[bid]
            del self.masks[bid]
            if self.mru == bid:
                self.mru = None
        return gone

    def step(self, op):
        """Apply one operation; an allocation returns the predicted pair."""
        if isinstance(op, Alloc):
            return self.alloc()
        if isinstance(op, Free):
            return self.free(tuple(op.pair))
        if isinstance(op, RetireScan):
            return self.retire()
        raise TypeError(f"unknown operation {op!r}")

    def expected_slots(self, bid: int) -> np.ndarray:
        return np.flatnonzero(self.masks[bid])

    def expected_pairs(self) -> list[tuple[int, int]]:
        return [(bid, int(s)) for bid in self.order for s in self.expected_slots(bid)]

    def has_empty_bin(self) -> bool:
        return any(mb.live == 0 for mb in self.bins.values())


# traces

def format_trace(ops: Iterable[tuple]) -> str:
    lines = []
    for op in ops:
        lines.append("A" if op[0] == "A" else "R" if op[0] == "R" else f"F {op[1]}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str) -> list[tuple]:
    ops = []
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts == ["A"]:
            ops.append(("A",))
        elif parts == ["R"]:
            ops.append(("R",))
        elif len(parts) == 2 and parts[0] == "F" and parts[1].isdigit():
            ops.append(("F", int(parts[1])))
        else:
            raise ValueError(f"line {n}: cannot parse {line!r}")
    return ops


# lockstep checking

class Divergence(Exception):
    """Pool and model disagree, or the pool's structure is invalid."""


class Lockstep:
    """A pool and a model driven together, checked after every operation."""

    def __init__(self, bin_capacity: int, payload_size: int = 8,
                 kernels: K.Kernels | None = None):
        self.pool = Pool(payload_size, bin_capacity, kernels=kernels)
        self.model = ReferenceModel(bin_capacity)
        self.counter = 0
        self.max_writes = {"A": 0, "F": 0}
        self.max_reads = 0

    def copy(self) -> Lockstep:
        other = Lockstep.__new__(Lockstep)
        other.pool = self.pool.copy()
        other.model = self.model.copy()
        other.counter = self.counter
        other.max_writes = dict(self.max_writes)
        other.max_reads = self.max_reads
        return other

    def _payload(self) -> bytes:
        self.counter += 1
        return self.counter.to_bytes(8, "little").ljust(self.pool.payload_size, b"\xa5")[
            : self.pool.payload_size]

    def apply(self, op: tuple) -> None:
        pool, model = self.pool, self.model
        kind = op[0]
        touched = None
        if kind == "A":
            bid = model.predict_bin()
            if bid is not None:
                # strict for slots pushed by a deallocation
                top = check_free_top(pool.bin(bid), strict=bool(model.bins[bid].freed))
                if not top:
                    raise Divergence(f"free-top invalid before allocation in bin {bid}: {top}")
            h = pool.allocate()
            expected = model.alloc()
            if tuple(h) != expected:
                raise Divergence(f"allocate returned {tuple(h)}, model predicted {expected}")
            touched = pool.bin(h.bin_id)
            self._count("A", touched)
            data = self._payload()
            pool.write(h, data)
            model.payloads[expected] = data
        elif kind == "F":
            k = op[1]
            if not 0 <= k < len(model.live):
                raise ModelError(f"F {k} with {len(model.live)} live objects")
            pair = model.live[k]
            pool.deallocate(Handle(*pair))
            model.free(pair, k)
            touched = pool.bin(pair[0])
            self._count("F", touched)
        elif kind == "R":
            got = pool.retire_empty_bins()
            gone = model.retire()
            if got != len(gone):
                raise Divergence(f"retired {got} bins, model expected {len(gone)}")
        else:
            raise ValueError(f"unknown op {op!r}")
        if touched is not None:
            report = scan_validity(touched)
            if not report:
                raise Divergence(f"bin {touched.id} invalid after {format_trace([op]).strip()}: {report}")
        if kind != "F":
            self.check_order()
        if touched is not None:
            self.check_iteration(touched)

    def _count(self, kind: str, b: Bin) -> None:
        w, r = b.last_op_writes, b.last_op_reads
        self.max_writes[kind] = max(self.max_writes[kind], w)
        self.max_reads = max(self.max_reads, r)
        limit = MAX_ALLOC_WRITES if kind == "A" else MAX_DEALLOC_WRITES
        if w > limit:
            raise Divergence(f"{kind} wrote {w} slot fields (limit {limit})")
        if r > MAX_OP_READS:
            raise Divergence(f"{kind} read {r} slot fields (limit {MAX_OP_READS})")

    def check_order(self) -> None:
        ids = [b.id for b in self.pool.bins()]
        if ids != self.model.order:
            raise Divergence(f"bin order {ids} != model {self.model.order}")

    def check_iteration(self, b: Bin | None = None) -> None:
        """Forward traversal of ``b`` (default: every bin) matches the model.

        Operations only ever change the bin they touch, so per-operation
        checks pass that bin alone.
        """
        model = self.model
        for b in (self.pool.bins() if b is None else (b,)):
            if _walk_agrees(b.status, b.overlay, model.masks[b.id], model.bins[b.id].live) >= 0:
                try:
                    got = b.assigned().tolist()
                except UsageError as exc:
                    raise Divergence(str(exc)) from None
                want = model.expected_slots(b.id).tolist()
                raise Divergence(f"bin {b.id} traversal {got} != model {want}")

    def check_all(self) -> None:
        """Every bin valid, both traversals consistent, payloads intact."""
        self.check_order()
        self.check_iteration()
        for b in self.pool.bins():
            report = scan_validity(b)
            if not report:
                raise Divergence(f"bin {b.id} invalid: {report}")
            back = b.assigned_reversed()[::-1]
            if not np.array_equal(back, self.model.expected_slots(b.id)):
                raise Divergence(f"bin {b.id} reverse traversal disagrees with the model")
        for pair, data in self.model.payloads.items():
            if self.pool.read(Handle(*pair)) != data:
                raise Divergence(f"payload of {pair} changed")


# fuzzing

@dataclass
class FuzzVerdict:
    passed: bool
    mode: str
    seed: int | None
    op_count: int
    bin_capacity: int
    ops_run: int = 0
    explored: int = 0
    failure: str | None = None
    trace: list[tuple] = field(default_factory=list)
    max_alloc_writes: int = 0
    max_dealloc_writes: int = 0
    max_reads: int = 0

    def __bool__(self) -> bool:
        return self.passed

    def summary(self) -> str:
        state = "pass" if self.passed else "FAIL"
        parts = [f"{state} mode={self.mode} capacity={self.bin_capacity}"]
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        parts.append(f"ops={self.ops_run}")
        if self.explored:
            parts.append(f"sequences={self.explored}")
        if self.failure:
            parts.append(f"failure: {self.failure}")
        return " ".join(parts)


def random_ops(seed: int, op_count: int, bin_capacity: int):
    """Deterministic op stream; occupancy drifts around a few bins' worth."""
    rng = random.Random(seed)
    target = max(8, int(2.5 * bin_capacity))
    live = 0
    empties_possible = False
    for _ in range(op_count):
        u = rng.random()
        if u < 0.01 and empties_possible:
            op = ("R",)
            empties_possible = False
        elif live == 0 or u < (0.55 if live < target else 0.45):
            op = ("A",)
        else:
            op = ("F", rng.randrange(live))
            empties_possible = True
        live += {"A": 1, "F": -1, "R": 0}[op[0]]
        yield op


def replay(ops: Sequence[tuple], bin_capacity: int, *, kernels: K.Kernels | None = None,
           payload_size: int = 8, strict: bool = True) -> tuple[str | None, list[tuple]]:
    """Run ``ops`` in lockstep; returns (failure message or None, ops executed).

    With ``strict=False`` operations that do not apply (freeing beyond the
    live count) are skipped instead of failing, which shrinking relies on.
    """
    ls = Lockstep(bin_capacity, payload_size, kernels)
    done: list[tuple] = []
    for op in ops:
        if op[0] == "F" and op[1] >= len(ls.model.live) and not strict:
            continue
        done.append(op)
        try:
            ls.apply(op)
        except (Divergence, UsageError) as exc:
            return str(exc), done
    try:
        ls.check_all()
    except (Divergence, UsageError) as exc:
        return str(exc), done
    return None, done


def shrink(ops: Sequence[tuple], bin_capacity: int, *,
           kernels: K.Kernels | None = None) -> list[tuple]:
    """Greedy chunk deletion; the result still fails."""
    failure, ops = replay(ops, bin_capacity, kernels=kernels, strict=False)
    if failure is None:
        return list(ops)
    ops = list(ops)
    chunk = max(1, len(ops) // 2)
    while chunk >= 1:
        i = 0
        while i < len(ops):
            candidate = ops[:i] + ops[i + chunk:]
            failure, done = replay(candidate, bin_capacity, kernels=kernels, strict=False)
            if failure is not None:
                ops = done
            else:
                i += chunk
        chunk //= 2
    return ops


def fuzz_sequential(seed: int, op_count: int, bin_capacity: int, *,
                    kernels: K.Kernels | None = None, minimize: bool = True) -> FuzzVerdict:
    ls = Lockstep(bin_capacity, kernels=kernels)
    verdict = FuzzVerdict(True, "sequential", seed, op_count, bin_capacity)
    trace: list[tuple] = []
    try:
        for n, op in enumerate(random_ops(seed, op_count, bin_capacity)):
            trace.append(op)
            ls.apply(op)
            verdict.ops_run = n + 1
            if (n + 1) % 4096 == 0:
                ls.check_all()
        ls.check_all()
    except (Divergence, UsageError) as exc:
        verdict.passed = False
        verdict.failure = str(exc)
        verdict.trace = shrink(trace, bin_capacity, kernels=kernels) if minimize else trace
    verdict.max_alloc_writes = ls.max_writes["A"]
    verdict.max_dealloc_writes = ls.max_writes["F"]
    verdict.max_reads = ls.max_reads
    return verdict


def fuzz_exhaustive(bin_capacity: int, depth: int = 10, *,
                    kernels: K.Kernels | None = None) -> FuzzVerdict:
    """Every op sequence up to ``depth``, depth-first, checked after each op.

    ``R`` is only tried when some bin is empty; otherwise it changes nothing.
    """
    verdict = FuzzVerdict(True, "exhaustive", None, depth, bin_capacity)
    stats = {"A": 0, "F": 0, "reads": 0, "ops": 0, "explored": 0}

    def children(ls: Lockstep) -> list[tuple]:
        ops = [("A",)]
        ops.extend(("F", k) for k in range(len(ls.model.live)))
        if ls.model.has_empty_bin():
            ops.append(("R",))
        return ops

    def visit(ls: Lockstep, path: list[tuple]) -> list[tuple] | None:
        stats["explored"] += 1
        if len(path) == depth:
            return None
        for op in children(ls):
            nxt = ls.copy()
            stats["ops"] += 1
            try:
                nxt.apply(op)
                if len(path) + 1 == depth:
                    nxt.check_all()
            except (Divergence, UsageError) as exc:
                verdict.failure = str(exc)
                return path + [op]
            stats["A"] = max(stats["A"], nxt.max_writes["A"])
            stats["F"] = max(stats["F"], nxt.max_writes["F"])
            stats["reads"] = max(stats["reads"], nxt.max_reads)
            bad = visit(nxt, path + [op])
            if bad is not None:
                return bad
        return None

    bad = visit(Lockstep(bin_capacity, kernels=kernels), [])
    if bad is not None:
        bad = shrink(bad, bin_capacity, kernels=kernels)
    verdict.explored = stats["explored"]
    verdict.ops_run = stats["ops"]
    verdict.max_alloc_writes = stats["A"]
    verdict.max_dealloc_writes = stats["F"]
    verdict.max_reads = stats["reads"]
    if bad is not None:
        verdict.passed = False
        verdict.trace = bad
    return verdict


def fuzz_concurrent(seed: int, op_count: int, bin_capacity: int, threads: int = 4, *,
                    retire_every: int = 0) -> FuzzVerdict:
    """Hammer one SharedPool from ``threads`` workers, then compare end states.

    Each worker allocates objects tagged with a unique payload and frees
    random live objects, some of them allocated by other workers. At the end
    the multiset of payloads found by traversal must equal the payloads of
    objects allocated and not freed, and every bin must scan valid.
    """
    from .sync import SharedPool

    sp = SharedPool(8, bin_capacity)
    verdict = FuzzVerdict(True, f"concurrent({threads})", seed, op_count, bin_capacity)
    per_thread = [op_count // threads + (1 if t < op_count % threads else 0) for t in range(threads)]
    # objects handed between threads for cross-thread frees
    mailbox: list[Handle] = []
    mailbox_lock = threading.Lock()
    expected: list[dict[Handle, bytes]] = [dict() for _ in range(threads)]
    mailbox_owner: dict[Handle, bytes] = {}
    errors: list[str] = []
    start = threading.Barrier(threads)

    def worker(t: int) -> None:
        rng = random.Random(seed * 1_000_003 + t)
        mine: list[Handle] = []
        live = expected[t]
        serial = 0
        target = 2 * bin_capacity
        start.wait()
        try:
            for n in range(per_thread[t]):
                if retire_every and t == 0 and n % retire_every == retire_every - 1:
                    sp.retire_empty_bins()
                    continue
                if not mine or rng.random() < (0.55 if len(mine) < target else 0.45):
                    h = sp.allocate()
                    if h in live:
                        errors.append(f"thread {t}: handle {h} handed out twice")
                        return
                    serial += 1
                    data = (t << 48 | serial).to_bytes(8, "little")
                    sp.write(h, data)
                    live[h] = data
                    mine.append(h)
                    if rng.random() < 0.1:
                        mine.pop()
                        del live[h]
                        with mailbox_lock:
                            mailbox_owner[h] = data
                            mailbox.append(h)
                else:
                    if rng.random() < 0.2:
                        with mailbox_lock:
                            h = mailbox.pop() if mailbox else None
                            if h is not None:
                                del mailbox_owner[h]
                        if h is not None:
                            sp.deallocate(h)
                            continue
                    k = rng.randrange(len(mine))
                    mine[k], mine[-1] = mine[-1], mine[k]
                    h = mine.pop()
                    sp.deallocate(h)
                    del live[h]
        except Exception as exc:  # reported as the verdict
            errors.append(f"thread {t}: {type(exc).__name__}: {exc}")

    workers = [threading.Thread(target=worker, args=(t,)) for t in range(threads)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    verdict.ops_run = op_count
    if errors:
        verdict.passed = False
        verdict.failure = errors[0]
        return verdict
    want: dict[Handle, bytes] = dict(mailbox_owner)
    for t in range(threads):
        overlap = want.keys() & expected[t].keys()
        if overlap:
            verdict.passed = False
            verdict.failure = f"handles live in two owners: {sorted(overlap)[:3]}"
            return verdict
        want.update(expected[t])
    pool = sp.pool
    for b in pool.bins():
        report = scan_validity(b)
        if not report:
            verdict.passed = False
            verdict.failure = f"bin {b.id} invalid: {report}"
            return verdict
    found = sorted(pool.read(h) for h in pool.handles())
    if found != sorted(want.values()):
        verdict.passed = False
        verdict.failure = (f"live multiset mismatch: pool has {len(found)} objects, "
                           f"expected {len(want)}")
    return verdict


def fuzz(seed: int, op_count: int, bin_capacity: int, mode: str = "sequential", *,
         threads: int = 4, depth: int = 10, kernels: K.Kernels | None = None) -> FuzzVerdict:
    """Dispatch to the sequential, exhaustive or concurrent fuzzer."""
    if mode == "sequential":
        return fuzz_sequential(seed, op_count, bin_capacity, kernels=kernels)
    if mode == "exhaustive":
        return fuzz_exhaustive(bin_capacity, depth, kernels=kernels)
    if mode == "concurrent":
        return fuzz_concurrent(seed, op_count, bin_capacity, threads)
    raise ValueError(f"unknown fuzz mode {mode!r}")

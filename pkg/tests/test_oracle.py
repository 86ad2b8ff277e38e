import pytest

from travalloc import Bin
from travalloc._kernels import CORRECTIONS, kernels
from travalloc.oracle import (
    FREE_LIST, FREE_LIST_MISSING, FREE_TOP, LIVE_COUNT, NEXT_LINK, PREV_LINK, PSEUDO,
    CONDITION_NAMES, Lockstep, ModelError, ReferenceModel, check_free_top, format_trace,
    fuzz, fuzz_exhaustive, fuzz_sequential, parse_trace, random_ops, replay, scan_validity,
    shrink,
)


def conditions(report):
    return {(v.slot, v.condition) for v in report.violations}


def test_fresh_bin_is_valid():
    for cap in (1, 2, 4, 100):
        assert scan_validity(Bin(cap, 8))
        assert check_free_top(Bin(cap, 8), strict=True)


def test_corrupt_leading_link_is_reported():
    b = Bin(4, 8)
    b.allocate()
    b.set_links(1, 5, 0)
    report = scan_validity(b)
    assert not report
    assert conditions(report) == {(1, CONDITION_NAMES[NEXT_LINK])}
    v = report.violations[0]
    assert (v.expected, v.found) == (2, 5)


def test_corrupt_prev_link_is_reported():
    b = Bin(4, 8)
    for _ in range(3):
        b.allocate()
    b.deallocate(3)
    b.set_links(3, 4, 0)
    assert conditions(scan_validity(b)) == {(3, CONDITION_NAMES[PREV_LINK])}


def test_interior_free_links_are_not_checked():
    b = Bin(6, 8)
    b.allocate()
    # slots 3..7 free; 4..6 are interior and their links are don't-care
    b.set_links(5, 999, -7)
    assert scan_validity(b)


def test_free_list_corruptions():
    b = Bin(4, 8)
    b.status[3] = 0x80000000 | 2  # free-list 2 -> 3 -> 2 cycle
    names = {v.condition for v in scan_validity(b).violations}
    assert CONDITION_NAMES[FREE_LIST] in names
    assert CONDITION_NAMES[FREE_LIST_MISSING] in names


def test_pseudo_and_live_count_corruptions():
    b = Bin(4, 8)
    b.status[0] |= 0x80000000
    assert CONDITION_NAMES[PSEUDO] in {v.condition for v in scan_validity(b).violations}
    c = Bin(4, 8)
    c.allocate()
    c.meta[2] = 3
    assert CONDITION_NAMES[LIVE_COUNT] in {v.condition for v in scan_validity(c).violations}


def test_literal_free_top_check_fires_after_two_allocations():
    # A never-used free-list top keeps its stale prev link (0), although the
    # nearest assigned slot below it is 3. The next allocation never reads
    # that link because slot 3 is assigned, so the relaxed check passes.
    b = Bin(4, 8)
    b.allocate(), b.allocate()
    strict = check_free_top(b, strict=True)
    assert not strict
    assert [(v.slot, v.condition, v.expected, v.found) for v in strict.violations] == [
        (4, CONDITION_NAMES[FREE_TOP], 3, 0)]
    assert check_free_top(b, strict=False)
    assert scan_validity(b)


def test_free_top_holds_strictly_after_deallocations():
    ls = Lockstep(6)
    for op in parse_trace("A\nA\nA\nA\nF 1\nF 2\nF 0\n"):
        ls.apply(op)
        b = ls.pool.bin(1)
        if ls.model.bins[1].freed:
            assert check_free_top(b, strict=True)


def test_model_examples():
    m = ReferenceModel(4)
    assert m.alloc() == (1, 2)
    second = m.alloc()
    m.free(second)
    assert m.alloc() == second
    with pytest.raises(ModelError):
        m.free((1, 5))
    with pytest.raises(ModelError):
        m.free((7, 2))


def test_model_opens_bins_and_resumes_at_most_recent():
    m = ReferenceModel(2)
    pairs = [m.alloc() for _ in range(5)]
    assert pairs == [(1, 2), (1, 3), (2, 2), (2, 3), (3, 2)]
    m.free((1, 3))
    assert m.alloc() == (3, 3)  # most recent bin still has room
    assert m.alloc() == (1, 3)
    m.free((2, 2)), m.free((2, 3))
    assert m.retire() == [2]
    assert m.order == [1, 3]


def test_model_step_api():
    from travalloc.oracle import Alloc, Free, RetireScan
    m = ReferenceModel(1)
    assert m.step(Alloc()) == (1, 2)
    m.step(Free((1, 2)))
    assert m.step(RetireScan()) == [1]


def test_trace_round_trip():
    ops = [("A",), ("A",), ("F", 1), ("R",), ("F", 0)]
    text = format_trace(ops)
    assert text == "A\nA\nF 1\nR\nF 0\n"
    assert parse_trace(text) == ops
    with pytest.raises(ValueError):
        parse_trace("A\nX 3\n")
    with pytest.raises(ValueError):
        parse_trace("F -1\n")


def test_random_ops_deterministic():
    assert list(random_ops(5, 500, 8)) == list(random_ops(5, 500, 8))
    assert list(random_ops(5, 500, 8)) != list(random_ops(6, 500, 8))


def test_sequential_fuzz_capacity_64():
    v = fuzz_sequential(0, 10_000, 64)
    assert v.passed, v.failure
    assert v.ops_run == 10_000
    assert v.max_alloc_writes <= 3 and v.max_dealloc_writes <= 5 and v.max_reads <= 5


def test_exhaustive_capacity_2_depth_8():
    v = fuzz_exhaustive(2, 8)
    assert v.passed
    assert v.explored > 1000
    assert f"sequences={v.explored}" in v.summary()


@pytest.mark.parametrize("correction", sorted(CORRECTIONS))
def test_each_disabled_correction_is_caught_by_depth_4(correction):
    k = kernels(frozenset({correction}))
    for cap in (1, 2, 3, 4):
        v = fuzz_exhaustive(cap, 4, kernels=k)
        assert not v.passed
        assert 1 <= len(v.trace) <= 4
        failure, _ = replay(v.trace, cap, kernels=k)
        assert failure is not None


@pytest.mark.parametrize("correction", sorted(CORRECTIONS))
def test_sequential_fuzz_catches_disabled_correction(correction):
    v = fuzz_sequential(1, 2000, 8, kernels=kernels(frozenset({correction})))
    assert not v.passed
    assert "invalid" in v.failure or "traversal" in v.failure
    assert len(v.trace) <= 5


def test_shrink_keeps_failure_and_reduces():
    k = kernels(frozenset({"dealloc_next"}))
    long_trace = list(random_ops(2, 300, 4))
    failure, _ = replay(long_trace, 4, kernels=k)
    assert failure is not None
    small = shrink(long_trace, 4, kernels=k)
    assert len(small) < 10
    assert replay(small, 4, kernels=k)[0] is not None


def test_replay_of_correct_kernels_passes():
    assert replay(list(random_ops(9, 3000, 4)), 4) == (None, list(random_ops(9, 3000, 4)))


def test_unknown_correction_rejected():
    with pytest.raises(ValueError):
        kernels(frozenset({"nope"}))


def test_fuzz_dispatch():
    assert fuzz(0, 500, 4).passed
    assert fuzz(0, 0, 1, mode="exhaustive", depth=3).passed
    assert fuzz(0, 2000, 4, mode="concurrent", threads=2).passed
    with pytest.raises(ValueError):
        fuzz(0, 1, 1, mode="bogus")

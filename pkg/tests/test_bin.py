import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from travalloc import Bin, BinFullError, SizeError, StatusWord, UsageError, slot_footprint
from travalloc.bin import END, FREE_FLAG, MAX_CAPACITY
from travalloc.oracle import check_free_top, scan_validity


def brute_next(b, i):
    j = i + 1
    while not b.is_assigned(j):
        j += 1
    return j


def brute_prev(b, i):
    j = i - 1
    while not b.is_assigned(j):
        j -= 1
    return j


def test_init_layout_capacity_4():
    b = Bin(4, 24)
    assert b.size == 8
    assert b.free_head == 2
    assert b.links(1) == (7, 0)
    assert b.is_assigned(0) and b.is_assigned(7)
    assert b.status_word(1) == StatusWord(FREE_FLAG | END)
    assert b.status_word(6) == StatusWord(FREE_FLAG | END)
    # free-list threads user slots ascending
    assert [b.status_word(j).next_free_index for j in (2, 3, 4)] == [3, 4, 5]
    assert b.status_word(5).next_free_index == END
    for j in range(1, 7):
        assert b.links(j) == (7, 0)
    assert b.live_count == 0


def test_init_smallest_bin():
    b = Bin(1, 8)
    assert b.size == 5
    assert b.free_head == 2
    assert b.status_word(2).free
    assert b.status_word(2).next_free_index == END


def test_status_word_views():
    w = StatusWord(FREE_FLAG | 17)
    assert w.free and w.next_free_index == 17
    assert not StatusWord(17).free


@pytest.mark.parametrize("capacity", [0, -1, MAX_CAPACITY + 1])
def test_capacity_out_of_range(capacity):
    with pytest.raises(SizeError):
        Bin(capacity, 8)


def test_zero_payload_rejected():
    with pytest.raises(ValueError):
        Bin(4, 0)


def test_first_allocation_fixes_leading_link():
    b = Bin(4, 24)
    assert b.allocate() == 2
    assert b.free_head == 3
    assert b.links(1).next_assigned == 2
    # the upper boundary of the free run 3..6 is slot 6
    assert b.links(6).prev_assigned == 2
    # slot 3 keeps its stale init link; only the run boundaries are fixed
    assert b.links(3).prev_assigned == 0
    assert b.last_op_writes == 3


def test_lifo_reuse():
    b = Bin(4, 24)
    b.allocate(), b.allocate()
    b.deallocate(2)
    assert b.allocate() == 2


def test_deallocate_between_assigned_neighbours():
    b = Bin(4, 24)
    for _ in range(3):
        b.allocate()
    b.deallocate(3)
    assert b.links(3) == (4, 2)
    assert b.free_head == 3
    # status word + two own links, no neighbour corrections
    assert b.last_op_writes == 3
    assert b.allocate() == 3
    assert scan_validity(b)


def test_deallocate_next_to_free_run():
    # slot 5 must be assigned for slot 4's next link to be 5
    b = Bin(4, 24)
    for _ in range(4):
        b.allocate()
    b.deallocate(3)
    b.deallocate(4)
    assert b.links(4) == (5, 2)
    assert b.links(3).next_assigned == 5
    assert b.free_head == 4
    assert b.last_op_writes == 4
    assert scan_validity(b)
    assert check_free_top(b)


def test_deallocate_with_free_slot_above():
    b = Bin(4, 24)
    for _ in range(3):
        b.allocate()
    b.deallocate(3)
    b.deallocate(4)
    # slot 5 is free with link next 7, so the run 3..6 is skipped in one hop
    assert b.links(4) == (7, 2)
    assert b.links(3).next_assigned == 7
    assert b.links(6).prev_assigned == 2
    assert b.next_assigned(2) == 7


def test_deallocate_errors():
    b = Bin(4, 24)
    b.allocate()
    with pytest.raises(UsageError, match="double free"):
        b.deallocate(3)
    with pytest.raises(UsageError, match="pseudo"):
        b.deallocate(1)
    with pytest.raises(UsageError, match="pseudo"):
        b.deallocate(6)
    with pytest.raises(UsageError, match="outside"):
        b.deallocate(8)
    with pytest.raises(UsageError, match="outside"):
        b.deallocate(-1)
    b.deallocate(2)
    with pytest.raises(UsageError, match="double free"):
        b.deallocate(2)


def test_full_bin():
    b = Bin(1, 8)
    assert not b.is_full() and b.is_empty()
    assert b.allocate() == 2
    assert b.is_full()
    with pytest.raises(BinFullError):
        b.allocate()
    b.deallocate(2)
    assert b.is_empty() and not b.is_full()


def test_stepping_examples():
    b = Bin(4, 24)
    assert b.next_assigned(0) == 7
    assert b.prev_assigned(7) == 0
    b.allocate(), b.allocate(), b.allocate()
    assert b.next_assigned(2) == 3
    b.deallocate(3)
    assert b.next_assigned(2) == 4
    assert b.prev_assigned(4) == 2
    b.deallocate(2)
    b.allocate()  # takes 2 back
    assert b.prev_assigned(4) == 2
    c = Bin(4, 24)
    for _ in range(3):
        c.allocate()
    c.deallocate(2)
    assert c.prev_assigned(4) == 3


def test_stepping_errors():
    b = Bin(4, 24)
    with pytest.raises(UsageError):
        b.next_assigned(7)
    with pytest.raises(UsageError):
        b.next_assigned(2)  # free
    with pytest.raises(UsageError):
        b.prev_assigned(0)


def test_payload_round_trip_keeps_status():
    b = Bin(4, 24)
    i, j = b.allocate(), b.allocate()
    before = b.status.copy()
    b.write(i, bytes(range(24)))
    b.write(j, b"\xff" * 24)
    assert b.read(i) == bytes(range(24))
    assert np.array_equal(b.status, before)
    assert scan_validity(b)
    with pytest.raises(ValueError):
        b.write(i, b"short")
    b.deallocate(i)
    with pytest.raises(UsageError):
        b.read(i)


@pytest.mark.parametrize("payload,footprint", [(24, 28), (16, 20), (1, 20), (8, 20), (17, 28), (32, 36)])
def test_slot_footprint(payload, footprint):
    assert slot_footprint(payload) == footprint


def test_bytes_reserved():
    b = Bin(64_000, 24)
    assert b.bytes_reserved == 64_004 * 28 + 64


@settings(max_examples=200, deadline=None)
@given(capacity=st.integers(1, 12), choices=st.lists(st.integers(0, 10**6), max_size=80))
def test_random_ops_keep_traversal_exact(capacity, choices):
    b = Bin(capacity, 16)
    live = []
    for c in choices:
        if live and (b.is_full() or c % 3 == 0):
            b.deallocate(live.pop(c % len(live)))
            assert b.last_op_writes <= 5
        else:
            live.append(b.allocate())
            assert b.last_op_writes <= 3
        assert scan_validity(b)
        assert b.assigned().tolist() == sorted(live)
        assert b.assigned_reversed().tolist() == sorted(live, reverse=True)
        for i in [0] + live:
            assert b.next_assigned(i) == brute_next(b, i)
        for i in live + [b.last]:
            assert b.prev_assigned(i) == brute_prev(b, i)
        assert b.live_count == len(live)

import numpy as np
import pytest

from travalloc import bench
from travalloc.bench import BenchConfig


def small(**kw):
    return BenchConfig(**{"objects": 5_000, "bin_size": 1_000, "repetitions": 3, **kw})


def test_workload_kernel_examples():
    e = np.array([5, 6, 7], dtype=np.uint64)
    bench.workload_kernel(e, np.zeros(20, dtype=np.int64))
    assert e.tolist() == [5, 6, 7]
    bench.workload_kernel(e, np.ones(20, dtype=np.int64))
    assert e.tolist() == [25, 46, 87]


def test_random_values_seeded():
    a = bench.draw_random_values(3)
    assert a.shape == (bench.RANDOM_VALUES,)
    assert np.array_equal(a, bench.draw_random_values(3))
    assert a.min() >= 0 and a.max() < 2**31


def test_config_validation():
    with pytest.raises(ValueError):
        BenchConfig(objects=0)
    with pytest.raises(ValueError):
        BenchConfig(gap_percent=101)
    with pytest.raises(ValueError):
        BenchConfig(threads=0)
    assert BenchConfig().thread_counts() == bench.THREAD_SWEEP
    assert BenchConfig(threads=4).thread_counts() == (1, 4)


def test_iter_checksums_repeat_and_match_array():
    recs = bench.run_iter_bench(small(), gaps=(0.0, 10.0))
    per_rep = {}
    for r in recs:
        per_rep.setdefault((r.variant, r.gap_percent), set()).add(r.checksum)
        assert r.seconds >= 0
    assert all(len(v) == 1 for v in per_rep.values())
    dense = per_rep[("pool", 0.0)]
    assert dense == per_rep[("array", 0.0)] == per_rep[("linked-list", 0.0)]
    assert per_rep[("pool", 10.0)] != dense
    assert sum(1 for r in recs if r.rep == "median") == 4


def test_gap_pool_has_expected_live_count():
    pool = bench.filled_pool(10_000, 1_000, 50.0, seed=1)
    assert 4_500 < len(pool) < 5_500
    assert len(bench.filled_pool(10_000, 1_000, 50.0, seed=1)) == len(pool)


def test_alloc_bench_single_object():
    recs = bench.run_alloc_bench(small(objects=1, repetitions=1), bin_sizes=(4000,))
    assert {r.variant for r in recs} == {"pool", "general", "growable-array", "linked-list"}
    assert all(r.objects == 1 for r in recs)


def test_mt_alloc_counts_every_handle():
    recs = bench.run_mt_alloc_bench(small(objects=2_000, threads=4, repetitions=1))
    assert {r.variant for r in recs} == {"global-lock", "shared-pool", "unsynchronized"}
    assert all(r.checksum == 2_000 for r in recs)


def test_par_iter_checksum_independent_of_threads():
    recs = bench.run_par_iter_bench(small(objects=8_000, threads=2, repetitions=1))
    assert len({r.checksum for r in recs}) == 1
    assert bench.speedups(recs)[1] == 1.0


def test_csv_header_once_and_append(tmp_path):
    path = str(tmp_path / "out.csv")
    recs = bench.report_memory(small())
    bench.write_csv(recs, path)
    bench.write_csv(recs, path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == ",".join(bench.CSV_COLUMNS)
    assert sum(1 for line in lines if line.startswith("benchmark,")) == 1
    assert len(bench.read_csv(path)) == 2 * len(recs)


def test_memory_accounting_matches_formula():
    recs = bench.report_memory(small(objects=2_500))
    by = {r.variant: r.bytes_reserved for r in recs}
    assert by["pool"] == by["pool-formula"] == 3 * (1_004 * 28 + 64)
    assert by["payload-bound"] == 2_500 * 24


def test_parallel_visit_releases_the_gil():
    # A kernel holding the GIL keeps this thread frozen until it returns, so
    # the spin loop below would end almost at once. With the GIL released
    # both threads share the CPU and the loop runs for most of the call.
    import threading
    import time
    pool = bench.filled_pool(4_000_000, 4_000_000)
    b = pool.head
    values = bench.draw_random_values(0)
    t0 = time.perf_counter()
    bench._visit_bin_nogil(b.status, b.overlay, values)
    call = time.perf_counter() - t0
    started = threading.Event()
    done = threading.Event()

    def work():
        started.set()
        bench._visit_bin_nogil(b.status, b.overlay, values)
        done.set()

    th = threading.Thread(target=work)
    th.start()
    started.wait()
    t0 = time.perf_counter()
    while not done.is_set():
        pass
    spun = time.perf_counter() - t0
    th.join()
    assert spun > 0.5 * call

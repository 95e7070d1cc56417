"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

from preissue.catalog import SyscallType, open_at, pread
from preissue.device import DeviceModel, makespan_law
from preissue.engine import PhantomEffect, purity_violations
from preissue.executor import SimExecutor
from preissue.fs import FileImage, VirtualFileStore
from preissue.oracle import checked_run, run_sync_oracle
from preissue.trace import EventKind, check_equivalence
from preissue.workloads import WORKLOADS, workload_config
from preissue.workloads import copyloop, lsm, statloop
from preissue.workloads.base import Harness, open_executor
from preissue.workloads.copyloop import CopyLoopConfig
from preissue.workloads.lsm import LSMConfig
from preissue.workloads.statloop import StatLoopConfig

if __package__ in (None, ""):
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent))
    from tests import mutations
    from tests.oracles.statloop_eventsim import stat_loop_makespan
    from tests.randgraph import generate, run_random
else:
    from . import mutations
    from .oracles.statloop_eventsim import stat_loop_makespan
    from .randgraph import generate, run_random

DEPTHS = (0, 1, 4, 16)
EXECUTORS = ("sim", "worker-pool")
SEEDS = range(20)
RANDOM_GRAPHS = 200
# frozen before the build from tests/oracles/statloop_eventsim.py (N=1000, P=16, 100 us)
GOLDEN_STAT_DEPTH16 = 6400.0


@dataclass
class MatrixCell:
    workload: str
    executor: str
    seed: int
    depth: int
    equivalent: bool
    reason: str
    violations: int
    max_inflight: int
    outputs: object


@dataclass
class Matrix:
    cells: list[MatrixCell] = field(default_factory=list)
    sim_seconds: float = 0.0


@pytest.fixture(scope="module")
def matrix() -> Matrix:
    m = Matrix()
    for executor in EXECUTORS:
        start = time.perf_counter()
        for name in WORKLOADS:
            for seed in SEEDS:
                config = workload_config(name, seed)
                ref = run_sync_oracle(name, config)
                for depth in DEPTHS:
                    c = checked_run(name, depth, executor, config=config, reference=ref)
                    m.cells.append(MatrixCell(name, executor, seed, depth, bool(c.verdict),
                                              c.verdict.reason, c.purity_violations,
                                              c.run.max_inflight, c.run.outputs))
        if executor == "sim":
            m.sim_seconds = time.perf_counter() - start
    return m


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}")
        assert ok, detail
    return emit


def test_c01_external_synchrony(matrix, report):
    bad = [c for c in matrix.cells if not c.equivalent]
    report(1, not bad and matrix.sim_seconds < 60,
           f"{len(matrix.cells) - len(bad)}/{len(matrix.cells)} runs equivalent to depth 0; "
           f"sim half took {matrix.sim_seconds:.1f} s"
           + (f"; first failure {bad[0]}" if bad else ""))


def test_c02_purity_gate(matrix, report):
    matrix_violations = sum(c.violations for c in matrix.cells)
    graph_violations = 0
    engine_errors = []
    prepared_past_weak = 0
    for seed in range(RANDOM_GRAPHS):
        prog = generate(seed)
        for depth in (1, 4, 16):
            try:
                run = run_random(prog, depth)
            except PhantomEffect as exc:  # engine assertion tripped
                engine_errors.append((seed, depth, str(exc)))
                continue
            for s in run.sessions:
                graph_violations += len(purity_violations(s))
                prepared_past_weak += sum(1 for r in s.prepare_log if r.weak)
    ok = matrix_violations == 0 and graph_violations == 0 and not engine_errors
    report(2, ok, f"{matrix_violations} violations in the matrix, {graph_violations} in "
                  f"{RANDOM_GRAPHS} random graphs x 3 depths, {len(engine_errors)} engine "
                  f"assertions; {prepared_past_weak} pure instances prepared past weak edges")


def test_c03_stat_loop_speedup(report):
    config = StatLoopConfig(entries=1000)
    device = DeviceModel(channels=16)
    assert device.service_time(SyscallType.FSTAT_AT, 0) == 100
    d0 = statloop.run_stat_loop(config, 0, device=device).makespan
    d16 = statloop.run_stat_loop(config, 16, device=device).makespan
    oracle = stat_loop_makespan(1000, 16, 16, 100.0)
    ok = (d0 == 1000 * 100 and d16 <= 0.13 * d0 and oracle == GOLDEN_STAT_DEPTH16
          and abs(d16 - GOLDEN_STAT_DEPTH16) <= 0.01 * GOLDEN_STAT_DEPTH16)
    report(3, ok, f"depth 0 = {d0:g} us, depth 16 = {d16:g} us ({d16 / d0:.3f}x); "
                  f"golden {GOLDEN_STAT_DEPTH16:g} +-1%")


def test_c04_makespan_law(report):
    failures = []
    for channels in (1, 4, 16):
        for n in (1, 15, 16, 17, 256):
            image = FileImage()
            for i in range(n):
                image.add_file(f"d/f{i}", bytes(4096))
            ex = SimExecutor(VirtualFileStore.from_image(image), DeviceModel(channels=channels),
                             capacity=n)
            fds = [ex.run_sync(open_at(f"d/f{i}")).return_code for i in range(n)]
            start = ex.now()
            ids = [ex.prepare(pread(fd, 0, 4096)) for fd in fds]
            ex.submit_all_prepared()
            for i in ids:
                ex.wait_completion(i)
            got = ex.now() - start
            want = math.ceil(n / channels) * 100
            law = makespan_law(n, channels, 100)
            if not got == want == law:
                failures.append((n, channels, got, want))
    report(4, not failures, "ceil(N/P) x 100 us exact for N in {1,15,16,17,256}, P in {1,4,16}"
           + (f"; failures {failures}" if failures else ""))


def test_c05_link_ordering(report):
    config = CopyLoopConfig(block_size=4096, file_size=64 * 4096, seed=5)
    with open_executor(copyloop.build_fixture(config), "sim", 8) as ex:
        copied = copyloop.cp(Harness(ex, 8), config)
        dst = ex.store.read_file(config.destination)
        src = ex.store.read_file(config.source)
        reads = {r.request.offset: r for r in ex.executed if r.request.type is SyscallType.PREAD}
        writes = [r for r in ex.executed if r.request.type is SyscallType.PWRITE]
    early = [w for w in writes if w.start < reads[w.request.offset].done]
    ok = copied == len(src) and len(writes) == 64 and not early and dst == src
    report(5, ok, f"{len(writes)} writes, {len(early)} started before their read completed; "
                  f"destination {'equals' if dst == src else 'differs from'} source")


def test_c06_lsm_early_exit(report):
    config = LSMConfig(keys_per_table=256)
    key = config.key_space // 2 + 12345
    tree = lsm.build_lsm(config, plant=(key, 7))
    candidates = len(tree.candidates(key))
    expected = lsm.brute_force_get(tree, key)
    details, ok = [], candidates == 12
    ref = None
    for depth in (0, 1, 4, 8, 16):
        run = lsm.run_lsm(config, depth, keys=[key], lsm=tree)
        ref = ref or run.artifacts
        preads = [e for e in run.trace.of_kind(EventKind.HARVEST) if e.syscall == "pread"]
        pairs = len(preads) / 2
        cancelled = run.total("cancelled")
        ok &= (pairs == 7 and run.outputs == [(key, expected)] and expected == 0xC0FFEE
               and (depth < 4 or cancelled >= 1) and bool(check_equivalence(ref, run.artifacts)))
        details.append(f"d{depth}: {pairs:g} pairs, {cancelled} cancelled")
    report(6, ok, f"{candidates} candidates, key in table 7; " + "; ".join(details))


def test_c07_depth_bound(matrix, report):
    over = [c for c in matrix.cells if c.max_inflight > c.depth]
    worst = max(c.max_inflight for c in matrix.cells if c.depth == 16)
    report(7, not over, f"max in-flight <= depth in all {len(matrix.cells)} runs "
                        f"(peak {worst} at depth 16)" + (f"; first breach {over[0]}" if over else ""))


def test_c08_executor_duality(matrix, report):
    sim = {(c.workload, c.seed, c.depth): c.outputs for c in matrix.cells if c.executor == "sim"}
    pool = {(c.workload, c.seed, c.depth): c.outputs for c in matrix.cells if c.executor != "sim"}
    diff = [k for k in sim if sim[k] != pool.get(k)]
    report(8, not diff and len(sim) == len(pool),
           f"{len(sim) - len(diff)}/{len(sim)} worker-pool outputs identical to sim"
           + (f"; first difference {diff[0]}" if diff else ""))


def test_c09_mutation_detection(report):
    copy = CopyLoopConfig(block_size=4096, file_size=16 * 4096, seed=9)
    copy_ref = copyloop.run_copy_loop(copy, 0).artifacts
    scan_ref = mutations.run_scan_log(True, 0).artifacts
    outcomes = [
        mutations.detect("unmarked weak edge", scan_ref,
                         lambda: mutations.run_scan_log(False, 8)),
        mutations.detect("wrong branch choice", copy_ref,
                         lambda: copyloop.run_copy_loop(copy, 4, graph=mutations.wrong_choice_copy_graph())),
        mutations.detect("write-before-read unlink", copy_ref,
                         lambda: copyloop.run_copy_loop(copy, 8, graph=mutations.unlinked_copy_graph())),
    ]
    report(9, all(o.caught for o in outcomes),
           "; ".join(f"{o.name}: {': '.join(o.how.split(': ')[:2]) if o.caught else 'MISSED'}"
                     for o in outcomes))


def test_c10_monotonicity(report):
    device = DeviceModel(channels=16)
    means = {}
    for depth in (0, 1, 2, 4, 8, 16, 32, 64):
        spans = [statloop.run_stat_loop(StatLoopConfig(entries=1000, seed=s), depth,
                                        device=device).makespan for s in range(3)]
        means[depth] = sum(spans) / len(spans)
    sweep = [means[d] for d in (0, 1, 2, 4, 8, 16)]
    monotone = all(b <= a for a, b in zip(sweep, sweep[1:]))
    saturated = means[32] >= 0.9 * means[16] and means[64] >= 0.9 * means[16]
    report(10, monotone and saturated,
           "mean makespan " + ", ".join(f"d{d}={means[d]:g}" for d in means)
           + "; flat beyond depth P=16")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

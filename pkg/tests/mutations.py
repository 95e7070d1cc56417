"""Injected graph bugs and the runs that should expose them."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Optional

from preissue.catalog import SyscallType, close, open_at, pread, pwrite
from preissue.engine import EngineError, PhantomEffect, Session
from preissue.fs import FileImage
from preissue.graph import IOGraph
from preissue.trace import check_equivalence
from preissue.workloads import copyloop
from preissue.workloads.base import Harness, execute_workload

RECORD = 64
RECORDS = 24


def scan_log_fixture(target: int) -> FileImage:
    """Fixed-size records; record ``target`` carries the marker."""
    image = FileImage()
    data = b"".join((b"MATCH" if i == target else b"-----").ljust(RECORD, b".")
                    for i in range(RECORDS))
    image.add_file("scan/records", data)
    image.add_file("scan/log", b"")
    return image


def scan_log_graph(weak: bool = True) -> IOGraph:
    """read record i -> (caller may stop) -> log "miss i"."""
    g = IOGraph("scan-log")

    def read_args(ctx, epoch):
        return True, False, pread(ctx.inputs["data"], epoch[0] * RECORD, RECORD)

    def log_args(ctx, epoch):
        return True, False, pwrite(ctx.inputs["log"], epoch[0] * 8, f"miss{epoch[0]:04d}".encode())

    def more(ctx, epoch):
        return True, 0 if epoch[0] + 1 < RECORDS else 1

    r = g.add_syscall_node("read", SyscallType.PREAD, read_args)
    w = g.add_syscall_node("log", SyscallType.PWRITE, log_args)
    b = g.add_branch_node("more", more)
    g.set_next(g.start, r)
    g.set_next(r, w, weak=weak)
    g.set_next(w, b)
    g.branch_append_child(b, r, loop_back=True)
    g.branch_append_child(b, g.end)
    assert g.validate() == []
    return g


def scan_log(h: Harness, graph: IOGraph) -> Optional[int]:
    data = h.sync(open_at("scan/records")).return_code
    log = h.sync(open_at("scan/log", os.O_WRONLY)).return_code
    found = None
    with h.session(graph, {"data": data, "log": log}) as s:
        for i in range(RECORDS):
            rec = s.intercept(pread(data, i * RECORD, RECORD)).result_payload
            if rec.startswith(b"MATCH"):
                found = i
                break
            s.intercept(pwrite(log, i * 8, f"miss{i:04d}".encode()))
    h.sync(close(log))
    h.sync(close(data))
    return found


def run_scan_log(weak: bool, depth: int, target: int = 9, strict: bool = True, **kw):
    graph = scan_log_graph(weak)
    return execute_workload(scan_log_fixture(target), lambda h: scan_log(h, graph), depth,
                            strict=strict, **kw)


def wrong_choice_copy_graph() -> IOGraph:
    """Copy loop whose loop branch leaves one iteration early."""
    g = copyloop.build_graph()

    def more(ctx, epoch):
        return True, 0 if (epoch[0] + 2) * ctx.inputs["block"] < ctx.inputs["size"] else 1

    g.nodes["more_blocks"].choice = more
    return g


def unlinked_copy_graph() -> IOGraph:
    """Copy loop whose read does not link to its write."""
    return copyloop.build_graph(link=False)


class DoubleHarvestSession(Session):
    """Engine mutant that delivers every completion twice."""

    def harvest(self, inst, actual=None):
        rc = super().harvest(inst, actual)
        super().harvest(inst, actual)
        return rc


@dataclass
class MutationOutcome:
    name: str
    caught: bool
    how: str


def detect(name: str, reference, mutant: Callable[[], object]) -> MutationOutcome:
    """Run ``mutant`` and report whether an assertion or the oracle catches it."""
    try:
        run = mutant()
    except (EngineError, PhantomEffect) as exc:
        return MutationOutcome(name, True, f"engine: {type(exc).__name__}: {exc}")
    verdict = check_equivalence(reference, run.artifacts)
    if not verdict:
        return MutationOutcome(name, True, f"oracle: {verdict.reason} at {verdict.index}")
    return MutationOutcome(name, False, "undetected")

"""Shared plumbing for workload drivers: executors, sessions, run records."""

from __future__ import annotations

import contextlib
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Optional

from ..catalog import NON_PURE, SyscallCompletion, SyscallRequest, request_purity
from ..device import DeviceModel
from ..engine import Session, SessionStats, enter_session
from ..executor import Executor, SimExecutor, WorkerPoolExecutor
from ..fs import FileImage, OsFileStore, VirtualFileStore
from ..graph import IOGraph
from ..trace import EventKind, RunArtifacts, Trace

EXECUTOR_KINDS = ("sim", "worker-pool")


@dataclass
class Harness:
    """Everything a driver needs: executor, depth and the run's trace."""

    executor: Executor
    depth: int
    trace: Trace = field(default_factory=Trace)
    debug: bool = False
    strict: bool = True
    sessions: list[Session] = field(default_factory=list)

    @contextlib.contextmanager
    def session(self, graph: IOGraph, inputs: Mapping[str, Any]) -> Iterator[Session]:
        sess = enter_session(graph, inputs, self.depth, self.executor, trace=self.trace,
                             debug=self.debug, strict=self.strict)
        self.sessions.append(sess)
        with sess:
            yield sess

    def sync(self, request: SyscallRequest) -> SyscallCompletion:
        """Issue a call outside any speculated region; non-pure ones are traced."""
        completion = self.executor.run_sync(request)
        if request_purity(request) is NON_PURE:
            self.trace.record_call(EventKind.NON_PURE_EXEC, request, completion,
                                   self.executor.store.describe(request.file), self.executor.now())
        return completion

    @property
    def stats(self) -> list[SessionStats]:
        return [s.stats for s in self.sessions]

    @property
    def makespan(self) -> float:
        return sum(s.stats.elapsed for s in self.sessions)


@dataclass
class WorkloadRun:
    artifacts: RunArtifacts
    depth: int
    executor: str
    makespan: float
    stats: list[SessionStats]
    sessions: list[Session]

    @property
    def outputs(self) -> Any:
        return self.artifacts.outputs

    @property
    def trace(self) -> Trace:
        return self.artifacts.trace

    def total(self, counter: str) -> int:
        return sum(getattr(s, counter) for s in self.stats)

    @property
    def max_inflight(self) -> int:
        return max((s.max_inflight for s in self.stats), default=0)


@contextlib.contextmanager
def open_executor(image: FileImage, kind: str, depth: int, device: Optional[DeviceModel] = None,
                  workers: Optional[int] = None) -> Iterator[Executor]:
    """Executor over a fresh store seeded from ``image``; closed on exit."""
    capacity = max(depth, 1)
    if kind == "sim":
        executor: Executor = SimExecutor(VirtualFileStore.from_image(image), device, capacity)
        try:
            yield executor
        finally:
            executor.close()
    elif kind == "worker-pool":
        with tempfile.TemporaryDirectory(prefix="preissue-") as tmp:
            image.materialize(Path(tmp))
            executor = WorkerPoolExecutor(OsFileStore(Path(tmp)), workers=workers,
                                          depth=depth, capacity=capacity)
            try:
                yield executor
            finally:
                executor.close()
    else:
        raise ValueError(f"unknown executor kind {kind!r}; expected one of {EXECUTOR_KINDS}")


def execute_workload(image: FileImage, driver: Callable[[Harness], Any], depth: int,
                     executor: str = "sim", device: Optional[DeviceModel] = None,
                     workers: Optional[int] = None, debug: bool = False,
                     strict: bool = True) -> WorkloadRun:
    with open_executor(image, executor, depth, device, workers) as ex:
        harness = Harness(ex, depth, debug=debug, strict=strict)
        outputs = driver(harness)
        harness.trace.record_return(outputs, ex.now())
        makespan = harness.makespan
        ex.close()
        snapshot = ex.store.snapshot()
    artifacts = RunArtifacts(outputs, harness.trace, snapshot,
                             {"depth": depth, "executor": executor})
    return WorkloadRun(artifacts, depth, executor, makespan, harness.stats, harness.sessions)

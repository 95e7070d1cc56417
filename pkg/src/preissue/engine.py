"""Explicit speculation over an I/O graph.

The application calls :meth:`Session.intercept` wherever it would issue a
syscall. Each intercept aligns the frontier with the real call, peeks up to
``depth`` syscall nodes ahead, prepares the ones whose arguments are ready
(never a non-pure node behind a weak edge), submits them as one batch and
then either waits on the frontier's speculative completion or executes the
call synchronously.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from enum import IntEnum
from types import MappingProxyType
from typing import Any, Mapping, Optional

from .catalog import (
    NON_PURE,
    PURE,
    Purity,
    SyscallCompletion,
    SyscallRequest,
    SyscallType,
    normalize_implicit_read,
    request_purity,
    seek_after,
)
from .executor import Executor
from .graph import (
    END_ID,
    START_ID,
    BranchNodeDef,
    EdgeDef,
    IOGraph,
    NodeKind,
    SyscallNodeDef,
    registry,
)
from .trace import EventKind, Trace

log = logging.getLogger(__name__)

EpochVector = tuple


class EngineError(Exception):
    pass


class GraphNotValidated(EngineError):
    pass


class SessionActive(EngineError):
    pass


class GraphMismatch(EngineError):
    pass


class ArgsMismatch(EngineError):
    pass


class FrontierError(EngineError):
    pass


class HarvestError(EngineError):
    pass


class PhantomEffect(AssertionError):
    """A non-pure call was issued that the application never reached."""


class Stage(IntEnum):
    UNVISITED = 0
    ARGS_NOT_READY = 1
    PREPARED = 2
    SUBMITTED = 3
    COMPLETED = 4
    HARVESTED = 5
    CANCELLED = 6


@dataclass(eq=False)
class NodeInstance:
    node_id: str
    epoch: EpochVector
    stage: Stage = Stage.UNVISITED
    args: Optional[SyscallRequest] = None
    link: bool = False
    internal_buffer: Optional[bytearray] = None
    completion: Optional[SyscallCompletion] = None
    entry_id: Optional[int] = None
    harvests: int = 0
    speculative: bool = False

    @property
    def key(self) -> tuple[str, EpochVector]:
        return self.node_id, self.epoch


@dataclass
class SessionStats:
    prepared: int = 0
    submitted: int = 0
    harvested: int = 0
    cancelled: int = 0
    sync_issued: int = 0
    intercepts: int = 0
    max_inflight: int = 0
    start_time: float = 0.0
    end_time: float = 0.0

    @property
    def elapsed(self) -> float:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class PrepareRecord:
    """Why an instance was prepared: frontier, path walked and weak state."""

    frontier: tuple[str, EpochVector]
    node_id: str
    epoch: EpochVector
    purity: Purity
    weak: bool
    path: tuple[tuple[str, str, bool], ...]


def advance_epoch(graph: IOGraph, epoch: EpochVector, edge: EdgeDef) -> EpochVector:
    """Epoch after traversing ``edge``; loop-backs bump their slot and reset inner loops."""
    if not edge.loop_back:
        return epoch
    vec = list(epoch)
    vec[edge.epoch_slot] += 1
    for inner in graph.slot_resets(edge.epoch_slot):
        vec[inner] = 0
    return tuple(vec)


class HookContext:
    """What plugin hooks may see: read-only inputs, scratch state, instances."""

    def __init__(self, session: "Session") -> None:
        self._session = session
        self.inputs = session.inputs
        self.state: dict[str, Any] = {}

    def stage(self, node_id: str, epoch: EpochVector) -> Stage:
        inst = self._session.instances.get((node_id, tuple(epoch)))
        return inst.stage if inst else Stage.UNVISITED

    def completion(self, node_id: str, epoch: EpochVector) -> Optional[SyscallCompletion]:
        """Completion of an instance if it already finished (harvested or not)."""
        inst = self._session.instances.get((node_id, tuple(epoch)))
        if inst is None:
            return None
        if inst.stage is Stage.SUBMITTED:
            self._session._poll(inst)
        if inst.stage in (Stage.COMPLETED, Stage.HARVESTED) and not inst.completion.cancelled:
            return inst.completion
        return None

    def buffer(self, node_id: str, epoch: EpochVector) -> Optional[bytearray]:
        """Internal buffer of a read instance that is prepared or further along."""
        inst = self._session.instances.get((node_id, tuple(epoch)))
        if inst is None or inst.stage < Stage.PREPARED or inst.stage is Stage.CANCELLED:
            return None
        return inst.internal_buffer


_thread_sessions = threading.local()


def _active_sessions() -> dict[str, "Session"]:
    if not hasattr(_thread_sessions, "by_graph"):
        _thread_sessions.by_graph = {}
    return _thread_sessions.by_graph


class Session:
    """Live execution of one graph on one thread."""

    def __init__(self, graph: IOGraph, inputs: Mapping[str, Any], depth: int,
                 executor: Executor, trace: Optional[Trace] = None, debug: bool = False,
                 strict: bool = True) -> None:
        if not graph.validated:
            raise GraphNotValidated(graph.name)
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.graph = graph
        self.inputs = MappingProxyType(dict(inputs))
        self.depth = depth
        self.executor = executor
        self.trace = trace if trace is not None else Trace()
        self.debug = debug
        self.strict = strict
        self.instances: dict[tuple[str, EpochVector], NodeInstance] = {}
        self.stats = SessionStats()
        self.prepare_log: list[PrepareRecord] = []
        self.frontier_log: list[tuple[str, EpochVector]] = []
        self.ctx = HookContext(self)
        self.active = False
        self._choices: dict[tuple[str, EpochVector], int] = {}
        first = graph.next_edge(START_ID)
        self.frontier: tuple[str, EpochVector] = (first.target, (0,) * graph.num_slots)
        self._submitted: list[NodeInstance] = []
        self._batch: list[NodeInstance] = []
        self._delivered: set[int] = set()

    # lifecycle -------------------------------------------------------------

    def _enter(self) -> "Session":
        sessions = _active_sessions()
        if self.graph.name in sessions:
            raise SessionActive(f"thread already runs a session on {self.graph.name!r}")
        sessions[self.graph.name] = self
        registry.acquire(self.graph)
        self.active = True
        self.stats.start_time = self.executor.now()
        return self

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self.active:
            self.exit(raise_phantoms=exc_type is None)

    def exit(self, raise_phantoms: bool = True) -> SessionStats:
        """Cancel or drain speculation left behind and release the session."""
        if not self.active:
            return self.stats
        self.executor.cancel_outstanding()
        leftovers = [i for i in self.instances.values()
                     if i.stage in (Stage.PREPARED, Stage.SUBMITTED, Stage.COMPLETED)]
        phantoms = [i for i in leftovers if self._purity(i) is NON_PURE]
        for inst in leftovers:
            inst.stage = Stage.CANCELLED
            self.stats.cancelled += 1
        if phantoms:
            ids = {i.entry_id for i in phantoms}
            self.executor.drain(ids)
            for rec in self.executor.executed:
                if rec.entry_id in ids:
                    self.trace.record_call(EventKind.NON_PURE_EXEC, rec.request, rec.completion,
                                           self.executor.store.describe(rec.request.file),
                                           rec.done or 0.0)
        for inst in self.instances.values():
            inst.internal_buffer = None
        self.stats.end_time = self.executor.now()
        self.active = False
        _active_sessions().pop(self.graph.name, None)
        registry.release(self.graph)
        if phantoms and self.strict and raise_phantoms:
            keys = ", ".join(f"{i.node_id}{list(i.epoch)}" for i in phantoms)
            raise PhantomEffect(f"non-pure instances issued but never reached: {keys}")
        return self.stats

    # instance bookkeeping --------------------------------------------------

    def _node(self, node_id: str):
        return self.graph.nodes[node_id]

    def _purity(self, inst: NodeInstance) -> Purity:
        if inst.args is not None:
            return request_purity(inst.args)
        return self._node(inst.node_id).purity

    def _instance(self, node_id: str, epoch: EpochVector) -> NodeInstance:
        key = (node_id, epoch)
        inst = self.instances.get(key)
        if inst is None:
            inst = NodeInstance(node_id, epoch)
            self.instances[key] = inst
        return inst

    def _choose(self, node_id: str, epoch: EpochVector) -> Optional[int]:
        key = (node_id, epoch)
        if key in self._choices:
            return self._choices[key]
        node: BranchNodeDef = self._node(node_id)
        ready, index = node.choice(self.ctx, epoch)
        if not ready:
            return None
        n_children = len(self.graph.children(node_id))
        if not 0 <= index < n_children:
            raise FrontierError(f"branch {node_id!r} chose child {index} of {n_children}")
        self._choices[key] = index
        return index

    def _compute(self, inst: NodeInstance) -> tuple[bool, bool, Optional[SyscallRequest]]:
        node: SyscallNodeDef = self._node(inst.node_id)
        ready, link, request = node.compute_args(self.ctx, inst.epoch)
        if not ready:
            return False, False, None
        if request.type is not node.syscall_type:
            raise GraphMismatch(f"{inst.node_id!r} computed a {request.type.value} request, "
                                f"node type is {node.syscall_type.value}")
        if request.type is SyscallType.PREAD and request.dest is None:
            request.dest = bytearray(request.length)
        return True, bool(link), request

    def _poll(self, inst: NodeInstance) -> None:
        completion = self.executor.try_completion(inst.entry_id)
        if completion is not None:
            inst.completion = completion
            inst.stage = Stage.COMPLETED

    def _inflight(self, frontier: Optional[NodeInstance]) -> int:
        return sum(1 for i in self._submitted
                   if i is not frontier and i.stage in (Stage.PREPARED, Stage.SUBMITTED))

    # the algorithm ---------------------------------------------------------

    def resolve_frontier(self, actual: Optional[SyscallRequest] = None) -> NodeInstance:
        """Walk branch nodes from the cursor to the next syscall node."""
        node_id, epoch = self.frontier
        while self._node(node_id).kind is NodeKind.BRANCH:
            index = self._choose(node_id, epoch)
            if index is None:
                raise FrontierError(f"choice of {node_id!r}{list(epoch)} not ready at resolution")
            edge = self.graph.children(node_id)[index]
            epoch = advance_epoch(self.graph, epoch, edge)
            node_id = edge.target
        if node_id == END_ID:
            raise FrontierError("application issued a syscall after the graph reached its end")
        node: SyscallNodeDef = self._node(node_id)
        if actual is not None and actual.type is not node.syscall_type:
            raise GraphMismatch(f"expected {node.syscall_type.value} at {node_id!r}, "
                                f"application issued {actual.type.value}")
        self.frontier = (node_id, epoch)
        self.frontier_log.append(self.frontier)
        return self._instance(node_id, epoch)

    def peek_and_prepare(self, frontier: Optional[NodeInstance] = None) -> int:
        """Prepare up to ``depth`` successors of the frontier; returns how many."""
        if self.depth == 0:
            return 0
        if frontier is None:
            frontier = self.instances[self.frontier]
        for inst in self._submitted:
            if inst.stage is Stage.SUBMITTED:
                self._poll(inst)
        edge = self.graph.next_edge(frontier.node_id)
        node_id: Optional[str] = edge.target
        epoch = frontier.epoch
        weak = False
        path: list[tuple[str, str, bool]] = [(edge.source, edge.target, edge.weak)]
        batch: list[NodeInstance] = []
        steps = self.depth
        while steps > 0 and node_id is not None and node_id != END_ID:
            steps -= 1
            if edge.weak:
                weak = True
            while node_id is not None and self._node(node_id).kind is NodeKind.BRANCH:
                index = self._choose(node_id, epoch)
                if index is None:
                    node_id = None
                    break
                edge = self.graph.children(node_id)[index]
                path.append((edge.source, edge.target, edge.weak))
                epoch = advance_epoch(self.graph, epoch, edge)
                node_id = edge.target
            if node_id is None or node_id == END_ID:
                break
            inst = self._instance(node_id, epoch)
            if inst.stage in (Stage.UNVISITED, Stage.ARGS_NOT_READY):
                ready, link, request = self._compute(inst)
                if not ready:
                    inst.stage = Stage.ARGS_NOT_READY
                elif not (weak and request_purity(request) is NON_PURE):
                    inst.args, inst.link = request, link
                    inst.internal_buffer = request.dest
                    inst.stage = Stage.PREPARED
                    inst.speculative = True
                    batch.append(inst)
                    self.prepare_log.append(PrepareRecord(
                        (frontier.node_id, frontier.epoch), node_id, epoch,
                        request_purity(request), weak, tuple(path)))
            edge = self.graph.next_edge(node_id)
            path.append((edge.source, edge.target, edge.weak))
            node_id = edge.target
        self._stage_batch(batch)
        self._batch = batch
        return len(batch)

    def _stage_batch(self, batch: list[NodeInstance]) -> None:
        # a link only binds to the very next node on the walked path
        for k, inst in enumerate(batch):
            link = inst.link
            if link:
                nxt = batch[k + 1] if k + 1 < len(batch) else None
                link = nxt is not None and self._follows(inst, nxt)
            inst.entry_id = self.executor.prepare(inst.args, link)
            self.stats.prepared += 1

    def _follows(self, a: NodeInstance, b: NodeInstance) -> bool:
        edge = self.graph.next_edge(a.node_id)
        return edge.target == b.node_id and not edge.loop_back and a.epoch == b.epoch

    def intercept(self, actual: SyscallRequest) -> SyscallCompletion:
        """Stand in for the application's next real syscall."""
        if not self.active:
            raise EngineError("session is not active")
        self.stats.intercepts += 1
        inst = self.resolve_frontier(actual)
        if self.depth > 0 and inst.args is None:
            ready, _, request = self._compute(inst)
            if ready:
                inst.args = request
                inst.internal_buffer = request.dest
        if self.debug and inst.args is not None:
            self._check_args(inst, actual)

        self._batch = []
        self.peek_and_prepare(inst)
        staged = self._batch
        submitted = self.executor.submit_all_prepared()
        self.stats.submitted += submitted
        for i in staged:
            i.stage = Stage.SUBMITTED
            self._submitted.append(i)
        self.stats.max_inflight = max(self.stats.max_inflight, self._inflight(inst))

        completion: Optional[SyscallCompletion] = None
        if inst.stage in (Stage.SUBMITTED, Stage.COMPLETED):
            completion = inst.completion if inst.stage is Stage.COMPLETED else \
                self.executor.wait_completion(inst.entry_id)
            if completion.cancelled:
                completion = None
        if completion is None:
            completion = self._run_sync(inst, actual)
        inst.completion = completion
        inst.stage = Stage.COMPLETED
        self._submitted = [i for i in self._submitted if i.stage is Stage.SUBMITTED]
        self.harvest(inst, actual)
        edge = self.graph.next_edge(inst.node_id)
        self.frontier = (edge.target, inst.epoch)
        return completion

    def _run_sync(self, inst: NodeInstance, actual: SyscallRequest) -> SyscallCompletion:
        request = inst.args if inst.args is not None else actual
        self.stats.sync_issued += 1
        completion = self.executor.run_sync(request)
        if (request is actual and request.type is SyscallType.PREAD
                and completion.result_payload is not None):
            inst.internal_buffer = bytearray(completion.result_payload)
        inst.args = inst.args or actual
        return completion

    def _check_args(self, inst: NodeInstance, actual: SyscallRequest) -> None:
        if inst.args.arg_record() != actual.arg_record():
            raise ArgsMismatch(f"{inst.node_id}{list(inst.epoch)}: computed "
                               f"{inst.args.arg_record()} != actual {actual.arg_record()}")

    def harvest(self, inst: NodeInstance, actual: Optional[SyscallRequest] = None) -> int:
        """Deliver a completed instance to the application exactly once."""
        if inst.stage is Stage.HARVESTED or inst.harvests:
            raise HarvestError(f"double harvest of {inst.node_id}{list(inst.epoch)}")
        if inst.stage is not Stage.COMPLETED:
            raise HarvestError(f"harvest of {inst.node_id} in stage {inst.stage.name}")
        node: SyscallNodeDef = self._node(inst.node_id)
        completion = inst.completion
        rc = completion.return_code
        if node.save_result is not None:
            node.save_result(self.ctx, inst.epoch, rc, completion.result_payload)
        inst.harvests += 1
        inst.stage = Stage.HARVESTED
        self.stats.harvested += 1
        if (node.copy_result and actual is not None and actual.dest is not None
                and actual.dest is not (inst.args.dest if inst.args else None)
                and isinstance(completion.result_payload, (bytes, bytearray)) and rc > 0):
            actual.dest[:rc] = completion.result_payload[:rc]
        request = inst.args if inst.args is not None else actual
        kind = EventKind.NON_PURE_EXEC if request_purity(request) is NON_PURE else EventKind.HARVEST
        self.trace.record_call(kind, request, completion,
                               self.executor.store.describe(request.file), self.executor.now())
        return rc

    # conveniences ----------------------------------------------------------

    def read(self, fd: int, length: int, dest: Optional[bytearray] = None) -> SyscallCompletion:
        """Implicit-offset read, lowered to tell + intercepted pread + seek."""
        cursor = self.executor.run_sync(normalize_implicit_read(fd, length, 0)[0]).return_code
        triple = normalize_implicit_read(fd, length, cursor, dest)
        completion = self.intercept(triple[1])
        self.executor.run_sync(seek_after(triple, completion.return_code))
        return completion


def enter_session(graph: IOGraph, inputs: Mapping[str, Any], depth: int,
                  executor: Executor, **kwargs) -> Session:
    return Session(graph, inputs, depth, executor, **kwargs)._enter()


def purity_violations(session: Session) -> list[PrepareRecord]:
    """Prepared non-pure instances whose walked path crossed a weak edge.

    Re-derives weakness from the recorded path edges rather than trusting
    the engine's own sticky flag.
    """
    bad = []
    for rec in session.prepare_log:
        if rec.purity is not NON_PURE:
            continue
        if any(weak for _, _, weak in rec.path) or rec.weak:
            bad.append(rec)
    return bad


__all__ = [
    "ArgsMismatch", "EngineError", "EpochVector", "FrontierError", "GraphMismatch",
    "GraphNotValidated", "HarvestError", "HookContext", "NodeInstance", "PURE",
    "PhantomEffect", "PrepareRecord", "Session", "SessionActive", "SessionStats", "Stage",
    "advance_epoch", "enter_session", "purity_violations",
]

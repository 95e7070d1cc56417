"""Asynchronous syscall backends: prepare, batch submit, wait, cancel.

Entries prepared with ``link=True`` chain to the next prepared entry: the
next one starts only after the previous one completed in full. A failed or
short transfer severs the chain and the remaining members complete as
cancelled.
"""

from __future__ import annotations

import copy
import os
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .catalog import (
    SyscallCompletion,
    SyscallRequest,
    SyscallType,
    cancelled_completion,
)
from .device import DeviceModel, VirtualClock
from .fs import FileStore, write_bytes


class ExecutorError(Exception):
    pass


class CapacityError(ExecutorError):
    pass


class UnknownEntry(ExecutorError):
    pass


class EntryState(str, Enum):
    STAGED = "staged"
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    CONSUMED = "consumed"
    CANCELLED = "cancelled"


@dataclass
class ExecRecord:
    """One request that actually reached the store."""

    entry_id: int
    request: SyscallRequest
    completion: SyscallCompletion
    start: float
    done: float
    sync: bool = False


@dataclass
class ExecutorStats:
    prepared: int = 0
    submitted: int = 0
    completed: int = 0
    cancelled: int = 0
    drained: int = 0
    sync: int = 0


@dataclass(eq=False)
class _Entry:
    id: int
    request: SyscallRequest
    link: bool
    state: EntryState = EntryState.STAGED
    next: Optional["_Entry"] = None
    completion: Optional[SyscallCompletion] = None
    discard: bool = False
    sync: bool = False
    submit_time: float = 0.0
    start: Optional[float] = None
    done: Optional[float] = None
    future: Optional[Future] = None
    chain_future: Optional[Future] = None


def severs_chain(request: SyscallRequest, completion: SyscallCompletion) -> bool:
    if completion.cancelled or completion.return_code < 0:
        return True
    if request.type in (SyscallType.PREAD, SyscallType.PWRITE):
        return completion.return_code < request.length
    return False


def _frozen_request(request: SyscallRequest) -> SyscallRequest:
    """Copy of ``request`` with a write payload captured as immutable bytes."""
    req = copy.copy(request)
    if req.type is SyscallType.PWRITE:
        req.payload = write_bytes(request)
    return req


class Executor(ABC):
    def __init__(self, store: FileStore, capacity: Optional[int] = None) -> None:
        self.store = store
        self.capacity = capacity
        self.stats = ExecutorStats()
        self.executed: list[ExecRecord] = []
        self._entries: dict[int, _Entry] = {}
        self._staged: list[_Entry] = []
        self._next_id = 1
        self._lock = threading.RLock()

    # contract --------------------------------------------------------------

    def prepare(self, request: SyscallRequest, link: bool = False) -> int:
        request.validate()
        if self.capacity is not None and len(self._staged) >= self.capacity:
            raise CapacityError(f"staging area full ({self.capacity})")
        entry = self._new_entry(request, link)
        self._staged.append(entry)
        self.stats.prepared += 1
        return entry.id

    def submit_all_prepared(self) -> int:
        staged, self._staged = self._staged, []
        if not staged:
            return 0
        chains: list[list[_Entry]] = []
        for entry in staged:
            if chains and chains[-1][-1].link:
                chains[-1][-1].next = entry
                chains[-1].append(entry)
            else:
                chains.append([entry])
        now = self.now()
        for entry in staged:
            entry.state = EntryState.QUEUED
            entry.submit_time = now
        self.stats.submitted += len(staged)
        self._launch(chains)
        return len(staged)

    @abstractmethod
    def wait_completion(self, entry_id: int) -> SyscallCompletion:
        ...

    @abstractmethod
    def try_completion(self, entry_id: int) -> Optional[SyscallCompletion]:
        """Return the completion if the entry already finished, else None."""

    @abstractmethod
    def cancel_outstanding(self) -> int:
        """Cancel everything not yet started; returns how many were cancelled."""

    @abstractmethod
    def drain(self, entry_ids=None) -> None:
        """Block until the given (default: all) started entries finished."""

    @abstractmethod
    def run_sync(self, request: SyscallRequest) -> SyscallCompletion:
        ...

    @abstractmethod
    def now(self) -> float:
        """Current time in microseconds (virtual or wall)."""

    def close(self) -> None:
        self.cancel_outstanding()
        self.drain()

    # shared helpers --------------------------------------------------------

    @abstractmethod
    def _launch(self, chains: list[list[_Entry]]) -> None:
        ...

    def _new_entry(self, request: SyscallRequest, link: bool) -> _Entry:
        with self._lock:
            entry = _Entry(self._next_id, request, link)
            self._next_id += 1
            self._entries[entry.id] = entry
            return entry

    def _entry(self, entry_id: int) -> _Entry:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise UnknownEntry(entry_id) from None

    def state(self, entry_id: int) -> EntryState:
        return self._entry(entry_id).state

    def times(self, entry_id: int) -> tuple[Optional[float], Optional[float]]:
        e = self._entry(entry_id)
        return e.start, e.done

    def running_ids(self) -> list[int]:
        with self._lock:
            return [e.id for e in self._entries.values() if e.state is EntryState.RUNNING]

    def outstanding(self) -> int:
        with self._lock:
            return sum(1 for e in self._entries.values()
                       if e.state in (EntryState.STAGED, EntryState.QUEUED, EntryState.RUNNING))

    def _record(self, entry: _Entry, request: SyscallRequest, completion: SyscallCompletion) -> None:
        with self._lock:
            self.executed.append(ExecRecord(entry.id, request, completion,
                                            entry.start, entry.done, entry.sync))

    def _consume(self, entry: _Entry) -> SyscallCompletion:
        if entry.state is EntryState.CANCELLED or entry.discard:
            return cancelled_completion()
        if entry.state is EntryState.CONSUMED:
            raise ExecutorError(f"completion of entry {entry.id} already consumed")
        entry.state = EntryState.CONSUMED
        return entry.completion

    def accounting(self) -> dict[str, int]:
        """Per-state counts over every asynchronously prepared entry."""
        counts = {s.value: 0 for s in EntryState}
        with self._lock:
            for e in self._entries.values():
                if not e.sync:
                    counts[e.state.value] += 1
        return counts


class SimExecutor(Executor):
    """Single-threaded executor driving a :class:`DeviceModel` on virtual time.

    Effects are applied to the store when an entry's completion event fires;
    write payloads are captured when the entry starts.
    """

    def __init__(self, store: FileStore, device: Optional[DeviceModel] = None,
                 capacity: Optional[int] = None) -> None:
        super().__init__(store, capacity)
        self.device = device or DeviceModel()
        self.clock = VirtualClock()
        self._free = self.device.channels
        self._ready: deque[_Entry] = deque()
        self.max_busy = 0

    def now(self) -> float:
        return self.clock.now

    def _launch(self, chains: list[list[_Entry]]) -> None:
        for chain in chains:
            self._make_ready(chain[0])
        self._dispatch()

    def _make_ready(self, entry: _Entry) -> None:
        self._ready.append(entry)

    def _dispatch(self) -> None:
        while self._free and self._ready:
            entry = self._ready.popleft()
            self._start(entry)

    def _start(self, entry: _Entry) -> None:
        self._free -= 1
        self.max_busy = max(self.max_busy, self.device.channels - self._free)
        entry.state = EntryState.RUNNING
        entry.start = self.clock.now
        frozen = _frozen_request(entry.request)
        service = self.device.request_time(entry.request)
        self.clock.push(self.clock.now + service, 0, entry.id, lambda: self._finish(entry, frozen))

    def _finish(self, entry: _Entry, request: SyscallRequest) -> None:
        completion = self.store.execute(request)
        entry.done = self.clock.now
        entry.completion = completion
        self._free += 1
        self._record(entry, request, completion)
        if entry.discard:
            entry.state = EntryState.CANCELLED
            self.stats.drained += 1
        else:
            entry.state = EntryState.DONE
            self.stats.completed += 1
        nxt = entry.next
        if nxt is not None and nxt.state is EntryState.QUEUED:
            if severs_chain(entry.request, completion) or entry.discard:
                self._sever(nxt)
            else:
                self._make_ready(nxt)
        self._dispatch()

    def _sever(self, entry: Optional[_Entry]) -> None:
        while entry is not None and entry.state is EntryState.QUEUED:
            entry.state = EntryState.CANCELLED
            entry.completion = cancelled_completion()
            self.stats.cancelled += 1
            entry = entry.next

    def wait_completion(self, entry_id: int) -> SyscallCompletion:
        entry = self._entry(entry_id)
        if entry.state is EntryState.STAGED:
            raise ExecutorError(f"entry {entry_id} was never submitted")
        self.clock.run_until(lambda: entry.state not in (EntryState.QUEUED, EntryState.RUNNING))
        return self._consume(entry)

    def try_completion(self, entry_id: int) -> Optional[SyscallCompletion]:
        entry = self._entry(entry_id)
        self.clock.run_due()
        if entry.state in (EntryState.DONE, EntryState.CANCELLED):
            return self._consume(entry)
        return None

    def cancel_outstanding(self) -> int:
        cancelled = 0
        for entry in self._staged:
            entry.state = EntryState.CANCELLED
            cancelled += 1
        self._staged = []
        self._ready.clear()
        for entry in self._entries.values():
            if entry.state is EntryState.QUEUED:
                entry.state = EntryState.CANCELLED
                entry.completion = cancelled_completion()
                cancelled += 1
            elif entry.state is EntryState.RUNNING:
                entry.discard = True
            elif entry.state is EntryState.DONE:
                entry.state = EntryState.CONSUMED
                entry.discard = True
        self.stats.cancelled += cancelled
        return cancelled

    def drain(self, entry_ids=None) -> None:
        if entry_ids is None:
            self.clock.run_until(lambda: not any(
                e.state in (EntryState.QUEUED, EntryState.RUNNING) for e in self._entries.values()))
            return
        targets = [self._entry(i) for i in entry_ids]
        self.clock.run_until(lambda: all(
            e.state not in (EntryState.QUEUED, EntryState.RUNNING) for e in targets))

    def run_sync(self, request: SyscallRequest) -> SyscallCompletion:
        request.validate()
        entry = self._new_entry(request, False)
        entry.sync = True
        entry.state = EntryState.QUEUED
        entry.submit_time = self.clock.now
        self.stats.sync += 1
        self._make_ready(entry)
        self._dispatch()
        self.clock.run_until(lambda: entry.state is EntryState.DONE)
        entry.state = EntryState.CONSUMED
        return entry.completion


def default_workers(depth: int) -> int:
    return max(1, min(max(depth, 1), 2 * (os.cpu_count() or 1)))


class WorkerPoolExecutor(Executor):
    """Thread-pool backend; each link chain runs as one task on one worker."""

    def __init__(self, store: FileStore, workers: Optional[int] = None, depth: int = 1,
                 capacity: Optional[int] = None) -> None:
        super().__init__(store, capacity)
        self.workers = workers or default_workers(depth)
        self._pool = ThreadPoolExecutor(self.workers, thread_name_prefix="preissue-io")
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return (time.perf_counter() - self._t0) * 1e6

    def _launch(self, chains: list[list[_Entry]]) -> None:
        for chain in chains:
            for entry in chain:
                entry.future = Future()
            fut = self._pool.submit(self._run_chain, chain)
            for entry in chain:
                entry.chain_future = fut

    def _run_chain(self, chain: list[_Entry]) -> None:
        severed = False
        for entry in chain:
            with self._lock:
                if severed or entry.state is not EntryState.QUEUED:
                    if entry.state is EntryState.QUEUED:
                        entry.state = EntryState.CANCELLED
                        self.stats.cancelled += 1
                    entry.completion = cancelled_completion()
                    _settle(entry.future, entry.completion)
                    continue
                entry.state = EntryState.RUNNING
                entry.start = self.now()
            request = _frozen_request(entry.request)
            completion = self.store.execute(request)
            with self._lock:
                entry.done = self.now()
                entry.completion = completion
                self._record(entry, request, completion)
                if entry.discard:
                    entry.state = EntryState.CANCELLED
                    self.stats.drained += 1
                else:
                    entry.state = EntryState.DONE
                    self.stats.completed += 1
                severed = severs_chain(entry.request, completion) or entry.discard
            _settle(entry.future, completion)

    def wait_completion(self, entry_id: int) -> SyscallCompletion:
        entry = self._entry(entry_id)
        if entry.state is EntryState.STAGED:
            raise ExecutorError(f"entry {entry_id} was never submitted")
        entry.future.result()
        with self._lock:
            return self._consume(entry)

    def try_completion(self, entry_id: int) -> Optional[SyscallCompletion]:
        entry = self._entry(entry_id)
        if entry.future is None or not entry.future.done():
            return None
        with self._lock:
            return self._consume(entry)

    def cancel_outstanding(self) -> int:
        cancelled = 0
        with self._lock:
            for entry in self._staged:
                entry.state = EntryState.CANCELLED
                cancelled += 1
            self._staged = []
            for entry in self._entries.values():
                if entry.state is EntryState.QUEUED:
                    entry.state = EntryState.CANCELLED
                    entry.completion = cancelled_completion()
                    if entry.future is not None:
                        _settle(entry.future, entry.completion)
                    if entry.chain_future is not None:
                        entry.chain_future.cancel()
                    cancelled += 1
                elif entry.state is EntryState.RUNNING:
                    entry.discard = True
                elif entry.state is EntryState.DONE:
                    entry.state = EntryState.CONSUMED
                    entry.discard = True
            self.stats.cancelled += cancelled
        return cancelled

    def drain(self, entry_ids=None) -> None:
        with self._lock:
            targets = (list(self._entries.values()) if entry_ids is None
                       else [self._entry(i) for i in entry_ids])
        for entry in targets:
            if entry.future is not None and not entry.sync:
                entry.future.result()

    def run_sync(self, request: SyscallRequest) -> SyscallCompletion:
        request.validate()
        entry = self._new_entry(request, False)
        entry.sync = True
        self.stats.sync += 1
        entry.start = self.now()
        completion = self.store.execute(request)
        entry.done = self.now()
        entry.completion = completion
        entry.state = EntryState.CONSUMED
        self._record(entry, request, completion)
        return completion

    def close(self) -> None:
        super().close()
        self._pool.shutdown(wait=True)


def _settle(future: Optional[Future], completion: SyscallCompletion) -> None:
    if future is not None and not future.done():
        future.set_result(completion)


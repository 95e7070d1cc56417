"""Externally visible effect traces and the synchrony check.

A trace records non-pure executions, harvested results and application
returns. Two runs are externally synchronous when their non-pure event
subsequences, application outputs and final store snapshots all agree;
pure calls may be reordered or over-issued freely.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional

from .catalog import StatRecord, SyscallCompletion, SyscallRequest, SyscallType


class EventKind(str, Enum):
    NON_PURE_EXEC = "non-pure-exec"
    HARVEST = "harvest"
    APP_RETURN = "app-return"


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: EventKind
    syscall: str
    args_digest: str
    payload_digest: str
    time: float = 0.0

    def key(self) -> tuple:
        """Fields that matter for equivalence (sequence and time excluded)."""
        return (self.kind, self.syscall, self.args_digest, self.payload_digest)

    def to_line(self) -> str:
        return "\t".join([str(self.seq), self.kind.value, self.syscall or "-",
                          self.args_digest, self.payload_digest, f"{self.time:.3f}"])

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        seq, kind, syscall, args, payload, t = line.rstrip("\n").split("\t")
        return cls(int(seq), EventKind(kind), "" if syscall == "-" else syscall,
                   args, payload, float(t))


def digest_value(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, (bytes, bytearray, memoryview)):
        data = bytes(value)
    else:
        data = repr(value).encode()
    return hashlib.sha256(data).hexdigest()[:16]


def args_digest(request: SyscallRequest, file_id: Any) -> str:
    return digest_value((request.type.value, file_id, request.offset, request.length, request.flags))


def payload_digest(request: SyscallRequest, completion: SyscallCompletion) -> str:
    if completion.effect_digest is not None:
        return f"{completion.return_code}:{completion.effect_digest}"
    if request.type is SyscallType.OPEN_AT and completion.return_code >= 0:
        # descriptor numbers are store-specific; only success is observable
        return "fd"
    payload = completion.result_payload
    if isinstance(payload, StatRecord):
        payload = (payload.size, payload.mode, payload.mtime, payload.is_dir)
    return f"{completion.return_code}:{digest_value(payload)}"


class Trace:
    def __init__(self, events: Iterable[TraceEvent] = ()) -> None:
        self.events: list[TraceEvent] = list(events)
        self._lock = threading.Lock()

    def record(self, kind: EventKind, syscall: str, args: str, payload: str,
               time: float = 0.0) -> TraceEvent:
        with self._lock:
            seq = self.events[-1].seq + 1 if self.events else 0
            event = TraceEvent(seq, kind, syscall, args, payload, time)
            self.events.append(event)
            return event

    def record_call(self, kind: EventKind, request: SyscallRequest, completion: SyscallCompletion,
                    file_id: Any, time: float = 0.0) -> TraceEvent:
        return self.record(kind, request.type.value, args_digest(request, file_id),
                           payload_digest(request, completion), time)

    def record_return(self, output: Any, time: float = 0.0) -> TraceEvent:
        return self.record(EventKind.APP_RETURN, "", "-", digest_value(output), time)

    def of_kind(self, kind: EventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind is kind]

    def non_pure(self) -> list[TraceEvent]:
        return self.of_kind(EventKind.NON_PURE_EXEC)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def dumps(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.events)

    @classmethod
    def loads(cls, text: str) -> "Trace":
        return cls(TraceEvent.from_line(line) for line in text.splitlines() if line.strip())


@dataclass
class RunArtifacts:
    """What an external observer can see of one workload run."""

    outputs: Any
    trace: Trace
    snapshot: dict[str, str]
    meta: dict[str, Any] = field(default_factory=dict)


@dataclass
class SynchronyVerdict:
    equivalent: bool
    index: Optional[int] = None
    expected: Optional[TraceEvent] = None
    actual: Optional[TraceEvent] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.equivalent

    @property
    def divergence(self) -> Optional[tuple[Optional[int], Optional[TraceEvent], Optional[TraceEvent]]]:
        if self.equivalent:
            return None
        return self.index, self.expected, self.actual


def check_equivalence(reference: RunArtifacts, speculative: RunArtifacts) -> SynchronyVerdict:
    ref_np = reference.trace.non_pure()
    spec_np = speculative.trace.non_pure()
    for i in range(max(len(ref_np), len(spec_np))):
        exp = ref_np[i] if i < len(ref_np) else None
        act = spec_np[i] if i < len(spec_np) else None
        if exp is None or act is None or exp.key() != act.key():
            if act is not None and exp is None:
                reason = "extra non-pure execution"
            elif act is None:
                reason = "missing non-pure execution"
            else:
                reason = "non-pure execution differs"
            return SynchronyVerdict(False, i, exp, act, reason)
    if reference.outputs != speculative.outputs:
        return SynchronyVerdict(False, reason="application outputs differ")
    ref_ret = reference.trace.of_kind(EventKind.APP_RETURN)
    spec_ret = speculative.trace.of_kind(EventKind.APP_RETURN)
    if [e.key() for e in ref_ret] != [e.key() for e in spec_ret]:
        return SynchronyVerdict(False, reason="application returns differ")
    if reference.snapshot != speculative.snapshot:
        diff = sorted(k for k in set(reference.snapshot) | set(speculative.snapshot)
                      if reference.snapshot.get(k) != speculative.snapshot.get(k))
        return SynchronyVerdict(False, reason=f"final store differs at {diff[:3]}")
    return SynchronyVerdict(True)

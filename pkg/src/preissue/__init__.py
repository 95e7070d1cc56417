"""Explicit speculation of I/O syscalls driven by per-function I/O graphs.

An application describes the syscalls a function may issue as an
:class:`~preissue.graph.IOGraph`. A :class:`~preissue.engine.Session` then
intercepts each real call, pre-issues the next ``depth`` calls it can
prove will happen, and hands results back exactly once.
"""

from __future__ import annotations

import logging

from .catalog import (
    NON_PURE,
    PURE,
    Purity,
    StatRecord,
    SyscallCompletion,
    SyscallRequest,
    SyscallType,
    classify,
    request_purity,
)
from .device import DeviceModel, VirtualClock, makespan_law
from .engine import PhantomEffect, Session, Stage, enter_session
from .executor import Executor, SimExecutor, WorkerPoolExecutor
from .fs import FileImage, OsFileStore, VirtualFileStore
from .graph import IOGraph, validate
from .trace import RunArtifacts, SynchronyVerdict, Trace, TraceEvent, check_equivalence

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "DeviceModel", "Executor", "FileImage", "IOGraph", "NON_PURE", "OsFileStore", "PURE",
    "PhantomEffect", "Purity", "RunArtifacts", "Session", "SimExecutor", "Stage", "StatRecord",
    "SynchronyVerdict", "SyscallCompletion", "SyscallRequest",
    "SyscallType", "Trace", "TraceEvent", "VirtualClock", "VirtualFileStore",
    "WorkerPoolExecutor", "check_equivalence", "classify", "enter_session", "makespan_law",
    "request_purity", "validate",
]

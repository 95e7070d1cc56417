"""Supported syscall vocabulary, request/completion records and purity rules."""

from __future__ import annotations

import errno
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Union


class SyscallType(str, Enum):
    OPEN_AT = "open_at"
    CLOSE = "close"
    PREAD = "pread"
    PWRITE = "pwrite"
    FSTAT_AT = "fstat_at"
    GETDENTS = "getdents"
    TELL = "tell"
    SEEK = "seek"


class Purity(str, Enum):
    PURE = "pure"
    NON_PURE = "non-pure"


PURE = Purity.PURE
NON_PURE = Purity.NON_PURE

_PURITY = {
    SyscallType.OPEN_AT: PURE,
    SyscallType.PREAD: PURE,
    SyscallType.FSTAT_AT: PURE,
    SyscallType.GETDENTS: PURE,
    SyscallType.TELL: PURE,
    SyscallType.SEEK: PURE,
    SyscallType.CLOSE: NON_PURE,
    SyscallType.PWRITE: NON_PURE,
}

READ_LIKE = frozenset({SyscallType.PREAD, SyscallType.FSTAT_AT, SyscallType.GETDENTS})

# open flags that make an open visible to other observers
_MUTATING_OPEN_FLAGS = os.O_CREAT | os.O_TRUNC | os.O_APPEND

ECANCELED = errno.ECANCELED


class UnknownSyscall(ValueError):
    pass


def as_type(value: Union[str, SyscallType]) -> SyscallType:
    try:
        return SyscallType(value)
    except ValueError:
        raise UnknownSyscall(f"unknown syscall type {value!r}") from None


def classify(syscall_type: Union[str, SyscallType]) -> Purity:
    """Return the purity class of a syscall type.

    ``open_at`` is listed as pure here; an individual open request carrying
    create/truncate flags is reclassified by :func:`request_purity`.
    """
    return _PURITY[as_type(syscall_type)]


@dataclass(frozen=True)
class StatRecord:
    size: int
    mode: int
    mtime: int
    is_dir: bool


@dataclass
class SyscallRequest:
    """One syscall with explicit arguments.

    ``file`` is an open descriptor for descriptor-based calls and a
    store-relative path for ``open_at``/``fstat_at``/``getdents``.
    ``dest`` is the buffer a read lands in; ``payload`` is the source of a
    write and is read when the write starts executing, not when prepared.
    """

    type: SyscallType
    file: Union[int, str, None] = None
    offset: int = 0
    length: int = 0
    payload: Any = None
    dest: Optional[bytearray] = None
    flags: int = 0
    mode: int = 0o644

    def __post_init__(self) -> None:
        self.type = as_type(self.type)

    def arg_record(self) -> tuple:
        """Argument values that identify the call, excluding buffers."""
        return (self.type.value, self.file, self.offset, self.length, self.flags)

    def validate(self) -> None:
        t = self.type
        if self.offset < 0 or self.length < 0:
            raise ValueError(f"{t.value}: negative offset/length")
        if t in (SyscallType.OPEN_AT, SyscallType.FSTAT_AT, SyscallType.GETDENTS):
            if not isinstance(self.file, str):
                raise ValueError(f"{t.value} needs a path")
        elif not isinstance(self.file, int):
            raise ValueError(f"{t.value} needs a descriptor")
        if t is SyscallType.PWRITE and self.payload is None:
            raise ValueError("pwrite needs a payload")
        if t is SyscallType.PREAD and self.dest is not None and len(self.dest) < self.length:
            raise ValueError("pread dest smaller than length")


@dataclass
class SyscallCompletion:
    return_code: int
    result_payload: Any = None
    cancelled: bool = False
    # digest of the bytes a non-pure call actually applied
    effect_digest: Optional[str] = field(default=None, compare=False)

    @property
    def ok(self) -> bool:
        return self.return_code >= 0 and not self.cancelled


def cancelled_completion() -> SyscallCompletion:
    return SyscallCompletion(-ECANCELED, None, cancelled=True)


def request_purity(request: SyscallRequest) -> Purity:
    if request.type is SyscallType.OPEN_AT and request.flags & _MUTATING_OPEN_FLAGS:
        return NON_PURE
    if request.type is SyscallType.OPEN_AT and request.flags & (os.O_WRONLY | os.O_RDWR):
        return NON_PURE
    return classify(request.type)


# request constructors, mostly for readability at call sites

def pread(fd: int, offset: int, length: int, dest: Optional[bytearray] = None) -> SyscallRequest:
    return SyscallRequest(SyscallType.PREAD, fd, offset, length, dest=dest)


def pwrite(fd: int, offset: int, payload: Any, length: Optional[int] = None) -> SyscallRequest:
    if length is None:
        length = len(payload)
    return SyscallRequest(SyscallType.PWRITE, fd, offset, length, payload=payload)


def fstat_at(path: str) -> SyscallRequest:
    return SyscallRequest(SyscallType.FSTAT_AT, path)


def open_at(path: str, flags: int = os.O_RDONLY, mode: int = 0o644) -> SyscallRequest:
    return SyscallRequest(SyscallType.OPEN_AT, path, flags=flags, mode=mode)


def close(fd: int) -> SyscallRequest:
    return SyscallRequest(SyscallType.CLOSE, fd)


def getdents(path: str, position: int, count: int) -> SyscallRequest:
    return SyscallRequest(SyscallType.GETDENTS, path, position, count)


def tell(fd: int) -> SyscallRequest:
    return SyscallRequest(SyscallType.TELL, fd)


def seek(fd: int, offset: int) -> SyscallRequest:
    return SyscallRequest(SyscallType.SEEK, fd, offset)


def normalize_implicit_read(fd: int, length: int, cursor: int,
                            dest: Optional[bytearray] = None) -> list[SyscallRequest]:
    """Rewrite ``read(fd, length)`` at ``cursor`` as tell, pread, seek.

    The seek target is only known once the pread returns, so the returned
    seek carries ``cursor`` and must be rebased with :func:`seek_after`.
    """
    return [tell(fd), pread(fd, cursor, length, dest), seek(fd, cursor)]


def seek_after(triple: list[SyscallRequest], read_rc: int) -> SyscallRequest:
    start = triple[1].offset
    return seek(triple[2].file, start + max(read_rc, 0))

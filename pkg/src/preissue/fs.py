"""File stores that execute syscall requests.

Two interchangeable stores: :class:`VirtualFileStore` keeps everything in
memory, :class:`OsFileStore` maps requests onto real files under a root
directory. Both return errors as negative return codes and never raise for
a failed syscall.
"""

from __future__ import annotations

import errno
import hashlib
import os
import stat as stat_mod
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .catalog import StatRecord, SyscallCompletion, SyscallRequest

DEFAULT_MTIME = 1_600_000_000


def digest(data: bytes) -> str:
    return hashlib.sha256(bytes(data)).hexdigest()[:16]


def write_bytes(request: SyscallRequest) -> bytes:
    """Bytes a pwrite applies, taken from its payload at call time."""
    return bytes(memoryview(request.payload)[: request.length])


@dataclass
class FileImage:
    """Deterministic description of a file tree used to seed a store."""

    files: dict[str, bytes] = field(default_factory=dict)
    dirs: set[str] = field(default_factory=set)
    modes: dict[str, int] = field(default_factory=dict)
    mtimes: dict[str, int] = field(default_factory=dict)

    def add_file(self, path: str, data: bytes, mode: int = 0o644,
                 mtime: int = DEFAULT_MTIME) -> None:
        path = _norm(path)
        self.files[path] = bytes(data)
        self.modes[path] = mode
        self.mtimes[path] = mtime
        parent = os.path.dirname(path)
        while parent:
            self.dirs.add(parent)
            parent = os.path.dirname(parent)

    def add_dir(self, path: str) -> None:
        path = _norm(path)
        while path:
            self.dirs.add(path)
            path = os.path.dirname(path)

    def materialize(self, root: Path) -> None:
        root = Path(root)
        for d in sorted(self.dirs):
            (root / d).mkdir(parents=True, exist_ok=True)
            os.utime(root / d, (DEFAULT_MTIME, DEFAULT_MTIME))
        for path, data in self.files.items():
            target = root / path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            os.chmod(target, self.modes[path])
            os.utime(target, (self.mtimes[path], self.mtimes[path]))


def _norm(path: str) -> str:
    path = os.path.normpath(path).lstrip("/")
    return "" if path == "." else path


class FileStore:
    """Common request dispatch; subclasses provide the primitive operations."""

    def execute(self, request: SyscallRequest) -> SyscallCompletion:
        handler = getattr(self, "_do_" + request.type.value)
        try:
            completion = handler(request)
        except OSError as exc:
            return SyscallCompletion(-(exc.errno or errno.EIO))
        return completion

    def path_of(self, fd: int) -> Optional[str]:
        raise NotImplementedError

    def snapshot(self) -> dict[str, str]:
        raise NotImplementedError

    def describe(self, file) -> object:
        """Stable identity of a request's file operand, for trace digests."""
        if isinstance(file, int):
            # closed descriptors keep their last path so a close digests stably
            return self.path_of(file) or self.__dict__.get("_names", {}).get(file) or f"fd:{file}"
        return file

    def _remember(self, fd: int, path: str) -> None:
        self.__dict__.setdefault("_names", {})[fd] = path


class VirtualFileStore(FileStore):
    """In-memory file store with descriptor table and per-handle cursors."""

    def __init__(self) -> None:
        self._files: dict[str, bytearray] = {}
        self._meta: dict[str, tuple[int, int]] = {}
        self._dirs: set[str] = {""}
        self._handles: dict[int, list] = {}  # fd -> [path, cursor, flags]
        self._next_fd = 3
        self._lock = threading.RLock()

    @classmethod
    def from_image(cls, image: FileImage) -> "VirtualFileStore":
        store = cls()
        for d in image.dirs:
            store._dirs.add(d)
        for path, data in image.files.items():
            store._files[path] = bytearray(data)
            store._meta[path] = (image.modes.get(path, 0o644), image.mtimes.get(path, DEFAULT_MTIME))
        return store

    def execute(self, request: SyscallRequest) -> SyscallCompletion:
        with self._lock:
            return super().execute(request)

    def _handle(self, fd) -> list:
        h = self._handles.get(fd)
        if h is None:
            raise OSError(errno.EBADF, "bad fd")
        return h

    def _do_open_at(self, req: SyscallRequest) -> SyscallCompletion:
        path = _norm(req.file)
        if path in self._dirs:
            fd = self._alloc(path, req.flags)
            return SyscallCompletion(fd)
        if path not in self._files:
            if not req.flags & os.O_CREAT:
                raise OSError(errno.ENOENT, path)
            if os.path.dirname(path) not in self._dirs:
                raise OSError(errno.ENOENT, path)
            self._files[path] = bytearray()
            self._meta[path] = (req.mode & 0o7777, DEFAULT_MTIME)
        elif req.flags & os.O_CREAT and req.flags & os.O_EXCL:
            raise OSError(errno.EEXIST, path)
        if req.flags & os.O_TRUNC:
            del self._files[path][:]
        return SyscallCompletion(self._alloc(path, req.flags))

    def _alloc(self, path: str, flags: int) -> int:
        fd = self._next_fd
        self._next_fd += 1
        self._handles[fd] = [path, 0, flags]
        self._remember(fd, path)
        return fd

    def _do_close(self, req: SyscallRequest) -> SyscallCompletion:
        self._handle(req.file)
        del self._handles[req.file]
        return SyscallCompletion(0)

    def _do_pread(self, req: SyscallRequest) -> SyscallCompletion:
        path = self._handle(req.file)[0]
        if path in self._dirs:
            raise OSError(errno.EISDIR, path)
        data = bytes(self._files[path][req.offset: req.offset + req.length])
        if req.dest is not None:
            req.dest[: len(data)] = data
        return SyscallCompletion(len(data), data)

    def _do_pwrite(self, req: SyscallRequest) -> SyscallCompletion:
        path, _, flags = self._handle(req.file)
        if not flags & (os.O_WRONLY | os.O_RDWR):
            raise OSError(errno.EBADF, "not open for writing")
        data = write_bytes(req)
        buf = self._files[path]
        end = req.offset + len(data)
        if len(buf) < req.offset:
            buf.extend(bytes(req.offset - len(buf)))
        buf[req.offset: end] = data
        return SyscallCompletion(len(data), None, effect_digest=digest(data))

    def _do_fstat_at(self, req: SyscallRequest) -> SyscallCompletion:
        path = _norm(req.file)
        if path in self._dirs:
            return SyscallCompletion(0, StatRecord(0, 0o755, DEFAULT_MTIME, True))
        if path not in self._files:
            raise OSError(errno.ENOENT, path)
        mode, mtime = self._meta[path]
        return SyscallCompletion(0, StatRecord(len(self._files[path]), mode, mtime, False))

    def _do_getdents(self, req: SyscallRequest) -> SyscallCompletion:
        path = _norm(req.file)
        if path not in self._dirs:
            raise OSError(errno.ENOENT if path not in self._files else errno.ENOTDIR, path)
        names = self._listdir(path)
        chunk = tuple(names[req.offset: req.offset + req.length])
        return SyscallCompletion(len(chunk), chunk)

    def _listdir(self, path: str) -> list[str]:
        prefix = path + "/" if path else ""
        names = {p[len(prefix):].split("/", 1)[0]
                 for p in list(self._files) + list(self._dirs)
                 if p.startswith(prefix) and p != path}
        return sorted(n for n in names if n)

    def _do_tell(self, req: SyscallRequest) -> SyscallCompletion:
        return SyscallCompletion(self._handle(req.file)[1])

    def _do_seek(self, req: SyscallRequest) -> SyscallCompletion:
        self._handle(req.file)[1] = req.offset
        return SyscallCompletion(req.offset)

    def path_of(self, fd: int) -> Optional[str]:
        h = self._handles.get(fd)
        return h[0] if h else None

    def read_file(self, path: str) -> bytes:
        return bytes(self._files[_norm(path)])

    def snapshot(self) -> dict[str, str]:
        with self._lock:
            snap = {p: digest(d) for p, d in self._files.items()}
            snap.update({d + "/": "dir" for d in self._dirs if d})
            return dict(sorted(snap.items()))

    def copy(self) -> "VirtualFileStore":
        image = FileImage(dirs=set(self._dirs))
        for p, d in self._files.items():
            image.files[p] = bytes(d)
            image.modes[p], image.mtimes[p] = self._meta[p]
        return VirtualFileStore.from_image(image)


class OsFileStore(FileStore):
    """Executes requests against real files below ``root``."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self._paths: dict[int, str] = {}
        self._lock = threading.Lock()

    def _abs(self, path: str) -> str:
        return str(self.root / _norm(path))

    def _do_open_at(self, req: SyscallRequest) -> SyscallCompletion:
        fd = os.open(self._abs(req.file), req.flags, req.mode)
        with self._lock:
            self._paths[fd] = _norm(req.file)
            self._remember(fd, _norm(req.file))
        return SyscallCompletion(fd)

    def _do_close(self, req: SyscallRequest) -> SyscallCompletion:
        os.close(req.file)
        with self._lock:
            self._paths.pop(req.file, None)
        return SyscallCompletion(0)

    def _do_pread(self, req: SyscallRequest) -> SyscallCompletion:
        data = os.pread(req.file, req.length, req.offset)
        if req.dest is not None:
            req.dest[: len(data)] = data
        return SyscallCompletion(len(data), data)

    def _do_pwrite(self, req: SyscallRequest) -> SyscallCompletion:
        data = write_bytes(req)
        n = os.pwrite(req.file, data, req.offset)
        return SyscallCompletion(n, None, effect_digest=digest(data[:n]))

    def _do_fstat_at(self, req: SyscallRequest) -> SyscallCompletion:
        st = os.stat(self._abs(req.file))
        is_dir = stat_mod.S_ISDIR(st.st_mode)
        record = StatRecord(0 if is_dir else st.st_size,
                            0o755 if is_dir else stat_mod.S_IMODE(st.st_mode),
                            DEFAULT_MTIME if is_dir else int(st.st_mtime), is_dir)
        return SyscallCompletion(0, record)

    def _do_getdents(self, req: SyscallRequest) -> SyscallCompletion:
        names = sorted(os.listdir(self._abs(req.file)))
        chunk = tuple(names[req.offset: req.offset + req.length])
        return SyscallCompletion(len(chunk), chunk)

    def _do_tell(self, req: SyscallRequest) -> SyscallCompletion:
        return SyscallCompletion(os.lseek(req.file, 0, os.SEEK_CUR))

    def _do_seek(self, req: SyscallRequest) -> SyscallCompletion:
        return SyscallCompletion(os.lseek(req.file, req.offset, os.SEEK_SET))

    def path_of(self, fd: int) -> Optional[str]:
        with self._lock:
            return self._paths.get(fd)

    def read_file(self, path: str) -> bytes:
        return Path(self._abs(path)).read_bytes()

    def snapshot(self) -> dict[str, str]:
        snap: dict[str, str] = {}
        for dirpath, dirnames, filenames in os.walk(self.root):
            rel = os.path.relpath(dirpath, self.root)
            rel = "" if rel == "." else rel
            if rel:
                snap[rel + "/"] = "dir"
            for name in filenames:
                path = os.path.join(rel, name) if rel else name
                snap[path] = digest(Path(dirpath, name).read_bytes())
        return dict(sorted(snap.items()))


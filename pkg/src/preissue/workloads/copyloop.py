"""cp-style data copy loop: read a block, write it, repeat.

Each read/write pair is linked so the write starts only after the read
that fills its buffer has completed. The write reads straight from the
read's internal buffer, so read results are not copied back out.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from typing import Optional

from ..catalog import SyscallType, close, open_at, pread, pwrite
from ..device import DeviceModel
from ..engine import Stage
from ..fs import FileImage
from ..graph import IOGraph
from .base import Harness, WorkloadRun, execute_workload

DEFAULT_BLOCK = 128 * 1024


@dataclass(frozen=True)
class CopyLoopConfig:
    source: str = "data/src.bin"
    destination: str = "data/dst.bin"
    block_size: int = DEFAULT_BLOCK
    file_size: int = 4 * 1024 * 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.block_size <= 0:
            raise ValueError("block size must be > 0")
        if self.file_size < 0:
            raise ValueError("file size must be >= 0")

    @property
    def blocks(self) -> int:
        return -(-self.file_size // self.block_size)


def build_fixture(config: CopyLoopConfig) -> FileImage:
    image = FileImage()
    image.add_file(config.source, random.Random(config.seed).randbytes(config.file_size))
    image.add_dir(os.path.dirname(config.destination))
    return image


def build_graph(link: bool = True) -> IOGraph:
    g = IOGraph("copy-loop")

    def read_args(ctx, epoch):
        bs = ctx.inputs["block"]
        return True, link, pread(ctx.inputs["src"], epoch[0] * bs, bs)

    def write_args(ctx, epoch):
        # the write may only join the read's batch (linked) or follow its completion
        buf = ctx.buffer("read", epoch)
        if buf is None or (ctx.stage("read", epoch) is not Stage.PREPARED
                           and ctx.completion("read", epoch) is None):
            return False, False, None
        bs, size = ctx.inputs["block"], ctx.inputs["size"]
        off = epoch[0] * bs
        return True, False, pwrite(ctx.inputs["dst"], off, buf, min(bs, size - off))

    def more(ctx, epoch):
        return True, 0 if (epoch[0] + 1) * ctx.inputs["block"] < ctx.inputs["size"] else 1

    read = g.add_syscall_node("read", SyscallType.PREAD, read_args, copy_result=False)
    write = g.add_syscall_node("write", SyscallType.PWRITE, write_args)
    loop = g.add_branch_node("more_blocks", more)
    g.set_next(g.start, read)
    g.set_next(read, write)
    g.set_next(write, loop)
    g.branch_append_child(loop, read, loop_back=True)
    g.branch_append_child(loop, g.end)
    problems = g.validate()
    assert not problems, problems
    return g


def cp(h: Harness, config: CopyLoopConfig, graph: Optional[IOGraph] = None) -> int:
    """Copy source to destination block by block; returns bytes copied."""
    src = h.sync(open_at(config.source)).return_code
    dst = h.sync(open_at(config.destination, os.O_WRONLY | os.O_CREAT | os.O_TRUNC)).return_code
    if src < 0 or dst < 0:
        raise FileNotFoundError(config.source if src < 0 else config.destination)
    inputs = {"src": src, "dst": dst, "block": config.block_size, "size": config.file_size}
    copied = 0
    buf = bytearray(config.block_size)
    with h.session(graph or build_graph(), inputs) as s:
        while copied < config.file_size:
            rc = s.read(src, config.block_size, buf).return_code
            if rc <= 0:
                break
            w = s.intercept(pwrite(dst, copied, buf, rc))
            if w.return_code != rc:
                raise OSError(f"short write at {copied}: {w.return_code}")
            copied += rc
    h.sync(close(dst))
    h.sync(close(src))
    return copied


def run_copy_loop(config: CopyLoopConfig, depth: int, executor: str = "sim",
                  device: Optional[DeviceModel] = None, graph: Optional[IOGraph] = None,
                  **kwargs) -> WorkloadRun:
    return execute_workload(build_fixture(config), lambda h: cp(h, config, graph),
                            depth, executor, device, **kwargs)

"""du-style metadata loop: list a directory, fstatat every entry."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from ..catalog import SyscallType, fstat_at, getdents
from ..device import DeviceModel
from ..fs import DEFAULT_MTIME, FileImage
from ..graph import IOGraph
from .base import Harness, WorkloadRun, execute_workload

LISTING_BATCH = 256


@dataclass(frozen=True)
class StatLoopConfig:
    directory: str = "tree"
    entries: int = 64
    seed: int = 0
    max_file_size: int = 16384
    # names appended after listing, as if removed between getdents and fstatat
    vanished: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.entries < 0:
            raise ValueError("entries must be >= 0")


def build_fixture(config: StatLoopConfig) -> FileImage:
    rng = random.Random(config.seed)
    image = FileImage()
    image.add_dir(config.directory)
    for i in range(config.entries):
        size = rng.randrange(config.max_file_size + 1)
        mode = rng.choice((0o644, 0o600, 0o755))
        image.add_file(f"{config.directory}/f{i:05d}", rng.randbytes(size), mode,
                       DEFAULT_MTIME + rng.randrange(86400))
    return image


def build_graph() -> IOGraph:
    g = IOGraph("stat-loop")

    def stat_args(ctx, epoch):
        name = ctx.inputs["names"][epoch[0]]
        return True, False, fstat_at(f"{ctx.inputs['dir']}/{name}")

    def more(ctx, epoch):
        return True, 0 if epoch[0] + 1 < len(ctx.inputs["names"]) else 1

    stat = g.add_syscall_node("fstatat", SyscallType.FSTAT_AT, stat_args)
    loop = g.add_branch_node("more_entries", more)
    g.set_next(g.start, stat)
    g.set_next(stat, loop)
    g.branch_append_child(loop, stat, loop_back=True)
    g.branch_append_child(loop, g.end)
    problems = g.validate()
    assert not problems, problems
    return g


def list_directory(h: Harness, directory: str) -> list[str]:
    names: list[str] = []
    while True:
        c = h.sync(getdents(directory, len(names), LISTING_BATCH))
        if c.return_code <= 0:
            return names
        names.extend(c.result_payload)


def du(h: Harness, directory: str, extra: tuple[str, ...] = ()) -> list[tuple]:
    """Stat every entry of ``directory``; returns (name, rc, record) rows."""
    names = list_directory(h, directory) + list(extra)
    rows = []
    graph = build_graph()
    with h.session(graph, {"dir": directory, "names": tuple(names)}) as s:
        for name in names:
            c = s.intercept(fstat_at(f"{directory}/{name}"))
            rows.append((name, c.return_code, c.result_payload))
    return rows


def run_stat_loop(config: StatLoopConfig, depth: int, executor: str = "sim",
                  device: Optional[DeviceModel] = None, **kwargs) -> WorkloadRun:
    return execute_workload(build_fixture(config),
                            lambda h: du(h, config.directory, config.vanished),
                            depth, executor, device, **kwargs)

"""Paged on-disk B+-tree with bulk loading and range scans.

One backing file holds fixed-size pages. Page 0 is the meta page. Every
node page starts with a 16-byte header ``(kind, count, sibling)``; leaves
then hold ``count`` keys followed by ``count`` values, internal nodes hold
``count`` separator keys followed by ``count + 1`` child page ids. All
integers are little-endian unsigned 64-bit.

Bulk load packs sorted records into leaves left to right and writes them
with a speculated pwrite loop. A scan gathers every candidate leaf id from
the last internal level first, then reads the leaves in a speculated
pread loop.
"""

from __future__ import annotations

import bisect
import os
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ..catalog import SyscallType, close, open_at, pread, pwrite
from ..device import DeviceModel
from ..fs import FileImage
from ..graph import IOGraph
from .base import Harness, WorkloadRun, execute_workload

PAGE_SIZE = 8192
MAX_DEGREE = 510
NO_PAGE = 0xFFFFFFFFFFFFFFFF
LEAF, INTERNAL = 1, 2
MAGIC = 0x42505452

_HEADER = struct.Struct("<HHIQ")  # kind, count, pad, sibling
_META = struct.Struct("<QQQQQ")  # magic, root, height, degree, leaves
KEY_LIMIT = 2**64


class TreeError(ValueError):
    pass


@dataclass
class Node:
    kind: int
    keys: list[int]
    values: list[int] = field(default_factory=list)  # leaf payloads
    children: list[int] = field(default_factory=list)  # internal child page ids
    sibling: int = NO_PAGE

    @property
    def is_leaf(self) -> bool:
        return self.kind == LEAF


def max_degree(page_size: int) -> int:
    """Largest fan-out whose internal node fits a page (510 for 8KB)."""
    return (page_size - _HEADER.size - 8) // 16


def encode_node(node: Node, page_size: int = PAGE_SIZE) -> bytes:
    n = len(node.keys)
    tail = node.values if node.is_leaf else node.children
    body = _HEADER.pack(node.kind, n, 0, node.sibling) + struct.pack(f"<{n + len(tail)}Q",
                                                                      *node.keys, *tail)
    if len(body) > page_size:
        raise TreeError(f"node with {n} keys overflows a {page_size}-byte page")
    return body + bytes(page_size - len(body))


def decode_node(page: bytes) -> Node:
    kind, n, _, sibling = _HEADER.unpack_from(page)
    if kind not in (LEAF, INTERNAL):
        raise TreeError(f"bad page kind {kind}")
    tail = n if kind == LEAF else n + 1
    words = struct.unpack_from(f"<{n + tail}Q", page, _HEADER.size)
    keys = list(words[:n])
    if kind == LEAF:
        return Node(LEAF, keys, values=list(words[n:]), sibling=sibling)
    return Node(INTERNAL, keys, children=list(words[n:]), sibling=sibling)


@dataclass(frozen=True)
class Meta:
    root: int
    height: int
    degree: int
    leaves: int

    def encode(self, page_size: int = PAGE_SIZE) -> bytes:
        body = _META.pack(MAGIC, self.root, self.height, self.degree, self.leaves)
        return body + bytes(page_size - len(body))

    @classmethod
    def decode(cls, page: bytes) -> "Meta":
        magic, root, height, degree, leaves = _META.unpack_from(page)
        if magic != MAGIC:
            raise TreeError("not a tree file")
        return cls(root, height, degree, leaves)


@dataclass
class TreeLayout:
    """Pages of a bulk-loaded tree, before they are written."""

    meta: Meta
    leaf_pages: list[tuple[int, Node]]
    internal_pages: list[tuple[int, Node]]


def plan_bulk_load(records: Sequence[tuple[int, int]], degree: int = MAX_DEGREE,
                   fill: Optional[int] = None) -> TreeLayout:
    """Lay out a tree for sorted ``records``; leaves take pages 1..L."""
    if not 2 < degree <= MAX_DEGREE:
        raise TreeError(f"degree must be in (2, {MAX_DEGREE}]")
    fill = fill or degree
    if not 1 <= fill <= degree:
        raise TreeError("fill must be in [1, degree]")
    keys = [k for k, _ in records]
    for a, b in zip(keys, keys[1:]):
        if a >= b:
            raise TreeError("bulk load input must be sorted by unique key")
    for k, v in records:
        if not (0 <= k < KEY_LIMIT and 0 <= v < KEY_LIMIT):
            raise TreeError("keys and values are unsigned 64-bit")

    chunks = [records[i:i + fill] for i in range(0, len(records), fill)] or [[]]
    first = 1
    leaves: list[tuple[int, Node]] = []
    for i, chunk in enumerate(chunks):
        sib = first + i + 1 if i + 1 < len(chunks) else NO_PAGE
        leaves.append((first + i, Node(LEAF, [k for k, _ in chunk], [v for _, v in chunk],
                                       sibling=sib)))

    # each level: (page id, min key) of its nodes
    level = [(pid, node.keys[0] if node.keys else 0) for pid, node in leaves]
    internals: list[tuple[int, Node]] = []
    next_page = first + len(leaves)
    height = 1
    while len(level) > 1:
        groups = [level[i:i + fill + 1] for i in range(0, len(level), fill + 1)]
        if len(groups) > 1 and len(groups[-1]) == 1:
            # never leave a single-child node; borrow one from the previous group
            groups[-1].insert(0, groups[-2].pop())
        upper = []
        for gi, group in enumerate(groups):
            pid = next_page + gi
            sib = pid + 1 if gi + 1 < len(groups) else NO_PAGE
            node = Node(INTERNAL, [m for _, m in group[1:]], children=[p for p, _ in group],
                        sibling=sib)
            internals.append((pid, node))
            upper.append((pid, group[0][1]))
        next_page += len(groups)
        level = upper
        height += 1
    return TreeLayout(Meta(level[0][0], height, degree, len(leaves)), leaves, internals)


def random_records(n: int, seed: int) -> list[tuple[int, int]]:
    rng = random.Random(seed)
    keys: set[int] = set()
    while len(keys) < n:
        keys.add(rng.getrandbits(64))
    return [(k, rng.getrandbits(64)) for k in sorted(keys)]


# invariants ----------------------------------------------------------------

def check_tree(pages: dict[int, Node], meta: Meta) -> list[str]:
    """Structural problems: ordering, leaf depth, separators and sibling chain."""
    problems: list[str] = []
    leaf_depths: set[int] = set()
    leaves_in_order: list[int] = []

    def walk(pid: int, depth: int, lo: Optional[int], hi: Optional[int]) -> None:
        node = pages[pid]
        if node.keys != sorted(node.keys) or len(set(node.keys)) != len(node.keys):
            problems.append(f"page {pid}: keys not strictly sorted")
        if len(node.keys) > meta.degree:
            problems.append(f"page {pid}: {len(node.keys)} keys exceed degree")
        for k in node.keys:
            if (lo is not None and k < lo) or (hi is not None and k >= hi):
                problems.append(f"page {pid}: key {k} outside [{lo}, {hi})")
        if node.is_leaf:
            leaf_depths.add(depth)
            leaves_in_order.append(pid)
            return
        bounds = [lo, *node.keys, hi]
        for i, child in enumerate(node.children):
            walk(child, depth + 1, bounds[i], bounds[i + 1])

    walk(meta.root, 1, None, None)
    if len(leaf_depths) > 1:
        problems.append(f"leaves at depths {sorted(leaf_depths)}")
    if leaf_depths and leaf_depths != {meta.height}:
        problems.append(f"meta height {meta.height} != leaf depth {leaf_depths}")
    chain = []
    pid = leaves_in_order[0] if leaves_in_order else NO_PAGE
    while pid != NO_PAGE and len(chain) <= len(pages):
        chain.append(pid)
        pid = pages[pid].sibling
    if chain != leaves_in_order:
        problems.append("sibling chain does not cover leaves in key order")
    return problems


# graphs -------------------------------------------------------------------

def _loop_graph(name: str, node_type: SyscallType, args) -> IOGraph:
    g = IOGraph(name)

    def more(ctx, epoch):
        return True, 0 if epoch[0] + 1 < len(ctx.inputs["pages"]) else 1

    op = g.add_syscall_node(node_type.value + "_leaf", node_type, args)
    loop = g.add_branch_node("more_leaves", more)
    g.set_next(g.start, op)
    g.set_next(op, loop)
    g.branch_append_child(loop, op, loop_back=True)
    g.branch_append_child(loop, g.end)
    problems = g.validate()
    assert not problems, problems
    return g


def load_graph() -> IOGraph:
    def args(ctx, epoch):
        pid = ctx.inputs["pages"][epoch[0]]
        ps = ctx.inputs["page_size"]
        return True, False, pwrite(ctx.inputs["fd"], pid * ps, ctx.inputs["images"][epoch[0]], ps)

    return _loop_graph("bptree-load", SyscallType.PWRITE, args)


def scan_graph() -> IOGraph:
    def args(ctx, epoch):
        ps = ctx.inputs["page_size"]
        return True, False, pread(ctx.inputs["fd"], ctx.inputs["pages"][epoch[0]] * ps, ps)

    return _loop_graph("bptree-scan", SyscallType.PREAD, args)


# drivers ------------------------------------------------------------------

def bptree_load(h: Harness, path: str, records: Sequence[tuple[int, int]],
                degree: int = MAX_DEGREE, fill: Optional[int] = None,
                page_size: int = PAGE_SIZE) -> Meta:
    """Write a bulk-loaded tree to ``path``; the leaf writes are speculated."""
    layout = plan_bulk_load(records, degree, fill)
    fd = h.sync(open_at(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC)).return_code
    if fd < 0:
        raise OSError(-fd, path)
    images = tuple(encode_node(n, page_size) for _, n in layout.leaf_pages)
    pages = tuple(pid for pid, _ in layout.leaf_pages)
    with h.session(load_graph(), {"fd": fd, "pages": pages, "images": images,
                                  "page_size": page_size}) as s:
        for pid, image in zip(pages, images):
            s.intercept(pwrite(fd, pid * page_size, image, page_size))
    for pid, node in layout.internal_pages:
        h.sync(pwrite(fd, pid * page_size, encode_node(node, page_size)))
    h.sync(pwrite(fd, 0, layout.meta.encode(page_size)))
    h.sync(close(fd))
    return layout.meta


class TreeReader:
    """Synchronous page access for traversal outside the speculated region."""

    def __init__(self, h: Harness, fd: int, page_size: int = PAGE_SIZE) -> None:
        self.h, self.fd, self.page_size = h, fd, page_size
        self.meta = Meta.decode(self.read_page(0))

    def read_page(self, pid: int) -> bytes:
        c = self.h.sync(pread(self.fd, pid * self.page_size, self.page_size))
        if c.return_code != self.page_size:
            raise TreeError(f"short page read {pid}: {c.return_code}")
        return c.result_payload

    def node(self, pid: int) -> Node:
        return decode_node(self.read_page(pid))

    def descend(self, key: int, stop_height: int) -> int:
        """Page id of the node at ``stop_height`` (1 = leaf) on the path to ``key``."""
        pid, height = self.meta.root, self.meta.height
        while height > stop_height:
            node = self.node(pid)
            pid = node.children[bisect.bisect_right(node.keys, key)]
            height -= 1
        return pid

    def candidate_leaves(self, lo: int, hi: int) -> list[int]:
        """Every leaf that may hold keys in ``[lo, hi]``, from last-level internals."""
        if self.meta.height == 1:
            return [self.meta.root]
        first = self.descend(lo, 2)
        last = self.descend(hi, 2)
        leaves: list[int] = []
        pid = first
        while True:
            node = self.node(pid)
            lo_i = bisect.bisect_right(node.keys, lo) if pid == first else 0
            hi_i = bisect.bisect_right(node.keys, hi) if pid == last else len(node.children) - 1
            leaves.extend(node.children[lo_i:hi_i + 1])
            if pid == last or node.sibling == NO_PAGE:
                return leaves
            pid = node.sibling


def bptree_scan(h: Harness, path: str, lo: int, hi: int,
                page_size: int = PAGE_SIZE) -> list[tuple[int, int]]:
    """All records with ``lo <= key <= hi`` in key order."""
    fd = h.sync(open_at(path)).return_code
    if fd < 0:
        raise OSError(-fd, path)
    out: list[tuple[int, int]] = []
    if lo <= hi:
        reader = TreeReader(h, fd, page_size)
        leaves = tuple(reader.candidate_leaves(lo, hi))
        with h.session(scan_graph(), {"fd": fd, "pages": leaves, "page_size": page_size}) as s:
            for pid in leaves:
                c = s.intercept(pread(fd, pid * page_size, page_size))
                node = decode_node(c.result_payload)
                a = bisect.bisect_left(node.keys, lo)
                b = bisect.bisect_right(node.keys, hi)
                out.extend(zip(node.keys[a:b], node.values[a:b]))
    h.sync(close(fd))
    return out


def read_all_pages(store_bytes: bytes, page_size: int = PAGE_SIZE) -> tuple[Meta, dict[int, Node]]:
    meta = Meta.decode(store_bytes[:page_size])
    pages = {}
    for pid in range(1, len(store_bytes) // page_size):
        page = store_bytes[pid * page_size:(pid + 1) * page_size]
        if any(page):
            pages[pid] = decode_node(page)
    return meta, pages


# workload -----------------------------------------------------------------

@dataclass(frozen=True)
class BPTreeConfig:
    path: str = "db/tree.bpt"
    records: int = 20000
    degree: int = MAX_DEGREE
    fill: Optional[int] = None
    scans: int = 4
    seed: int = 0
    page_size: int = PAGE_SIZE

    def scan_ranges(self, records: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
        rng = random.Random(self.seed ^ 0x5CA9)
        ranges = [(0, KEY_LIMIT - 1)]
        for _ in range(self.scans - 1):
            a, b = sorted(rng.getrandbits(64) for _ in range(2))
            ranges.append((a, b))
        return ranges


def reference_scan(records: Iterable[tuple[int, int]], lo: int, hi: int) -> list[tuple[int, int]]:
    return sorted((k, v) for k, v in records if lo <= k <= hi)


def build_fixture(config: BPTreeConfig) -> FileImage:
    image = FileImage()
    image.add_dir(os.path.dirname(config.path))
    return image


def bptree_workload(h: Harness, config: BPTreeConfig) -> dict:
    records = random_records(config.records, config.seed)
    meta = bptree_load(h, config.path, records, config.degree, config.fill, config.page_size)
    scans = [bptree_scan(h, config.path, lo, hi, config.page_size)
             for lo, hi in config.scan_ranges(records)]
    return {"meta": meta, "scans": scans}


def run_bptree(config: BPTreeConfig, depth: int, executor: str = "sim",
               device: Optional[DeviceModel] = None, **kwargs) -> WorkloadRun:
    return execute_workload(build_fixture(config), lambda h: bptree_workload(h, config),
                            depth, executor, device, **kwargs)

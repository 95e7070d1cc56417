"""Mini LSM-tree with a speculated Get path.

Table layout (all integers little-endian unsigned 64-bit)::

    data blocks   sorted (key, value, tombstone) entries, fixed-size blocks
    index block   (last_key, offset, length) per data block
    footer        index_offset, index_length, min_key, max_key

A Get checks the memtable, then walks its candidate tables (every level-0
table covering the key, newest first, then at most one table per lower
level). Each candidate costs an index pread and a data pread; the data
pread's arguments come from a binary search over the harvested index.
Tables are opened up front and their footers read outside the session.
"""

from __future__ import annotations

import bisect
import random
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..catalog import SyscallType, close, open_at, pread
from ..device import DeviceModel
from ..fs import FileImage
from ..graph import IOGraph
from .base import Harness, WorkloadRun, execute_workload

BLOCK_SIZE = 4096
_ENTRY = struct.Struct("<QQQ")
_INDEX = struct.Struct("<QQQ")
_FOOTER = struct.Struct("<QQQQ")
FOOTER_SIZE = _FOOTER.size
TOMBSTONE = 1
ENTRIES_PER_BLOCK = BLOCK_SIZE // _ENTRY.size


class LSMError(ValueError):
    pass


@dataclass(frozen=True)
class TableMeta:
    path: str
    level: int
    min_key: int
    max_key: int
    index_offset: int = 0
    index_length: int = 0

    def covers(self, key: int) -> bool:
        return self.min_key <= key <= self.max_key


def encode_table(entries: Sequence[tuple[int, int, bool]],
                 block_size: int = BLOCK_SIZE) -> bytes:
    """Serialize sorted ``(key, value, deleted)`` entries into one table file."""
    if not entries:
        raise LSMError("empty table")
    keys = [k for k, _, _ in entries]
    if any(a >= b for a, b in zip(keys, keys[1:])):
        raise LSMError("table entries must be sorted by unique key")
    per_block = block_size // _ENTRY.size
    out = bytearray()
    index = bytearray()
    for i in range(0, len(entries), per_block):
        chunk = entries[i:i + per_block]
        block = b"".join(_ENTRY.pack(k, v, TOMBSTONE if dead else 0) for k, v, dead in chunk)
        index += _INDEX.pack(chunk[-1][0], len(out), len(block))
        out += block + bytes(block_size - len(block))
    index_offset = len(out)
    out += index
    out += _FOOTER.pack(index_offset, len(index), keys[0], keys[-1])
    return bytes(out)


def decode_footer(data: bytes) -> tuple[int, int, int, int]:
    return _FOOTER.unpack(data[-FOOTER_SIZE:])


def search_index(index: bytes, key: int) -> Optional[tuple[int, int]]:
    """``(offset, length)`` of the data block that may hold ``key``."""
    last_keys = [_INDEX.unpack_from(index, i)[0] for i in range(0, len(index), _INDEX.size)]
    i = bisect.bisect_left(last_keys, key)
    if i == len(last_keys):
        return None
    _, offset, length = _INDEX.unpack_from(index, i * _INDEX.size)
    return offset, length


def search_block(block: bytes, key: int) -> Optional[tuple[int, bool]]:
    """``(value, deleted)`` of ``key`` inside a data block, if present."""
    n = len(block) // _ENTRY.size
    keys = [_ENTRY.unpack_from(block, i * _ENTRY.size)[0] for i in range(n)]
    i = bisect.bisect_left(keys, key)
    if i < n and keys[i] == key:
        _, value, flag = _ENTRY.unpack_from(block, i * _ENTRY.size)
        return value, bool(flag & TOMBSTONE)
    return None


# fixtures -----------------------------------------------------------------

@dataclass(frozen=True)
class LSMConfig:
    root: str = "lsm"
    l0_tables: int = 8
    levels: int = 4
    keys_per_table: int = 1024
    key_space: int = 1 << 20
    memtable_size: int = 64
    gets: int = 16
    delete_ratio: float = 0.05
    seed: int = 0


@dataclass
class MiniLSM:
    """Fixture description: memtable plus table contents per level."""

    memtable: dict[int, Optional[int]]
    l0: list[tuple[TableMeta, list[tuple[int, int, bool]]]]  # newest first
    levels: list[list[tuple[TableMeta, list[tuple[int, int, bool]]]]]
    files: dict[str, bytes] = field(default_factory=dict)

    def all_tables(self) -> list[TableMeta]:
        return [m for m, _ in self.l0] + [m for level in self.levels for m, _ in level]

    def candidates(self, key: int) -> list[TableMeta]:
        found = [m for m, _ in self.l0 if m.covers(key)]
        for level in self.levels:
            metas = [m for m, _ in level]
            i = bisect.bisect_left([m.max_key for m in metas], key)
            if i < len(metas) and metas[i].covers(key):
                found.append(metas[i])
        return found

    def image(self) -> FileImage:
        image = FileImage()
        for path, data in self.files.items():
            image.add_file(path, data)
        return image


def _table(path: str, level: int,
           entries: list[tuple[int, int, bool]]) -> tuple[TableMeta, list, bytes]:
    data = encode_table(entries)
    index_offset, index_length, lo, hi = decode_footer(data)
    return TableMeta(path, level, lo, hi, index_offset, index_length), entries, data


def _entries(rng: random.Random, keys: Sequence[int], delete_ratio: float) -> list[tuple[int, int, bool]]:
    return [(k, rng.getrandbits(48), rng.random() < delete_ratio) for k in sorted(set(keys))]


def build_lsm(config: LSMConfig, plant: Optional[tuple[int, int]] = None) -> MiniLSM:
    """Deterministic fixture from ``config.seed``.

    Level ``L >= 1`` is split into ``2**(L-1)`` tables with disjoint key
    ranges; level-0 tables each span a random wide range and overlap.
    ``plant=(key, table_position)`` writes ``key`` only into the table at
    that 1-based position of the key's candidate list, keeping every
    other candidate covering it.
    """
    rng = random.Random(config.seed)
    space = config.key_space
    lsm = MiniLSM({}, [], [])
    files: dict[str, bytes] = {}

    for t in range(config.l0_tables):  # t = 0 is the newest
        lo = rng.randrange(space // 4)
        hi = rng.randrange(3 * space // 4, space)
        keys = [rng.randrange(lo, hi) for _ in range(config.keys_per_table)] + [lo, hi]
        meta, entries, data = _table(f"{config.root}/L0-{t:03d}.sst", 0,
                                     _entries(rng, keys, config.delete_ratio))
        lsm.l0.append((meta, entries))
        files[meta.path] = data

    for level in range(1, config.levels + 1):
        parts = 2 ** (level - 1)
        tables = []
        for p in range(parts):
            lo, hi = p * space // parts, (p + 1) * space // parts - 1
            keys = [rng.randrange(lo, hi + 1) for _ in range(config.keys_per_table)] + [lo, hi]
            meta, entries, data = _table(f"{config.root}/L{level}-{p:03d}.sst", level,
                                         _entries(rng, keys, config.delete_ratio))
            tables.append((meta, entries))
            files[meta.path] = data
        lsm.levels.append(tables)

    for _ in range(config.memtable_size):
        key = rng.randrange(space)
        lsm.memtable[key] = None if rng.random() < config.delete_ratio else rng.getrandbits(48)

    if plant is not None:
        _plant(lsm, files, *plant)
    lsm.files = files
    return lsm


def _plant(lsm: MiniLSM, files: dict[str, bytes], key: int, position: int) -> None:
    lsm.memtable.pop(key, None)
    cands = lsm.candidates(key)
    if not 1 <= position <= len(cands):
        raise LSMError(f"key {key} has {len(cands)} candidates, cannot plant at {position}")
    target = cands[position - 1]

    def rewrite(tables):
        for i, (meta, entries) in enumerate(tables):
            kept = [e for e in entries if e[0] != key]
            if meta.path == target.path:
                kept = sorted(kept + [(key, 0xC0FFEE, False)])
            if kept != entries:
                new_meta, _, data = _table(meta.path, meta.level, kept)
                if (new_meta.min_key, new_meta.max_key) != (meta.min_key, meta.max_key):
                    raise LSMError("planting changed a table's key range")
                tables[i] = (new_meta, kept)
                files[meta.path] = data

    rewrite(lsm.l0)
    for level in lsm.levels:
        rewrite(level)


def brute_force_get(lsm: MiniLSM, key: int) -> Optional[int]:
    """Newest value by scanning every table in recency order; no indexes."""
    if key in lsm.memtable:
        return lsm.memtable[key]
    for meta, entries in lsm.l0 + [t for level in lsm.levels for t in level]:
        for k, v, dead in entries:
            if k == key:
                return None if dead else v
    return None


# graph and driver ---------------------------------------------------------

def get_graph() -> IOGraph:
    g = IOGraph("lsm-get")

    def index_args(ctx, epoch):
        t = ctx.inputs["tables"][epoch[0]]
        return True, False, pread(t.fd, t.meta.index_offset, t.meta.index_length)

    def data_args(ctx, epoch):
        done = ctx.completion("pread_index", epoch)
        if done is None or done.return_code < 0:
            return False, False, None
        loc = search_index(done.result_payload, ctx.inputs["key"])
        if loc is None:
            return False, False, None
        t = ctx.inputs["tables"][epoch[0]]
        return True, False, pread(t.fd, loc[0], loc[1])

    def more(ctx, epoch):
        return True, 0 if epoch[0] + 1 < len(ctx.inputs["tables"]) else 1

    index = g.add_syscall_node("pread_index", SyscallType.PREAD, index_args)
    data = g.add_syscall_node("pread_data", SyscallType.PREAD, data_args)
    loop = g.add_branch_node("next_table", more)
    g.set_next(g.start, index)
    g.set_next(index, data)
    g.set_next(data, loop, weak=True)
    g.branch_append_child(loop, index, loop_back=True)
    g.branch_append_child(loop, g.end)
    problems = g.validate()
    assert not problems, problems
    return g


@dataclass(frozen=True)
class OpenTable:
    fd: int
    meta: TableMeta


class LSMReader:
    """Pre-opened tables plus the memtable; ``get`` runs one session per lookup."""

    def __init__(self, h: Harness, lsm: MiniLSM) -> None:
        self.h = h
        self.lsm = lsm
        self.graph = get_graph()
        self.tables: dict[str, OpenTable] = {}
        for meta in lsm.all_tables():
            fd = h.sync(open_at(meta.path)).return_code
            if fd < 0:
                raise OSError(-fd, meta.path)
            size = len(lsm.files[meta.path])
            footer = h.sync(pread(fd, size - FOOTER_SIZE, FOOTER_SIZE)).result_payload
            index_offset, index_length, lo, hi = decode_footer(footer)
            self.tables[meta.path] = OpenTable(
                fd, TableMeta(meta.path, meta.level, lo, hi, index_offset, index_length))
        self.last_probes = 0

    def get(self, key: int) -> Optional[int]:
        self.last_probes = 0
        if key in self.lsm.memtable:
            return self.lsm.memtable[key]
        cands = tuple(self.tables[m.path] for m in self.lsm.candidates(key))
        if not cands:
            return None
        with self.h.session(self.graph, {"key": key, "tables": cands}) as s:
            for t in cands:
                self.last_probes += 1
                idx = s.intercept(pread(t.fd, t.meta.index_offset, t.meta.index_length))
                loc = search_index(idx.result_payload, key)
                if loc is None:
                    raise LSMError(f"{t.meta.path} covers {key} but its index does not")
                blk = s.intercept(pread(t.fd, loc[0], loc[1]))
                hit = search_block(blk.result_payload, key)
                if hit is not None:
                    value, dead = hit
                    return None if dead else value
        return None

    def close(self) -> None:
        for t in self.tables.values():
            self.h.sync(close(t.fd))
        self.tables.clear()


def lookup_keys(lsm: MiniLSM, config: LSMConfig) -> list[int]:
    """Mix of stored keys, memtable keys and likely misses."""
    rng = random.Random(config.seed ^ 0x15A)
    stored = sorted({k for m in lsm.l0 + [t for lv in lsm.levels for t in lv] for k, _, _ in m[1]})
    keys = []
    for i in range(config.gets):
        roll = i % 4
        if roll == 0 and lsm.memtable:
            keys.append(rng.choice(sorted(lsm.memtable)))
        elif roll == 3:
            keys.append(rng.randrange(config.key_space))
        elif stored:
            keys.append(rng.choice(stored))
    return keys


def lsm_workload(h: Harness, lsm: MiniLSM, keys: Sequence[int]) -> list[tuple[int, Optional[int]]]:
    reader = LSMReader(h, lsm)
    try:
        return [(k, reader.get(k)) for k in keys]
    finally:
        reader.close()


def run_lsm(config: LSMConfig, depth: int, executor: str = "sim",
            device: Optional[DeviceModel] = None, keys: Optional[Sequence[int]] = None,
            lsm: Optional[MiniLSM] = None, **kwargs) -> WorkloadRun:
    lsm = lsm or build_lsm(config)
    keys = list(keys) if keys is not None else lookup_keys(lsm, config)
    return execute_workload(lsm.image(), lambda h: lsm_workload(h, lsm, keys),
                            depth, executor, device, **kwargs)


def miss_candidates(config: LSMConfig) -> int:
    """Candidate count of a key every table covers: all L0 tables plus one per level."""
    return config.l0_tables + config.levels


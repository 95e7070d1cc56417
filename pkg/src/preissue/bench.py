"""Depth sweeps over workloads and executors with a synchrony check per row."""

from __future__ import annotations

import csv
import io
import logging
import os
import statistics
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO

from .device import DeviceModel
from .oracle import checked_run, run_sync_oracle
from .workloads import EXECUTOR_KINDS, WORKLOADS, workload_config

log = logging.getLogger(__name__)

FIELDS = ("workload", "depth", "executor", "rep", "makespan", "prepared", "harvested",
          "cancelled", "sync_issued", "synchrony_ok")
DEPTH_ENV = "PREISSUE_DEPTH"


@dataclass(frozen=True)
class BenchSpec:
    workload: str
    depths: tuple[int, ...] = (0, 1, 4, 16)
    executor: str = "sim"
    device_config: Optional[Path] = None
    seed: int = 0
    reps: int = 1
    out: Optional[Path] = None
    clients: int = 1
    small: bool = False

    def __post_init__(self) -> None:
        if self.workload not in WORKLOADS:
            raise ValueError(f"unknown workload {self.workload!r}; choose from {sorted(WORKLOADS)}")
        if self.executor not in EXECUTOR_KINDS:
            raise ValueError(f"unknown executor {self.executor!r}; choose from {EXECUTOR_KINDS}")
        if not self.depths or any(d < 0 for d in self.depths):
            raise ValueError("depths must be a non-empty list of values >= 0")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")

    def device(self) -> Optional[DeviceModel]:
        return DeviceModel.load(self.device_config) if self.device_config else None


@dataclass
class BenchRow:
    workload: str
    depth: int
    executor: str
    rep: int
    makespan: float
    prepared: int
    harvested: int
    cancelled: int
    sync_issued: int
    synchrony_ok: bool

    def as_csv(self) -> list[str]:
        return [self.workload, str(self.depth), self.executor, str(self.rep),
                f"{self.makespan:.3f}", str(self.prepared), str(self.harvested),
                str(self.cancelled), str(self.sync_issued), str(self.synchrony_ok).lower()]


@dataclass
class BenchResult:
    spec: BenchSpec
    rows: list[BenchRow] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.synchrony_ok for r in self.rows)

    def mean_makespan(self) -> dict[int, float]:
        by_depth: dict[int, list[float]] = {}
        for r in self.rows:
            by_depth.setdefault(r.depth, []).append(r.makespan)
        return {d: statistics.fmean(v) for d, v in sorted(by_depth.items())}


def depths_from_env(depths: Sequence[int], environ: Optional[dict] = None) -> tuple[int, ...]:
    """Depth list, overridden by a comma-separated ``PREISSUE_DEPTH`` if set."""
    value = (environ if environ is not None else os.environ).get(DEPTH_ENV, "").strip()
    if not value:
        return tuple(depths)
    return parse_depths(value)


def parse_depths(text: str) -> tuple[int, ...]:
    try:
        depths = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ValueError(f"bad depth list {text!r}") from None
    if not depths or any(d < 0 for d in depths):
        raise ValueError(f"depths must be >= 0: {text!r}")
    return depths


def _client_runs(spec: BenchSpec, depth: int, device, config, reference) -> list:
    """One checked run per client; clients run on their own threads and executors."""
    if spec.clients == 1:
        return [checked_run(spec.workload, depth, spec.executor, config=config,
                            reference=reference, device=device)]
    results: list = [None] * spec.clients
    errors: list[BaseException] = []

    def client(i: int) -> None:
        try:
            results[i] = checked_run(spec.workload, depth, spec.executor, config=config,
                                     reference=reference, device=device)
        except BaseException as exc:  # re-raised on the caller's thread
            errors.append(exc)

    threads = [threading.Thread(target=client, args=(i,), name=f"client-{i}")
               for i in range(spec.clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def run_bench(spec: BenchSpec) -> BenchResult:
    device = spec.device()
    config = workload_config(spec.workload, spec.seed, spec.small)
    reference = run_sync_oracle(spec.workload, config, device=device)
    result = BenchResult(spec)
    for depth in spec.depths:
        for rep in range(spec.reps):
            runs = _client_runs(spec, depth, device, config, reference)
            row = BenchRow(
                spec.workload, depth, spec.executor, rep,
                statistics.fmean(c.run.makespan for c in runs),
                sum(c.run.total("prepared") for c in runs),
                sum(c.run.total("harvested") for c in runs),
                sum(c.run.total("cancelled") for c in runs),
                sum(c.run.total("sync_issued") for c in runs),
                all(c.ok for c in runs))
            if not row.synchrony_ok:
                bad = next(c for c in runs if not c.ok)
                log.error("synchrony check failed: %s depth=%d rep=%d: %s", spec.workload,
                          depth, rep, bad.verdict.reason or "purity violation")
            result.rows.append(row)
    return result


def write_csv(rows: Iterable[BenchRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(FIELDS)
    for row in rows:
        writer.writerow(row.as_csv())


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))

"""The four case-study workloads and a registry to run them by name."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, Optional

from ..device import DeviceModel
from .base import EXECUTOR_KINDS, Harness, WorkloadRun, execute_workload, open_executor
from .bptree import BPTreeConfig, run_bptree
from .copyloop import CopyLoopConfig, run_copy_loop
from .lsm import LSMConfig, run_lsm
from .statloop import StatLoopConfig, run_stat_loop


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    runner: Callable[..., WorkloadRun]
    # full-size defaults and a reduced shape for wide test matrices
    default: Any
    small: Any


WORKLOADS: dict[str, WorkloadSpec] = {
    "stat-loop": WorkloadSpec("stat-loop", run_stat_loop, StatLoopConfig(entries=1000),
                              StatLoopConfig(entries=40)),
    "copy-loop": WorkloadSpec("copy-loop", run_copy_loop, CopyLoopConfig(),
                              CopyLoopConfig(block_size=4096, file_size=10 * 4096 + 1234)),
    "bptree": WorkloadSpec("bptree", run_bptree, BPTreeConfig(),
                           BPTreeConfig(records=600, degree=16, scans=3)),
    "lsm-get": WorkloadSpec("lsm-get", run_lsm, LSMConfig(),
                            LSMConfig(keys_per_table=96, memtable_size=8, gets=8)),
}


def workload_config(name: str, seed: int = 0, small: bool = False, **overrides) -> Any:
    try:
        spec = WORKLOADS[name]
    except KeyError:
        raise ValueError(f"unknown workload {name!r}; choose from {sorted(WORKLOADS)}") from None
    base = spec.small if small else spec.default
    return dataclasses.replace(base, seed=seed, **overrides)


def run_workload(name: str, depth: int, executor: str = "sim", seed: int = 0,
                 small: bool = False, device: Optional[DeviceModel] = None,
                 config: Any = None, **kwargs) -> WorkloadRun:
    """Run workload ``name`` on a fresh fixture derived from ``seed``."""
    if config is None:
        config = workload_config(name, seed, small)
    return WORKLOADS[name].runner(config, depth, executor, device, **kwargs)


__all__ = [
    "BPTreeConfig", "CopyLoopConfig", "EXECUTOR_KINDS", "Harness", "LSMConfig",
    "StatLoopConfig", "WORKLOADS", "WorkloadRun", "WorkloadSpec", "execute_workload",
    "open_executor", "run_workload", "workload_config",
]

"""Synchronous reference runs and speculative-vs-reference checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

from .engine import purity_violations
from .trace import RunArtifacts, SynchronyVerdict, check_equivalence
from .workloads import WorkloadRun, run_workload, workload_config


def run_sync_oracle(name: str, config: Any = None, seed: int = 0, small: bool = False,
                    **kwargs) -> RunArtifacts:
    """Depth-0 run on the simulated device: the canonical reference artifacts."""
    if config is None:
        config = workload_config(name, seed, small)
    return run_workload(name, 0, "sim", config=config, **kwargs).artifacts


@dataclass
class CheckedRun:
    run: WorkloadRun
    verdict: SynchronyVerdict
    purity_violations: int

    @property
    def ok(self) -> bool:
        return bool(self.verdict) and self.purity_violations == 0


def checked_run(name: str, depth: int, executor: str = "sim", seed: int = 0,
                small: bool = False, config: Any = None,
                reference: Optional[RunArtifacts] = None, **kwargs) -> CheckedRun:
    """Run one configuration and compare it with the depth-0 reference."""
    if config is None:
        config = workload_config(name, seed, small)
    if reference is None:
        reference = run_sync_oracle(name, config)
    run = run_workload(name, depth, executor, config=config, **kwargs)
    violations = sum(len(purity_violations(s)) for s in run.sessions)
    return CheckedRun(run, check_equivalence(reference, run.artifacts), violations)

"""Virtual-clock storage device with a flat pool of parallel channels."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Union

from .catalog import SyscallRequest, SyscallType, as_type

# base latency in virtual microseconds; a 4KB pread costs 36 + 4096/64 = 100
DEFAULT_LATENCY = {
    SyscallType.OPEN_AT: 50.0,
    SyscallType.CLOSE: 10.0,
    SyscallType.PREAD: 36.0,
    SyscallType.PWRITE: 36.0,
    SyscallType.FSTAT_AT: 100.0,
    SyscallType.GETDENTS: 36.0,
    SyscallType.TELL: 1.0,
    SyscallType.SEEK: 1.0,
}

# types whose cost scales with the transferred length
_DATA_OPS = frozenset({SyscallType.PREAD, SyscallType.PWRITE})


class DeviceConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceModel:
    channels: int = 16
    bandwidth: float = 64.0  # bytes per virtual microsecond, per channel
    latency: Mapping[SyscallType, float] = field(default_factory=lambda: dict(DEFAULT_LATENCY))

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise DeviceConfigError("channels must be positive")
        if self.bandwidth <= 0:
            raise DeviceConfigError("bandwidth must be positive")
        for t, v in self.latency.items():
            if v <= 0:
                raise DeviceConfigError(f"latency for {t} must be positive")

    def service_time(self, syscall_type: Union[SyscallType, str], length: int = 0) -> float:
        t = as_type(syscall_type)
        base = self.latency.get(t, DEFAULT_LATENCY[t])
        if t in _DATA_OPS:
            return base + length / self.bandwidth
        return base

    def request_time(self, request: SyscallRequest) -> float:
        return self.service_time(request.type, request.length)

    def with_channels(self, channels: int) -> "DeviceModel":
        return replace(self, channels=channels)

    @classmethod
    def from_text(cls, text: str) -> "DeviceModel":
        """Parse ``key = value`` lines: channels, bandwidth, latency.<op>."""
        kwargs: dict[str, Any] = {}
        latency = dict(DEFAULT_LATENCY)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DeviceConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "channels":
                    kwargs["channels"] = int(value)
                elif key == "bandwidth":
                    kwargs["bandwidth"] = float(value)
                elif key.startswith("latency."):
                    latency[as_type(key[len("latency."):])] = float(value)
                else:
                    raise DeviceConfigError(f"line {lineno}: unknown key {key!r}")
            except ValueError as exc:
                if isinstance(exc, DeviceConfigError):
                    raise
                raise DeviceConfigError(f"line {lineno}: {exc}") from None
        return cls(latency=latency, **kwargs)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DeviceModel":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = [f"channels = {self.channels}", f"bandwidth = {self.bandwidth:g}"]
        lines += [f"latency.{t.value} = {v:g}" for t, v in self.latency.items()]
        return "\n".join(lines) + "\n"


class ChannelSchedule:
    """Greedy placement of submitted ops on the earliest free channel."""

    def __init__(self, channels: int) -> None:
        self._free = [(0.0, ch) for ch in range(channels)]
        heapq.heapify(self._free)

    def schedule(self, service_time: float, submit_time: float) -> float:
        free_at, ch = heapq.heappop(self._free)
        done = max(submit_time, free_at) + service_time
        heapq.heappush(self._free, (done, ch))
        return done


def makespan_law(n: int, channels: int, service_time: float) -> float:
    return -(-n // channels) * service_time


class VirtualClock:
    """Monotone virtual time plus an ordered event queue.

    Events with equal timestamps fire in (priority, key) order, which keeps
    runs bit-for-bit reproducible.
    """

    def __init__(self) -> None:
        self.now = 0.0
        self._events: list = []
        self._tie = itertools.count()

    def push(self, time: float, priority: int, key: int, action: Callable[[], None]) -> None:
        if time < self.now:
            raise ValueError("event scheduled in the past")
        heapq.heappush(self._events, (time, priority, key, next(self._tie), action))

    def pending(self) -> int:
        return len(self._events)

    def next_time(self) -> Optional[float]:
        return self._events[0][0] if self._events else None

    def step(self) -> bool:
        if not self._events:
            return False
        time, _, _, _, action = heapq.heappop(self._events)
        self.now = time
        action()
        return True

    def run_until(self, done: Callable[[], bool]) -> None:
        while not done():
            if not self.step():
                raise RuntimeError("event queue drained before condition held")

    def run_due(self) -> None:
        """Fire every event scheduled at or before the current time."""
        while self._events and self._events[0][0] <= self.now:
            self.step()

    def advance(self, delta: float) -> None:
        target = self.now + delta
        while self._events and self._events[0][0] <= target:
            self.step()
        self.now = target

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preissue.catalog import SyscallType, fstat_at, open_at, pread
from preissue.device import (
    ChannelSchedule,
    DeviceConfigError,
    DeviceModel,
    VirtualClock,
    makespan_law,
)
from preissue.executor import SimExecutor
from preissue.fs import FileImage, VirtualFileStore


def test_default_service_times():
    dev = DeviceModel()
    assert dev.channels == 16
    assert dev.service_time(SyscallType.PREAD, 4096) == 100.0
    assert dev.service_time(SyscallType.FSTAT_AT) == 100.0
    assert dev.service_time("pwrite", 128 * 1024) == 36 + 2048


def test_config_roundtrip(tmp_path):
    dev = DeviceModel(channels=4, bandwidth=32.0).with_channels(8)
    path = tmp_path / "dev.conf"
    path.write_text("# comment\n" + dev.to_text())
    assert DeviceModel.load(path) == dev


@pytest.mark.parametrize("text", ["channels = 0", "bandwidth = -1", "latency.pread = 0",
                                  "colour = blue", "channels", "latency.mmap = 3",
                                  "channels = many"])
def test_bad_config(text):
    with pytest.raises(DeviceConfigError):
        DeviceModel.from_text(text)


def test_clock_orders_ties_by_priority_then_key():
    clock, fired = VirtualClock(), []
    clock.push(5, 1, 0, lambda: fired.append("b"))
    clock.push(5, 0, 9, lambda: fired.append("a"))
    clock.push(1, 0, 0, lambda: fired.append("first"))
    clock.run_until(lambda: len(fired) == 3)
    assert fired == ["first", "a", "b"] and clock.now == 5
    with pytest.raises(ValueError):
        clock.push(1, 0, 0, lambda: None)


def test_clock_advance_fires_due_events():
    clock, fired = VirtualClock(), []
    clock.push(3, 0, 0, lambda: fired.append(3))
    clock.push(30, 0, 0, lambda: fired.append(30))
    clock.advance(10)
    assert fired == [3] and clock.now == 10 and clock.next_time() == 30


def _sim_makespan(n: int, channels: int, service: float) -> float:
    image = FileImage()
    for i in range(n):
        image.add_file(f"f{i}", b"")
    dev = DeviceModel(channels=channels,
                      latency={SyscallType.FSTAT_AT: service})
    ex = SimExecutor(VirtualFileStore.from_image(image), dev)
    ids = [ex.prepare(fstat_at(f"f{i}")) for i in range(n)]
    ex.submit_all_prepared()
    ex.drain()
    return max(ex.times(i)[1] for i in ids)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 80), channels=st.integers(1, 20), service=st.integers(1, 500))
def test_simulated_batch_obeys_makespan_law(n, channels, service):
    assert _sim_makespan(n, channels, service) == makespan_law(n, channels, service)


@settings(max_examples=60, deadline=None)
@given(lengths=st.lists(st.integers(0, 65536), min_size=1, max_size=40),
       channels=st.integers(1, 8))
def test_schedule_matches_simulator(lengths, channels):
    """Greedy earliest-free placement predicts every completion time."""
    dev = DeviceModel(channels=channels)
    image = FileImage()
    image.add_file("f", bytes(70000))
    store = VirtualFileStore.from_image(image)
    ex = SimExecutor(store, dev)
    fd = ex.run_sync(open_at("f")).return_code
    t0 = ex.now()
    ids = [ex.prepare(pread(fd, 0, n)) for n in lengths]
    ex.submit_all_prepared()
    ex.drain()
    sched = ChannelSchedule(channels)
    expected = [sched.schedule(dev.service_time(SyscallType.PREAD, n), 0) for n in lengths]
    assert [ex.times(i)[1] - t0 for i in ids] == pytest.approx(expected)

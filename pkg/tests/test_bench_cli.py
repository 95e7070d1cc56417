from __future__ import annotations

import io
import subprocess
import sys

import pytest

from preissue import cli
from preissue.bench import (DEPTH_ENV, FIELDS, BenchSpec, depths_from_env, parse_depths,
                            read_csv, run_bench, write_csv)
from preissue.workloads import copyloop

HEADER = "workload,depth,executor,rep,makespan,prepared,harvested,cancelled,sync_issued,synchrony_ok"


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_csv_header_is_exact(capsys):
    code, out, _ = run_cli(capsys, "--workload", "stat-loop", "--small", "--depths", "0,4")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == HEADER == ",".join(FIELDS)
    rows = read_csv(out)
    assert [r["depth"] for r in rows] == ["0", "4"]
    assert all(r["synchrony_ok"] == "true" for r in rows)
    assert float(rows[1]["makespan"]) < float(rows[0]["makespan"])


def test_reps_are_deterministic_on_sim():
    res = run_bench(BenchSpec("copy-loop", (0, 4), reps=3, small=True))
    for depth in (0, 4):
        rows = [r.as_csv()[4:] for r in res.rows if r.depth == depth]
        assert len(rows) == 3 and rows[0] == rows[1] == rows[2]


def test_depth_environment_override(capsys, monkeypatch):
    monkeypatch.setenv(DEPTH_ENV, "2,8")
    code, out, _ = run_cli(capsys, "--workload", "stat-loop", "--small", "--depths", "0,1")
    assert code == 0 and [r["depth"] for r in read_csv(out)] == ["2", "8"]
    assert depths_from_env((0,), {DEPTH_ENV: " "}) == (0,)


@pytest.mark.parametrize("argv", [
    ["--workload", "stat-loop", "--reps", "0"],
    ["--workload", "stat-loop", "--clients", "0"],
    ["--workload", "stat-loop", "--device-config", "/nonexistent/device.cfg"],
])
def test_config_errors_exit_2(capsys, argv):
    code, _, err = run_cli(capsys, *argv)
    assert code == 2 and "error" in err


def test_bad_arguments_exit_2(capsys):
    for argv in (["--workload", "nope"], ["--workload", "stat-loop", "--depths", "1,-2"],
                 ["--depths", "1"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 2


def test_bad_device_config_file(tmp_path, capsys):
    cfg = tmp_path / "dev.cfg"
    cfg.write_text("channels = zero\n")
    code, _, _ = run_cli(capsys, "--workload", "stat-loop", "--device-config", str(cfg))
    assert code == 2


def test_device_config_changes_makespan(tmp_path, capsys):
    cfg = tmp_path / "dev.cfg"
    cfg.write_text("channels = 1\n")
    code, out, _ = run_cli(capsys, "--workload", "stat-loop", "--small", "--depths", "0,8",
                           "--device-config", str(cfg))
    rows = read_csv(out)
    assert code == 0 and rows[0]["makespan"] == rows[1]["makespan"]


_original_build_graph = copyloop.build_graph


def copyloop_unlinked():
    return _original_build_graph(link=False)


def test_synchrony_failure_exits_1(capsys, monkeypatch):
    monkeypatch.setattr(copyloop, "build_graph", lambda link=True: copyloop_unlinked())
    code, out, err = run_cli(capsys, "--workload", "copy-loop", "--small", "--depths", "0,8")
    assert code == 1 and "synchrony check failed" in err
    assert [r["synchrony_ok"] for r in read_csv(out)] == ["true", "false"]


def test_out_file_and_figure(tmp_path, capsys):
    out = tmp_path / "sub" / "bench.csv"
    fig = tmp_path / "makespan.png"
    code, stdout, _ = run_cli(capsys, "--workload", "stat-loop", "--workload", "copy-loop",
                              "--small", "--depths", "0,1,4", "--out", str(out),
                              "--figure", str(fig))
    assert code == 0 and stdout == ""
    rows = read_csv(out.read_text())
    assert {r["workload"] for r in rows} == {"stat-loop", "copy-loop"} and len(rows) == 6
    assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_multiple_clients_sum_counters():
    one = run_bench(BenchSpec("stat-loop", (4,), small=True))
    three = run_bench(BenchSpec("stat-loop", (4,), small=True, clients=3))
    assert three.ok
    assert three.rows[0].harvested == 3 * one.rows[0].harvested
    assert three.rows[0].makespan == pytest.approx(one.rows[0].makespan)


def test_worker_pool_bench_is_ok():
    assert run_bench(BenchSpec("lsm-get", (0, 4), executor="worker-pool", small=True)).ok


def test_parse_depths():
    assert parse_depths("0, 1,16") == (0, 1, 16)
    for bad in ("", "a", "-1"):
        with pytest.raises(ValueError):
            parse_depths(bad)


def test_write_csv_round_trip():
    res = run_bench(BenchSpec("stat-loop", (0,), small=True))
    buf = io.StringIO()
    write_csv(res.rows, buf)
    assert read_csv(buf.getvalue())[0]["workload"] == "stat-loop"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "preissue", "--workload", "stat-loop", "--small",
                           "--depths", "0"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and proc.stdout.startswith(HEADER)

import csv
import io
import json
import subprocess
import sys

import pytest

from tinyptr.cli import eval_fraction, main
from tinyptr.experiments import SCHEMA_VERSION, ExperimentConfig, run
from tinyptr.workloads import generate, write_workload


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_fraction_parsing():
    assert eval_fraction("1/8") == 0.125
    assert eval_fraction("0.25") == 0.25


def test_bench_fixed_report(capsys):
    code, out, _ = run_cli(capsys, "bench-fixed", "--n", "65536", "--delta", "0.125", "--ops", "1000000",
                           "--seed", "7")
    rep = json.loads(out)
    assert code == 0
    assert set(rep) == {"schema_version", "config", "stats", "metrics"}
    assert rep["schema_version"] == SCHEMA_VERSION
    assert rep["stats"]["failures"] == 0
    assert list(rep["stats"]["pointer_bit_histogram"]) == [str(rep["stats"]["p_max"])]
    assert all(m["pass"] for m in rep["metrics"])
    assert set(rep["metrics"][0]) == {"name", "value", "threshold", "cmp", "pass"}


@pytest.mark.parametrize("argv", [
    ["bench-fixed", "--n", "4096", "--ops", "20000", "--trials", "3", "--seed", "5"],
    ["bench-variable", "--n", "4096", "--delta", "1/4", "--ops", "20000", "--trials", "2"],
    ["ballsbins", "--rule", "single", "--n", "1024", "--h", "4", "--ops", "5000", "--trials", "3",
     "--output", "csv"],
    ["probe", "--n", "4096", "--deltas", "1/2,1/8", "--ops", "5000"],
])
def test_same_command_same_bytes(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    main(argv + ["--out", str(a)])
    main(argv + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes() and a.stat().st_size > 0


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    argv = ["bench-fixed", "--n", "4096", "--ops", "20000", "--trials", "4"]
    main(argv + ["--out", str(tmp_path / "one")])
    monkeypatch.setenv("TINYPTR_THREADS", "4")
    main(argv + ["--out", str(tmp_path / "four")])
    assert (tmp_path / "one").read_bytes() == (tmp_path / "four").read_bytes()


def test_ballsbins_csv_rows(capsys):
    code, out, _ = run_cli(capsys, "ballsbins", "--rule", "iceberg", "--n", "65536", "--h", "2", "--d", "3",
                           "--trials", "100", "--ops", "2000", "--output", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 100
    assert list(rows[0]) == ["trial", "rule", "n", "h", "d", "tau", "max_load", "exposed", "q_max", "level3"]
    assert [int(r["trial"]) for r in rows] == list(range(100))
    assert code == 0


def test_csv_metrics_for_commands_without_rows(capsys):
    code, out, _ = run_cli(capsys, "retrieval", "--n", "1024", "--ops", "5000", "--output", "csv")
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["name", "value", "threshold", "cmp", "pass"]
    assert {r[0] for r in rows[1:]} == {"wrong_answers", "slots_out_of_range", "mean_retriever_bits"}
    assert code == 0


def test_failed_threshold_exits_one(tmp_path, capsys):
    # a trace holding 100 keys at once cannot fit 64 slots, so allocations fail
    path = tmp_path / "over.txt"
    path.write_text("".join(f"A {k}\n" for k in range(100)))
    code, out, _ = run_cli(capsys, "bench-fixed", "--n", "64", "--workload", f"file:{path}")
    rep = json.loads(out)
    assert code == 1
    failed = [m["name"] for m in rep["metrics"] if not m["pass"]]
    assert "zero_failure_trial_rate" in failed


@pytest.mark.parametrize("argv", [
    ["bench-fixed", "--delta", "1.5"],
    ["bench-fixed", "--n", "0"],
    ["bench-fixed", "--workload", "bogus"],
    ["bench-fixed", "--workload", "file:/nonexistent/trace.txt"],
    ["probe", "--workload", "file:/tmp/x"],
])
def test_bad_config_exits_two(capsys, argv):
    code, out, err = run_cli(capsys, *argv)
    assert code == 2 and out == ""
    record = json.loads(err)
    assert set(record) == {"error", "message"}


def test_argparse_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_file_workload(tmp_path, capsys):
    path = tmp_path / "trace.txt"
    write_workload(generate("fifo", 3, 3000, 10_000), str(path))
    code, out, _ = run_cli(capsys, "bench-fixed", "--n", "4096", "--workload", f"file:{path}", "--check")
    rep = json.loads(out)
    assert code == 0
    assert rep["stats"]["allocations"] == 3000 + 5000
    assert rep["stats"]["violations"] == 0


def test_out_file(tmp_path, capsys):
    path = tmp_path / "r.json"
    code, out, _ = run_cli(capsys, "stable-dict", "--n", "2048", "--v", "8", "--ops", "20000",
                           "--out", str(path))
    assert code == 0 and out == ""
    rep = json.loads(path.read_text())
    assert rep["stats"]["violations"] == 0 and rep["config"]["v"] == 8


def test_config_fully_determines_run():
    kw = dict(n=1024, h=4, ops=5000, trials=20, rule="single")
    cfg = ExperimentConfig("ballsbins", seed=3, **kw)
    assert run(cfg).to_dict() == run(cfg).to_dict()
    other = run(ExperimentConfig("ballsbins", seed=4, **kw))
    assert other.rows != run(cfg).rows


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tinyptr.cli", "bench-fixed", "--n", "1024", "--ops", "1000"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["config"]["n"] == 1024

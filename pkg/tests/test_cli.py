import csv

import pytest

from uav_scc.cli import TRACE_COLUMNS, RunManifest, main, read_summary
from uav_scc.errors import InvalidParameterError


def run(tmp_path, name, *args):
    out = tmp_path / name
    rc = main(["--out", str(out), *args])
    return rc, out


def test_custom_run_writes_trace_and_summary(tmp_path):
    rc, out = run(tmp_path, "a", "--slots", "25")
    assert rc == 0
    s = read_summary(out / "summary.txt")
    assert s["experiment"] == "custom" and s["scheme"] == "proposed"
    assert int(s["trace_schema_version"]) == 1
    assert int(s["self_check_violations"]) == 0
    with open(out / "trace_proposed.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert all(len(r) == len(TRACE_COLUMNS) for r in rows)
    assert len(rows) == 1 + 25 * (8 + 15)
    uav_row = next(r for r in rows[1:] if r[1] == "uav")
    ue_row = next(r for r in rows[1:] if r[1] == "ue")
    assert uav_row[11] in ("CL", "OL") and uav_row[14] == ""
    assert ue_row[3] == "" and float(ue_row[17]) > 0


def test_same_manifest_is_byte_identical(tmp_path):
    _, a = run(tmp_path, "a", "--slots", "40", "--seed", "7")
    _, b = run(tmp_path, "b", "--slots", "40", "--seed", "7")
    assert (a / "trace_proposed.csv").read_bytes() == (b / "trace_proposed.csv").read_bytes()
    _, c = run(tmp_path, "c", "--slots", "40", "--seed", "8")
    assert (a / "trace_proposed.csv").read_bytes() != (c / "trace_proposed.csv").read_bytes()


def test_scheme_override_and_replica_traces(tmp_path):
    rc, out = run(tmp_path, "a", "--slots", "10", "--scheme", "periodic", "--replicas", "2")
    assert rc == 0
    assert (out / "trace_periodic_r000.csv").exists() and (out / "trace_periodic_r001.csv").exists()


def test_comparison_summary_has_reductions(tmp_path):
    rc, out = run(tmp_path, "a", "--experiment", "vs-continuous", "--slots", "60", "--no-trace")
    assert rc == 0
    s = read_summary(out / "summary.txt")
    assert 0 < float(s["scheduling_reduction_pct"]) < 100
    assert "symbol_reduction_pct" in s
    assert not list(out.glob("trace_*.csv"))


def test_blocking_and_lowrate_experiments(tmp_path):
    rc, out = run(tmp_path, "b", "--experiment", "vs-periodic-blocking", "--replicas", "2")
    assert rc == 0
    s = read_summary(out / "summary.txt")
    assert "ue0_periodic_failure_rate" in s and int(s["slots"]) == 120
    rc, out = run(tmp_path, "l", "--experiment", "vs-periodic-lowrate", "--slots", "50")
    assert rc == 0 and "failure_reduction_pct" in read_summary(out / "summary.txt")


def test_validity_experiment(tmp_path):
    rc, out = run(tmp_path, "v", "--experiment", "validity", "--replicas", "2", "--slots", "70")
    assert rc == 0
    s = read_summary(out / "summary.txt")
    assert 0.0 <= float(s["none_cross_fraction"]) <= 1.0


def test_sweep_rows(tmp_path):
    rc, out = run(tmp_path, "s", "--experiment", "sweep-mse", "--slots", "20")
    assert rc == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["mse_req"]) for r in rows] == [k * k for k in range(2, 13)]
    rc, out = run(tmp_path, "t", "--experiment", "sweep-lambda-preq", "--slots", "5")
    assert rc == 0
    with open(out / "sweep.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 36


def test_bad_config_exits_nonzero_without_outputs(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("scheduler:\n  lambda: 1.5\n")
    rc, out = run(tmp_path, "x", "--config", str(cfg))
    assert rc != 0
    assert "bad.yaml:2" in capsys.readouterr().err
    assert not out.exists()


def test_failed_run_removes_partial_files(tmp_path, monkeypatch):
    out = tmp_path / "keep"
    out.mkdir()
    (out / "mine.txt").write_text("untouched")
    import uav_scc.cli as cli

    def boom(*a, **k):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(cli, "write_summary", boom)
    rc = main(["--out", str(out), "--slots", "5"])
    assert rc == 1
    assert sorted(p.name for p in out.iterdir()) == ["mine.txt"]


def test_manifest_validation(tmp_path):
    with pytest.raises(InvalidParameterError):
        RunManifest(config=None, experiment="nope", out=tmp_path)
    with pytest.raises(InvalidParameterError):
        RunManifest(config=None, experiment="custom", out=tmp_path, replicas=0)
    assert main(["--out", str(tmp_path / "z"), "--replicas", "0"]) == 2

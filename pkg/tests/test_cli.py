import json

from fprsim.cli import main
from fprsim.metrics import CSV_COLUMNS, SCHEMA_VERSION


def write_config(tmp_path, **overrides):
    config = {
        "scenario": "case1",
        "params": {"n": 1, "loops": 200},
        "seed": 3,
        "out_dir": str(tmp_path / "out"),
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


def read_rows(path):
    lines = path.read_text().strip().split("\n")
    return lines[0].split(","), [dict(zip(lines[0].split(","), l.split(",")))
                                 for l in lines[1:]]


def test_run_writes_csv_and_json(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config)]) == 0
    header, rows = read_rows(tmp_path / "out" / "run.csv")
    assert header == list(CSV_COLUMNS)
    assert len(rows) == 1
    assert rows[0]["schema"] == SCHEMA_VERSION
    assert rows[0]["scenario"] == "case1"
    assert rows[0]["shootdowns_sent"] == "0"      # fpr defaults on
    summary = json.loads((tmp_path / "out" / "run.json").read_text())
    assert summary[0]["record"]["io_ops"] == "200" or summary[0]["record"]["io_ops"] == 200


def test_flags_override_config(tmp_path):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config), "--fpr", "off"]) == 0
    _, rows = read_rows(tmp_path / "out" / "run.csv")
    assert rows[0]["fpr"] == "off"
    assert rows[0]["shootdowns_sent"] == "200"    # one per munmap


def test_same_config_twice_identical_rows(tmp_path):
    config = write_config(tmp_path)
    main(["run", "--config", str(config)])
    first = (tmp_path / "out" / "run.csv").read_text()
    main(["run", "--config", str(config)])
    assert (tmp_path / "out" / "run.csv").read_text() == first


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"scenario": "case1", "bogus": 1}))
    assert main(["run", "--config", str(path)]) == 2


def test_negative_param_rejected(tmp_path):
    config = write_config(tmp_path, scenario="eviction",
                          params={"threads": 2, "cf": -1})
    assert main(["run", "--config", str(config)]) == 2


def test_unknown_scenario_rejected(tmp_path):
    config = write_config(tmp_path, scenario="nope")
    assert main(["run", "--config", str(config)]) == 2


def test_trace_output(tmp_path):
    config = write_config(tmp_path, trace=True, params={"n": 1, "loops": 5})
    assert main(["run", "--config", str(config)]) == 0
    trace = (tmp_path / "out" / "run.trace").read_text().strip().split("\n")
    assert len(trace) == 10          # one mmap + one munmap line per loop
    tick, core, kind = trace[0].split(" ")[:3]
    assert tick.isdigit() and core.isdigit() and kind == "mmap"


def test_sweep_grid_rows_in_stable_order(tmp_path):
    config = write_config(
        tmp_path, scenario="case2",
        params={"n": 1, "loops": None}, limit_ticks=200_000,
        grid={"params.n": [1, 2], "fpr.enabled": [False, True]})
    assert main(["sweep", "--config", str(config)]) == 0
    _, rows = read_rows(tmp_path / "out" / "sweep.csv")
    assert [(r["compute_threads"], r["fpr"]) for r in rows] == [
        ("1", "off"), ("1", "on"), ("2", "off"), ("2", "on")]


def test_sweep_empty_grid_writes_header_only(tmp_path):
    config = write_config(tmp_path)
    assert main(["sweep", "--config", str(config)]) == 0
    content = (tmp_path / "out" / "sweep.csv").read_text()
    assert content == ",".join(CSV_COLUMNS) + "\n"


def test_sweep_continues_past_failing_rows(tmp_path):
    config = write_config(
        tmp_path, scenario="case1", limit_ticks=100_000,
        params={"loops": 20},
        grid={"params.n": [1, 0, 2]})       # n=0 is invalid
    assert main(["sweep", "--config", str(config)]) == 4
    _, rows = read_rows(tmp_path / "out" / "sweep.csv")
    assert len(rows) == 2


def test_repeat_changes_seed_per_row(tmp_path):
    config = write_config(tmp_path, repeat=3, params={"n": 1, "loops": 20})
    assert main(["run", "--config", str(config)]) == 0
    _, rows = read_rows(tmp_path / "out" / "run.csv")
    assert [r["seed"] for r in rows] == ["3", "4", "5"]


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("case1", "case2", "eviction", "ideal_compute", "random"):
        assert name in out


def test_check_quick(capsys):
    assert main(["check", "--quick"]) == 0
    out = capsys.readouterr().out
    assert "PASS aba-explorer-va-iteration-off" in out
    assert "PASS security-intact" in out
    assert "PASS mutation-suppress-context-exit" in out
    assert "FAIL" not in out


def test_check_reports_failures_with_nonzero_exit(monkeypatch, capsys):
    from fprsim import checks

    monkeypatch.setattr(checks, "run_all",
                        lambda seed=1, quick=False: [("broken-property", False,
                                                      "counterexample: x")])
    assert main(["check"]) == 3
    assert "FAIL broken-property" in capsys.readouterr().out


def test_env_var_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FPRSIM_OUT", str(tmp_path / "envout"))
    config = write_config(tmp_path, out_dir=None, params={"n": 1, "loops": 5})
    assert main(["run", "--config", str(config)]) == 0
    assert (tmp_path / "envout" / "run.csv").exists()

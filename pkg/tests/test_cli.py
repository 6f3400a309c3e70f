import json
import re
import subprocess
import sys

import pytest

from swipt_tfs.cli import main

ERROR_LINE = re.compile(r'^error: kind=(\w+) message=(".*")$')


@pytest.fixture
def inst_path(tmp_path):
    path = tmp_path / "inst.json"
    assert main(["gen-channel", "-K", "2", "-N", "2", "--seed", "3", "--min-rate", "1e6",
                 "--min-energy", "1e-6", "-o", str(path)]) == 0
    return path


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    match = ERROR_LINE.match(err[0])
    assert match, err[0]
    return match.group(1), json.loads(match.group(2))


def test_gen_channel_is_deterministic(tmp_path, inst_path):
    again = tmp_path / "again.json"
    main(["gen-channel", "-K", "2", "-N", "2", "--seed", "3", "--min-rate", "1e6", "--min-energy", "1e-6",
          "-o", str(again)])
    assert inst_path.read_bytes() == again.read_bytes()
    data = json.loads(inst_path.read_text())
    assert data["num_users"] == 2 and len(data["channel_gain"]) == 2


@pytest.mark.parametrize("strategy", ["tfs", "ts", "ss-greedy"])
def test_solve_output_is_byte_stable(tmp_path, inst_path, strategy):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["solve", str(inst_path), "--strategy", strategy, "-o", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    res = json.loads(a.read_text())
    assert res["strategy"] == strategy and len(res["rates_bps"]) == 2
    if strategy == "ss-greedy":
        # one power subcarrier leaves a single data subcarrier for two rate targets
        assert res["status"] == "infeasible" and res["message"]
        assert "greedy" in res["label"]
    else:
        assert res["status"] in ("converged", "max_iterations")


def test_solve_writes_trace(tmp_path, inst_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["solve", str(inst_path), "--trace", str(trace)]) == 0
    res = json.loads(capsys.readouterr().out)
    lines = trace.read_text().splitlines()
    assert lines[0].startswith("iteration,modified_objective_bps")
    assert len(lines) == 1 + res["iterations"]


def test_solve_with_config(tmp_path, inst_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"regularizer_weight": 1e-4, "max_iterations": 300}))
    assert main(["solve", str(inst_path), "--config", str(cfg)]) == 0
    cfg.write_text(json.dumps({"nonsense": 1}))
    capsys.readouterr()
    assert main(["solve", str(inst_path), "--config", str(cfg)]) == 2
    kind, msg = _error(capsys)
    assert kind == "ConfigError" and "nonsense" in msg


def test_missing_instance_is_an_input_error(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "nope.json")]) == 2
    kind, msg = _error(capsys)
    assert kind == "FileNotFoundError" and "nope.json" in msg


def test_malformed_instance(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "swipt-tfs-instance/1", "num_users": 2}))
    assert main(["solve", str(bad)]) == 2
    assert _error(capsys)[0] == "InstanceError"


def test_usage_error_line(capsys):
    assert main(["solve"]) == 2
    assert _error(capsys)[0] == "UsageError"
    assert main(["frobnicate"]) == 2
    assert _error(capsys)[0] == "UsageError"


def test_refused_instance_exit_code(tmp_path, capsys):
    path = tmp_path / "one.json"
    main(["gen-channel", "-K", "1", "-N", "2", "--min-energy", "1e-6", "-o", str(path)])
    assert main(["solve", str(path)]) == 3
    assert _error(capsys)[0] == "InfeasibleProblemError"


def test_verify_pass_and_fail(tmp_path, inst_path, capsys):
    assert main(["verify", str(inst_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "VERIFY PASS"
    assert any(line.startswith("CHECK oracle-grid PASS") for line in out)

    res = tmp_path / "res.json"
    main(["solve", str(inst_path), "-o", str(res)])
    data = json.loads(res.read_text())
    data["allocation"]["m"] = [[0.9, 0.9], [0.9, 0.9]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert main(["verify", str(inst_path), "--allocation", str(bad), "--json"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is False
    first = report["checks"][0]
    assert first["verdict"] == "FAIL" and "time[0]" in first["detail"]


def _spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"variable": "E", "values": [4e-6, 20e-6], "seeds": [0, 1],
                                "strategies": ["tfs", "ss-greedy"],
                                "base": {"num_users": 2, "num_subcarriers": 3}}))
    return spec


def test_sweep_bytes_and_plot(tmp_path):
    spec = _spec(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", str(spec), "-o", str(a), "--plot"]) == 0
    assert main(["sweep", str(spec), "-o", str(b), "--jobs", "2", "--plot"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a_summary.csv").read_bytes() == (tmp_path / "b_summary.csv").read_bytes()
    png_a, png_b = tmp_path / "a.png", tmp_path / "b.png"
    assert png_a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert png_a.read_bytes() == png_b.read_bytes()
    assert len(a.read_text().splitlines()) == 1 + 2 * 2 * 2


def test_sweep_rejects_bad_spec(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"variable": "P", "values": [1]}))
    assert main(["sweep", str(spec)]) == 2
    assert _error(capsys)[0] == "ValueError"


def test_convergence_and_fairness_with_plots(tmp_path, inst_path):
    conv = tmp_path / "conv.csv"
    assert main(["convergence", str(inst_path), "--x-values", "1e-2", "1e-3", "-o", str(conv), "--plot"]) == 0
    rows = conv.read_text().splitlines()
    assert rows[0].startswith("x,iteration")
    assert {r.split(",")[0] for r in rows[1:]} == {"0.01", "0.001"}
    assert conv.with_suffix(".png").exists()
    fair = tmp_path / "fair.csv"
    assert main(["fairness", str(inst_path), "-o", str(fair), "--plot"]) == 0
    assert len(fair.read_text().splitlines()) == 1 + 3 * 2
    assert fair.with_suffix(".png").exists()


def test_module_entry_point(inst_path):
    proc = subprocess.run([sys.executable, "-m", "swipt_tfs.cli", "solve", str(inst_path), "--strategy",
                           "ss-greedy"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["strategy"] == "ss-greedy"
    proc = subprocess.run([sys.executable, "-m", "swipt_tfs.cli", "verify", "/nonexistent.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert ERROR_LINE.match(proc.stderr.strip())

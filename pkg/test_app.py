import json

import pandas as pd
import pytest

from app import EXIT_CONFIG, EXIT_OK, build_parser, run
from command_eval_operator import parse_velocity
from kinetic_barrier.errors import ConfigError


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text("d = 2\ngamma = 0\ns = 0.5\nr_max = 4\nn_per_axis = 16\n")
    return path


def manifest(output_dir):
    (path,) = output_dir.glob("*-manifest.json")
    with open(path) as f:
        return json.load(f)


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    assert run([]) == EXIT_CONFIG
    assert run(["--help"]) == EXIT_OK


def test_compute_cs(tmp_path, small_config):
    out = tmp_path / "out"
    code = run(["--config", str(small_config), "--output-dir", str(out), "compute-cs", "--theta-min", "0.3"])
    assert code == EXIT_OK
    (table,) = [p for p in out.glob("compute-cs-*.csv")]
    row = pd.read_csv(table).iloc[0]
    assert row["c_s"] == pytest.approx(3.141592653589793 - 0.6, rel=1e-8)
    record = manifest(out)
    assert record["exit_code"] == EXIT_OK
    assert record["settings"]["gamma"] == "0"
    assert table.name in record["outputs"]


def test_missing_config_file(tmp_path):
    code = run(["--config", str(tmp_path / "absent.conf"), "--output-dir", str(tmp_path), "compute-cs"])
    assert code == EXIT_CONFIG
    assert not list(tmp_path.glob("*-manifest.json"))


def test_unknown_proposition(tmp_path, small_config):
    code = run(["--config", str(small_config), "--output-dir", str(tmp_path), "verify", "--prop", "bad-everything"])
    assert code == EXIT_CONFIG
    assert manifest(tmp_path)["exit_code"] == EXIT_CONFIG


def test_malformed_velocity(tmp_path, small_config):
    code = run(["--config", str(small_config), "--output-dir", str(tmp_path), "eval-operator", "--v", "1,x"])
    assert code == EXIT_CONFIG


def test_parse_velocity():
    assert parse_velocity("1.5,-2", 2).tolist() == [1.5, -2.0]
    with pytest.raises(ConfigError):
        parse_velocity("1,2,3", 2)


def test_invalid_environment(tmp_path, small_config, monkeypatch):
    monkeypatch.setenv("KINETIC_BARRIER_THREADS", "many")
    code = run(["--config", str(small_config), "--output-dir", str(tmp_path), "compute-cs"])
    assert code == EXIT_CONFIG


def config_with(small_config, extra):
    path = small_config.with_name("extended.conf")
    path.write_text(small_config.read_text() + extra)
    return path


def test_verify_a_numbered_proposition(tmp_path, small_config):
    config = config_with(small_config, "verify.radius_rule = linear\nverify.v_norms = 32,64,128\n")
    out = tmp_path / "out"
    code = run(["--config", str(config), "--output-dir", str(out), "verify", "--prop", "3.1"])
    assert code == EXIT_OK
    (table,) = out.glob("verify-*-good-large-q.csv")
    frame = pd.read_csv(table)
    assert len(frame) == 3
    assert (frame["verdict"] == "PASS").all()
    (summary,) = out.glob("verify-*-summary.json")
    with open(summary) as f:
        assert json.load(f)["good-large-q"]["verdict"] == "PASS"


def test_simulate_writes_the_trace(tmp_path, small_config):
    config = config_with(small_config, "solver.t_end = 0.002\n")
    out = tmp_path / "out"
    code = run(["--config", str(config), "--output-dir", str(out), "simulate"])
    assert code == EXIT_OK
    (trace,) = out.glob("simulate-*.csv")
    assert pd.read_csv(trace)["t"].iloc[-1] == pytest.approx(0.002)
    (summary,) = out.glob("simulate-*-summary.json")
    with open(summary) as f:
        assert json.load(f)["accepted"]
    assert manifest(out)["exit_code"] == EXIT_OK


def test_scan_without_contact(tmp_path, small_config):
    config = config_with(small_config, "solver.t_end = 0.002\nbarrier.n0 = 100\n")
    out = tmp_path / "out"
    code = run(["--config", str(config), "--output-dir", str(out), "scan", "--barrier", "plain"])
    assert code == EXIT_OK
    (table,) = out.glob("scan-*.csv")
    assert not pd.read_csv(table)["contact"].iloc[0]

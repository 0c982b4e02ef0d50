"""End-to-end tests of the ``ddsmpc`` subcommands."""

import csv
import json

import pytest

from ddsmpc.cli import build_parser
from ddsmpc.core import config
from ddsmpc.main import main

SMALL_TOML = """\
preset = "scalar-gaussian"

[ocp]
N = 5

[data]
T = 40
estimation_length = 200

[run]
steps = 3
monte_carlo_runs = 2
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_TOML)
    return path


def _run(argv, capsys):
    code = main([*argv, "--log-level", "ERROR"])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _error(err: str) -> dict:
    return json.loads(err.strip().splitlines()[-1])["error"]


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_short_record_exits_with_required_order(tmp_path, capsys):
    code, _, err = _run(
        ["collect", "--preset", "scalar-gaussian", "--T", "10", "--out-dir",
         str(tmp_path)],
        capsys,
    )
    assert code == 3
    error = _error(err)
    assert error["code"] == "persistency_of_excitation"
    assert error["details"]["required_order"] == 26


def test_unknown_preset(tmp_path, capsys):
    code, _, err = _run(
        ["collect", "--preset", "nope", "--out-dir", str(tmp_path)], capsys
    )
    assert code == 2
    assert "scalar-gaussian" in _error(err)["details"]["available"]


def test_print_preset(capsys):
    code, out, _ = _run(["solve-ocp", "--preset", "aircraft", "--print-preset"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["preset"] == "aircraft"
    assert payload["values"]["ocp"]["N"] == 10
    assert "data.input_box" in payload["notes"]


def test_collect_then_solve(small_config, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, _ = _run(
        ["collect", "--config", str(small_config), "--out-dir", str(out_dir)], capsys
    )
    assert code == 0
    data_path = json.loads(out)["data"]
    assert (out_dir / "data.json").is_file()

    code, out, _ = _run(
        [
            "solve-ocp",
            "--config",
            str(small_config),
            "--data",
            data_path,
            "--exact-noise",
            "--out-dir",
            str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["gap"]["mean"] <= 1e-5
    assert payload["gap"]["std"] <= 1e-5
    for name in ("solution.csv", "solution_summary.csv", "solution_model_based.csv"):
        assert (out_dir / name).is_file()


def test_solve_with_missing_data_file(small_config, tmp_path, capsys):
    code, _, err = _run(
        [
            "solve-ocp",
            "--config",
            str(small_config),
            "--data",
            str(tmp_path / "missing.json"),
            "--out-dir",
            str(tmp_path),
        ],
        capsys,
    )
    assert code == 2
    assert _error(err)["code"] == "not_found"


def test_mpc_writes_runs_and_comparison(small_config, tmp_path, capsys):
    code, out, _ = _run(
        ["mpc", "--config", str(small_config), "--compare", "--out-dir",
         str(tmp_path)],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["runs"] == 2
    assert payload["aborted"] == 0
    for name in (
        "closed_loop_000.csv",
        "closed_loop_001.csv",
        "closed_loop_performance.csv",
        "closed_loop_exact_000.csv",
        "cost_comparison.csv",
    ):
        assert (tmp_path / name).is_file()
    with (tmp_path / "closed_loop_000.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    # Header, steps + 1 states.
    assert len(rows) == 1 + 3 + 1


def test_mpc_is_reproducible(small_config, tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = _run(
            ["mpc", "--config", str(small_config), "--runs", "1", "--seed", "11",
             "--out-dir", str(tmp_path / name)],
            capsys,
        )
        assert code == 0
    a = (tmp_path / "a" / "closed_loop_000.csv").read_bytes()
    b = (tmp_path / "b" / "closed_loop_000.csv").read_bytes()
    assert a == b


def test_verify_writes_report(small_config, tmp_path, capsys):
    code, out, _ = _run(
        ["verify", "--config", str(small_config), "--out-dir", str(tmp_path)], capsys
    )
    payload = json.loads(out)
    assert payload["failed"] == []
    assert code == 0
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["passed"] is True
    assert report["scenario"] == "scalar-gaussian"


def test_out_dir_from_environment(small_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DDSMPC_OUT_DIR", str(tmp_path / "env"))
    monkeypatch.setattr(config, "_settings", None)
    code, _, _ = _run(["collect", "--config", str(small_config)], capsys)
    assert code == 0
    assert (tmp_path / "env" / "data.json").is_file()

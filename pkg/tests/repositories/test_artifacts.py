import csv
import json

import numpy as np
import pytest

from ddsmpc.core.errors import NotFoundError, ValidationError
from ddsmpc.integrations.conic_solver import ConicSolver
from ddsmpc.repositories.artifacts import DATA_FORMAT, FileArtifactRepository
from ddsmpc.services import experiments
from ddsmpc.services.lti_sim import DataRecord
from ddsmpc.services.mpc_loop import ClosedLoopRecord, Histogram


@pytest.fixture
def repo(tmp_path):
    return FileArtifactRepository(tmp_path / "out")


def _read_csv(path):
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_data_record_round_trip(repo, small_scalar_data):
    path = repo.save_data_record(small_scalar_data)
    assert path.name == "data.json"
    assert json.loads(path.read_text())["format"] == DATA_FORMAT
    loaded = repo.load_data_record(path)
    np.testing.assert_array_equal(loaded.x, small_scalar_data.x)
    np.testing.assert_array_equal(loaded.u, small_scalar_data.u)
    np.testing.assert_array_equal(loaded.w_hat, small_scalar_data.w_hat)
    np.testing.assert_array_equal(loaded.w_true, small_scalar_data.w_true)


def test_data_record_without_true_noise(repo):
    record = DataRecord(np.zeros((4, 1)), np.ones((3, 1)), np.zeros((3, 1)))
    loaded = repo.load_data_record(repo.save_data_record(record, "clean.json"))
    assert loaded.w_true is None


def test_missing_data_file(repo, tmp_path):
    with pytest.raises(NotFoundError):
        repo.load_data_record(tmp_path / "nope.json")


def test_bad_data_files(repo, tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ValidationError):
        repo.load_data_record(broken)
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"format": "something-else/9"}))
    with pytest.raises(ValidationError) as exc_info:
        repo.load_data_record(other)
    assert exc_info.value.details["format"] == "something-else/9"


def test_json_output_is_deterministic(repo):
    a = repo.write_json({"b": 1, "a": [1.5, 2]}, "a.json").read_bytes()
    b = repo.write_json({"a": [1.5, 2], "b": 1}, "b.json").read_bytes()
    assert a == b


def test_closed_loop_csv(repo):
    record = ClosedLoopRecord(
        x=np.array([[1.0], [0.5], [0.25]]),
        u=np.array([[-0.5], [-0.25]]),
        w=np.array([[0.1], [-0.1]]),
        stage_cost=np.array([1.25, 0.3125]),
        predicted_x_mean=np.zeros((2, 1)),
    )
    rows = _read_csv(repo.write_closed_loop(record, "closed_loop_000.csv"))
    assert rows[0] == ["step", "x0", "u0", "w0", "stage_cost"]
    assert rows[1] == ["0", "1", "-0.5", "0.10000000000000001", "1.25"]
    assert rows[3] == ["2", "0.25", "", "", ""]


def test_histogram_csv(repo):
    h = Histogram(10, np.array([0.0, 0.5, 1.0]), np.array([1.5, 0.5]))
    rows = _read_csv(repo.write_histograms([h], component=3))
    assert rows[0] == ["step", "component", "bin", "left_edge", "right_edge", "density"]
    assert rows[1:] == [
        ["10", "3", "0", "0", "0.5", "1.5"],
        ["10", "3", "1", "0.5", "1", "0.5"],
    ]


def test_solution_csv(repo, small_scalar_cfg):
    solution = experiments.solve_model_based(small_scalar_cfg, ConicSolver())
    coeffs, summary = repo.write_solution(solution)
    assert coeffs.name == "solution.csv"
    assert summary.name == "solution_summary.csv"
    rows = _read_csv(summary)
    assert rows[0] == ["step", "role", "component", "mean", "variance"]
    N = small_scalar_cfg.ocp.N
    assert len(rows) == 1 + 2 * N
    first = rows[1]
    assert first[:3] == ["0", "x", "0"]
    assert float(first[3]) == pytest.approx(small_scalar_cfg.initial_state.center[0])


def test_write_rows_formats_floats(repo):
    path = repo.write_rows("t.csv", ["k", "v"], [[0, 0.1], [1, np.float64(2)]])
    rows = _read_csv(path)
    assert rows[1:] == [["0", "0.10000000000000001"], ["1", "2"]]

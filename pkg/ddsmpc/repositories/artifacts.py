"""Artifact repository: data records as JSON and plot-ready CSV files."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from ddsmpc.core.errors import NotFoundError, ValidationError
from ddsmpc.services.lti_sim import DataRecord
from ddsmpc.services.mpc_loop import ClosedLoopRecord, Histogram
from ddsmpc.services.ocp_builder import OcpSolution

logger = logging.getLogger(__name__)

DATA_FORMAT = "ddsmpc-data/1"


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


class ArtifactRepository(Protocol):
    def save_data_record(self, record: DataRecord, name: str = ...) -> Path: ...
    def load_data_record(self, path: str | Path) -> DataRecord: ...
    def write_solution(self, solution: OcpSolution, stem: str = ...) -> list[Path]: ...
    def write_closed_loop(self, record: ClosedLoopRecord, name: str) -> Path: ...
    def write_histograms(
        self, histograms: list[Histogram], component: int, name: str = ...
    ) -> Path: ...
    def write_json(self, payload: dict[str, Any], name: str) -> Path: ...


class FileArtifactRepository:
    """Writes artifacts under ``out_dir``.

    Output is a pure function of the inputs: floats are printed with 17
    significant digits and JSON keys are sorted, so identical runs produce
    byte-identical files.
    """

    def __init__(self, out_dir: str | Path) -> None:
        self.out_dir = Path(out_dir)

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def _write_csv(self, name: str, header: list[str], rows) -> Path:
        path = self._path(name)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        logger.info("artifact_written path=%s", path)
        return path

    def write_json(self, payload: dict[str, Any], name: str) -> Path:
        path = self._path(name)
        path.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        logger.info("artifact_written path=%s", path)
        return path

    def save_data_record(self, record: DataRecord, name: str = "data.json") -> Path:
        payload = {
            "format": DATA_FORMAT,
            "T": record.T,
            "n_x": record.n_x,
            "n_u": record.n_u,
            "x": record.x.tolist(),
            "u": record.u.tolist(),
            "w_hat": record.w_hat.tolist(),
            "w_true": None if record.w_true is None else record.w_true.tolist(),
        }
        return self.write_json(payload, name)

    def load_data_record(self, path: str | Path) -> DataRecord:
        path = Path(path)
        if not path.is_file():
            raise NotFoundError(
                f"data file not found: {path}", details={"path": str(path)}
            )
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(
                f"data file is not valid JSON: {e.msg}",
                details={"path": str(path), "line": e.lineno, "column": e.colno},
            ) from e
        if payload.get("format") != DATA_FORMAT:
            raise ValidationError(
                "unsupported data file format",
                details={"path": str(path), "format": payload.get("format")},
            )
        w_true = payload.get("w_true")
        return DataRecord(
            np.array(payload["x"], dtype=float),
            np.array(payload["u"], dtype=float),
            np.array(payload["w_hat"], dtype=float),
            None if w_true is None else np.array(w_true, dtype=float),
        )

    def write_solution(
        self, solution: OcpSolution, stem: str = "solution"
    ) -> list[Path]:
        """Coefficient CSV plus a per-step mean/variance summary CSV."""
        coeff_rows = []
        summary_rows = []
        for role, traj in (("x", solution.x_coeffs), ("u", solution.u_coeffs)):
            c = traj.coefficients
            for i in range(c.shape[0]):
                for j in range(c.shape[1]):
                    for comp in range(c.shape[2]):
                        coeff_rows.append([i, j, role, comp, _fmt(c[i, j, comp])])
            mean, var = traj.moments()
            for i in range(mean.shape[0]):
                for comp in range(mean.shape[1]):
                    summary_rows.append(
                        [i, role, comp, _fmt(mean[i, comp]), _fmt(var[i, comp])]
                    )
        return [
            self._write_csv(
                f"{stem}.csv",
                ["step", "coefficient", "role", "component", "value"],
                coeff_rows,
            ),
            self._write_csv(
                f"{stem}_summary.csv",
                ["step", "role", "component", "mean", "variance"],
                summary_rows,
            ),
        ]

    def write_closed_loop(self, record: ClosedLoopRecord, name: str) -> Path:
        n_x, n_u = record.x.shape[1], record.u.shape[1]
        header = (
            ["step"]
            + [f"x{c}" for c in range(n_x)]
            + [f"u{c}" for c in range(n_u)]
            + [f"w{c}" for c in range(n_x)]
            + ["stage_cost"]
        )
        rows = []
        for k in range(record.x.shape[0]):
            row = [k] + [_fmt(v) for v in record.x[k]]
            if k < record.steps:
                row += [_fmt(v) for v in record.u[k]]
                row += [_fmt(v) for v in record.w[k]]
                row.append(_fmt(record.stage_cost[k]))
            else:
                row += [""] * (n_u + n_x + 1)
            rows.append(row)
        return self._write_csv(name, header, rows)

    def write_histograms(
        self, histograms: list[Histogram], component: int, name: str = "histogram.csv"
    ) -> Path:
        rows = []
        for h in histograms:
            for b, density in enumerate(h.density):
                rows.append(
                    [
                        h.step,
                        component,
                        b,
                        _fmt(h.edges[b]),
                        _fmt(h.edges[b + 1]),
                        _fmt(density),
                    ]
                )
        return self._write_csv(
            name,
            ["step", "component", "bin", "left_edge", "right_edge", "density"],
            rows,
        )

    def write_rows(self, name: str, header: list[str], rows: list[list[Any]]) -> Path:
        """Generic CSV writer; floats are formatted like every other artifact."""
        formatted = [
            [_fmt(v) if isinstance(v, float | np.floating) else v for v in row]
            for row in rows
        ]
        return self._write_csv(name, header, formatted)

"""Experiment scenarios: a pydantic model tree, built-in presets and TOML loading."""

from __future__ import annotations

import copy
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal

import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ddsmpc.core.errors import ConfigError, NotFoundError

INF = math.inf


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _square(name: str, M: list[list[float]]) -> None:
    if not M or any(len(row) != len(M) for row in M):
        raise ValueError(f"{name} must be a nonempty square matrix")


class SystemConfig(_Block):
    A: list[list[float]]
    B: list[list[float]]

    @model_validator(mode="after")
    def _check_shapes(self) -> SystemConfig:
        _square("A", self.A)
        if len(self.B) != len(self.A) or len({len(row) for row in self.B}) != 1:
            raise ValueError("B must have one row per state and equal-length rows")
        return self

    @property
    def n_x(self) -> int:
        return len(self.A)

    @property
    def n_u(self) -> int:
        return len(self.B[0])


class NoiseConfig(_Block):
    kind: Literal["gaussian", "uniform"]
    variances: list[float] | None = None
    half_widths: list[float] | None = None

    @model_validator(mode="after")
    def _check_params(self) -> NoiseConfig:
        params = self.variances if self.kind == "gaussian" else self.half_widths
        if params is None:
            field_name = "variances" if self.kind == "gaussian" else "half_widths"
            raise ValueError(f"{self.kind} noise requires {field_name}")
        if any(p < 0 for p in params):
            raise ValueError("noise parameters must be nonnegative")
        return self

    @property
    def params(self) -> list[float]:
        return self.variances if self.kind == "gaussian" else self.half_widths


class InitialStateConfig(_Block):
    kind: Literal["fixed", "uniform", "gaussian"] = "fixed"
    value: list[float] | None = None
    lower: list[float] | None = None
    upper: list[float] | None = None
    mean: list[float] | None = None
    stddev: list[float] | None = None

    @model_validator(mode="after")
    def _check_kind(self) -> InitialStateConfig:
        required = {
            "fixed": ("value",),
            "uniform": ("lower", "upper"),
            "gaussian": ("mean", "stddev"),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} initial state requires {', '.join(missing)}")
        return self

    @property
    def center(self) -> list[float]:
        if self.kind == "fixed":
            return list(self.value)
        if self.kind == "gaussian":
            return list(self.mean)
        return [0.5 * (lo + hi) for lo, hi in zip(self.lower, self.upper)]


class BoxConfig(_Block):
    lower: list[float]
    upper: list[float]

    @model_validator(mode="after")
    def _check_bounds(self) -> BoxConfig:
        if len(self.lower) != len(self.upper):
            raise ValueError("box lower and upper must have equal length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("box is empty (lower > upper)")
        return self


class OcpConfig(_Block):
    N: int = Field(ge=1)
    Q: list[list[float]]
    R: list[list[float]]
    state_box: BoxConfig | None = None
    input_box: BoxConfig | None = None
    eps_x: float = Field(default=1.0, gt=0.0, le=1.0)
    eps_u: float = Field(default=1.0, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_weights(self) -> OcpConfig:
        _square("Q", self.Q)
        _square("R", self.R)
        return self


class DataConfig(_Block):
    T: int = Field(default=150, ge=1)
    estimation_length: int = Field(default=1000, ge=0)
    input_box: BoxConfig
    excitation: Literal["lqr", "none"] = "lqr"
    seed: int = 0
    max_retries: int | None = Field(default=None, ge=1)


class RunConfig(_Block):
    mode: Literal["open_loop", "mpc"] = "open_loop"
    steps: int = Field(default=50, ge=1)
    monte_carlo_runs: int = Field(default=1, ge=1)
    histogram_component: int | None = None
    histogram_steps: list[int] = Field(default_factory=list)
    histogram_bins: int = Field(default=30, ge=1)


class ScenarioConfig(_Block):
    name: str = "custom"
    system: SystemConfig
    noise: NoiseConfig
    initial_state: InitialStateConfig
    ocp: OcpConfig
    data: DataConfig
    run: RunConfig = Field(default_factory=RunConfig)

    @model_validator(mode="after")
    def _check_dimensions(self) -> ScenarioConfig:
        n_x, n_u = self.system.n_x, self.system.n_u
        checks = {
            "noise": len(self.noise.params) == n_x,
            "initial_state": len(self.initial_state.center) == n_x,
            "ocp.Q": len(self.ocp.Q) == n_x,
            "ocp.R": len(self.ocp.R) == n_u,
            "ocp.state_box": self.ocp.state_box is None
            or len(self.ocp.state_box.lower) == n_x,
            "ocp.input_box": self.ocp.input_box is None
            or len(self.ocp.input_box.lower) == n_u,
            "data.input_box": len(self.data.input_box.lower) == n_u,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"dimension mismatch with the system in: {', '.join(bad)}")
        if self.run.histogram_component is not None and not (
            0 <= self.run.histogram_component < n_x
        ):
            raise ValueError("run.histogram_component is not a state index")
        if any(k < 0 for k in self.run.histogram_steps):
            raise ValueError("run.histogram_steps must be nonnegative")
        return self


_SCALAR_BASE: dict[str, Any] = {
    "system": {"A": [[2.0]], "B": [[1.0]]},
    "initial_state": {"kind": "uniform", "lower": [0.6], "upper": [1.4]},
    "ocp": {
        "N": 25,
        "Q": [[0.0]],
        "R": [[1.0]],
        "state_box": {"lower": [-2.0], "upper": [2.0]},
        "eps_x": 0.2,
    },
    "data": {
        "T": 150,
        "estimation_length": 1000,
        "input_box": {"lower": [-1.0], "upper": [1.0]},
        "excitation": "lqr",
        "seed": 0,
    },
    "run": {"mode": "open_loop", "steps": 25, "monte_carlo_runs": 1},
}

PRESETS: dict[str, dict[str, Any]] = {
    "scalar-gaussian": {
        **copy.deepcopy(_SCALAR_BASE),
        "name": "scalar-gaussian",
        "noise": {"kind": "gaussian", "variances": [0.25]},
    },
    "scalar-uniform": {
        **copy.deepcopy(_SCALAR_BASE),
        "name": "scalar-uniform",
        "noise": {"kind": "uniform", "half_widths": [0.866]},
    },
    "aircraft": {
        "name": "aircraft",
        "system": {
            "A": [
                [0.239, 0.0, 0.178, 0.0],
                [-0.372, 1.0, 0.25, 0.0],
                [-0.99, 0.0, 0.139, 0.0],
                [-48.9, 64.1, 2.4, 1.0],
            ],
            "B": [[-1.23], [-1.44], [-4.48], [-1.8]],
        },
        "noise": {"kind": "gaussian", "variances": [0.01, 0.01, 0.01, 4.0]},
        "initial_state": {"kind": "fixed", "value": [0.0, 0.0, 0.0, -400.0]},
        "ocp": {
            "N": 10,
            "Q": [
                [1014.7, 0.0, 0.0, 0.0],
                [0.0, 3.2407, 0.0, 0.0],
                [0.0, 0.0, 5674.8, 0.0],
                [0.0, 0.0, 0.0, 0.3695],
            ],
            "R": [[5188.25]],
            "state_box": {
                "lower": [-INF, -0.349, -INF, -INF],
                "upper": [INF, 0.349, INF, INF],
            },
            "eps_x": 0.1,
        },
        "data": {
            "T": 150,
            "estimation_length": 1000,
            "input_box": {"lower": [-0.5], "upper": [0.5]},
            "excitation": "lqr",
            "seed": 0,
        },
        "run": {
            "mode": "mpc",
            "steps": 50,
            "monte_carlo_runs": 50,
            "histogram_component": 3,
            "histogram_steps": [10, 20, 30, 40, 50],
        },
    },
}

PRESET_ALIASES = {"scalar": "scalar-gaussian"}

PRESET_NOTES: dict[str, dict[str, str]] = {
    "scalar-gaussian": {
        "system": "scalar plant X+ = 2X + U + W",
        "noise": "i.i.d. N(0, 0.5^2) process noise",
        "initial_state": "X0 ~ U(0.6, 1.4)",
        "ocp": "Q = 0, R = 1, P[X in [-2, 2]] >= 0.8, open-loop horizon 25",
        "data": "1000 samples for noise estimation plus 150 Hankel samples",
        "data.input_box": "excitation magnitude not given by the benchmark; chosen",
        "data.excitation": "stabilizing excitation feedback for the unstable plant",
    },
    "scalar-uniform": {
        "noise": "i.i.d. U(-0.866, 0.866), same mean and variance as N(0, 0.5^2)",
        "other": "all remaining values as scalar-gaussian",
    },
    "aircraft": {
        "system": "linearized aircraft, sampled at 0.5 s; x = (attack, pitch, "
        "pitch rate, altitude), u = elevator",
        "noise": "Gaussian, covariance diag(0.01, 0.01, 0.01, 4)",
        "initial_state": "x_init = (0, 0, 0, -400)",
        "ocp": "Q = diag(1014.7, 3.2407, 5674.8, 0.3695), R = 5188.25, "
        "P[pitch in [-0.349, 0.349]] >= 0.9, horizon 10",
        "data": "1000 samples for noise estimation plus 150 Hankel samples",
        "run": "50 closed-loop runs; altitude histograms at k = 10..50",
        "data.input_box": "excitation magnitude not given by the benchmark; chosen",
    },
}


def resolve_preset_name(name: str) -> str:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise NotFoundError(
            f"unknown preset {name!r}",
            details={"available": sorted([*PRESETS, *PRESET_ALIASES])},
        )
    return name


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"config file {str(path)!r} not found")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        # The decoder message carries "(at line L, column C)".
        raise ConfigError(
            f"invalid TOML in {path}: {e}", details={"path": str(path)}
        ) from e


def validate_scenario(raw: dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        errors = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in e.errors()
        ]
        summary = "; ".join(
            f"{err['field'] or '<root>'}: {err['message']}" for err in errors
        )
        raise ConfigError(
            f"invalid scenario: {summary}", details={"errors": errors}
        ) from e


def load_scenario(
    preset: str | None = None,
    config_path: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ScenarioConfig:
    """Preset values, then the config file, then ``overrides``; later layers win.

    A config file may name its own base via a top-level ``preset`` key.
    """
    file_values: dict[str, Any] = {}
    if config_path is not None:
        file_values = read_config_file(config_path)
        preset = file_values.pop("preset", None) or preset
    raw: dict[str, Any] = {}
    if preset is not None:
        raw = copy.deepcopy(PRESETS[resolve_preset_name(preset)])
    raw = _deep_merge(raw, file_values)
    raw = _deep_merge(raw, overrides or {})
    if preset is None and config_path is None:
        raise ConfigError("either a preset or a config file is required")
    return validate_scenario(raw)


def describe_preset(name: str) -> dict[str, Any]:
    resolved = resolve_preset_name(name)
    scenario = validate_scenario(copy.deepcopy(PRESETS[resolved]))
    return {
        "preset": resolved,
        "values": scenario.model_dump(),
        "notes": PRESET_NOTES.get(resolved, {}),
    }

"""Realization and PCE-coefficient simulation of x+ = A x + B u + w."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg
from scipy import stats

from ddsmpc.core.errors import ValidationError
from ddsmpc.services.pce_basis import (
    GermFamily,
    JointBasis,
    PceTrajectory,
    PceVector,
    evaluate_basis,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(-1, 1) if B.ndim <= 1 else B
        if A.shape[0] != A.shape[1]:
            raise ValidationError("A must be square", details={"A": A.shape})
        if B.shape[0] != A.shape[0]:
            raise ValidationError(
                "B must have as many rows as A", details={"A": A.shape, "B": B.shape}
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Zero-mean i.i.d. process noise, independent across components."""

    kind: Literal["gaussian", "uniform"]
    params: np.ndarray

    def __post_init__(self) -> None:
        params = np.atleast_1d(np.asarray(self.params, dtype=float))
        if params.ndim != 1 or np.any(params < 0) or not np.all(np.isfinite(params)):
            raise ValidationError("noise parameters must be finite and nonnegative")
        if self.kind not in ("gaussian", "uniform"):
            raise ValidationError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "params", params)

    @classmethod
    def gaussian_diag(cls, variances) -> NoiseSpec:
        return cls("gaussian", variances)

    @classmethod
    def uniform_box(cls, half_widths) -> NoiseSpec:
        return cls("uniform", half_widths)

    @property
    def n(self) -> int:
        return self.params.size

    @property
    def variances(self) -> np.ndarray:
        if self.kind == "gaussian":
            return self.params.copy()
        return self.params**2 / 3.0

    def germ(self) -> GermFamily:
        if self.kind == "gaussian":
            return GermFamily.gaussian(np.zeros(self.n), np.sqrt(self.params))
        return GermFamily.uniform(-self.params, self.params)

    def sample(self, rng: np.random.Generator, T: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal((T, self.n)) * np.sqrt(self.params)
        return rng.uniform(-1.0, 1.0, (T, self.n)) * self.params

    def log_density(self, w: np.ndarray) -> np.ndarray:
        """Per-sample log density of rows of ``w`` (stochastic components only)."""
        w = np.atleast_2d(w)
        live = self.params > 0
        if self.kind == "gaussian":
            scale = np.sqrt(self.params[live])
            return np.sum(stats.norm.logpdf(w[:, live], scale=scale), axis=1)
        half = self.params[live]
        logpdf = stats.uniform.logpdf(w[:, live], loc=-half, scale=2 * half)
        return np.sum(logpdf, axis=1)


@dataclass(frozen=True, eq=False)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValidationError("input box bounds must have equal length")
        if np.any(lower > upper):
            raise ValidationError(
                "input box is empty",
                details={"lower": lower.tolist(), "upper": upper.tolist()},
            )
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValidationError("excitation input box must be bounded")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, half_width, n: int = 1) -> InputBox:
        half = np.broadcast_to(np.asarray(half_width, dtype=float), (n,))
        return cls(-half, half)


@dataclass(frozen=True, eq=False)
class DataRecord:
    """Recorded realizations: x has T+1 rows, u and w_hat T rows.

    ``w_true`` is the simulation truth, kept for exact-noise baselines.
    """

    x: np.ndarray
    u: np.ndarray
    w_hat: np.ndarray
    w_true: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        u = np.asarray(self.u, dtype=float)
        w_hat = np.asarray(self.w_hat, dtype=float)
        u = u.reshape(u.shape[0], -1)
        w_hat = w_hat.reshape(w_hat.shape[0], -1)
        T = u.shape[0]
        if x.shape[0] != T + 1 or w_hat.shape != (T, x.shape[1]):
            raise ValidationError(
                "data record shapes must be x:(T+1,n_x), u:(T,n_u), w:(T,n_x)",
                details={"x": x.shape, "u": u.shape, "w_hat": w_hat.shape},
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w_hat", w_hat)
        if self.w_true is not None:
            w_true = np.asarray(self.w_true, dtype=float).reshape(T, -1)
            object.__setattr__(self, "w_true", w_true)

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    def with_exact_noise(self) -> DataRecord:
        if self.w_true is None:
            raise ValidationError("data record carries no true noise realization")
        return DataRecord(self.x, self.u, self.w_true, self.w_true)

    def tail(self, T: int) -> DataRecord:
        """Last ``T`` transitions."""
        if not 1 <= T <= self.T:
            raise ValidationError(f"cannot take {T} samples from a record of {self.T}")
        start = self.T - T
        return DataRecord(
            self.x[start:],
            self.u[start:],
            self.w_hat[start:],
            None if self.w_true is None else self.w_true[start:],
        )


def _check_step(sys: LtiSystem, x, u, w) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if x.size != sys.n_x or u.size != sys.n_u or w.size != sys.n_x:
        raise ValidationError(
            "dimension mismatch in realization step",
            details={"x": x.size, "u": u.size, "w": w.size, "n_x": sys.n_x},
        )
    return x, u, w


def step_realization(sys: LtiSystem, x_k, u_k, w_k) -> np.ndarray:
    x_k, u_k, w_k = _check_step(sys, x_k, u_k, w_k)
    return sys.A @ x_k + sys.B @ u_k + w_k


def simulate_realization(sys: LtiSystem, x0, u_traj, w_traj) -> np.ndarray:
    u_traj = np.asarray(u_traj, dtype=float).reshape(-1, sys.n_u)
    w_traj = np.asarray(w_traj, dtype=float).reshape(-1, sys.n_x)
    if u_traj.shape[0] != w_traj.shape[0]:
        raise ValidationError(
            "input and noise trajectories differ in length",
            details={"u": u_traj.shape[0], "w": w_traj.shape[0]},
        )
    x = np.empty((u_traj.shape[0] + 1, sys.n_x))
    x[0] = np.asarray(x0, dtype=float).reshape(-1)
    for k in range(u_traj.shape[0]):
        x[k + 1] = step_realization(sys, x[k], u_traj[k], w_traj[k])
    return x


def propagate_pce(
    sys: LtiSystem,
    basis: JointBasis,
    x_k: PceVector,
    u_coeffs: PceTrajectory,
    w_coeffs: PceTrajectory,
    N: int | None = None,
) -> PceTrajectory:
    """Galerkin-projected dynamics x^j_{k+1} = A x^j_k + B u^j_k + w^j_k.

    Returns N+1 state coefficient samples (offsets 0..N).
    """
    for part in (x_k, u_coeffs, w_coeffs):
        if not part.basis.is_compatible(basis):
            raise ValidationError("PCE operands do not share the same basis")
    N = u_coeffs.length if N is None else N
    if u_coeffs.length < N or w_coeffs.length < N:
        raise ValidationError("input/noise coefficient trajectories shorter than N")
    dims = (u_coeffs.n, w_coeffs.n, x_k.coefficients.shape[1])
    if dims != (sys.n_u, sys.n_x, sys.n_x):
        raise ValidationError("PCE operand dimensions do not match the system")
    x = np.empty((N + 1, basis.total_terms, sys.n_x))
    x[0] = x_k.coefficients
    for i in range(N):
        x[i + 1] = (
            x[i] @ sys.A.T
            + u_coeffs.coefficients[i] @ sys.B.T
            + w_coeffs.coefficients[i]
        )
    return PceTrajectory(x, basis)


def simulate_pce_realization(
    sys: LtiSystem,
    basis: JointBasis,
    x_k: PceVector,
    u_coeffs: PceTrajectory,
    w_coeffs: PceTrajectory,
    omega: np.ndarray,
) -> np.ndarray:
    """Sample-then-simulate: realize inputs/noise at ``omega`` and simulate."""
    phi = evaluate_basis(basis, omega)
    return simulate_realization(
        sys, x_k.realize(phi), u_coeffs.realize(phi), w_coeffs.realize(phi)
    )


def sample_noise(spec: NoiseSpec, T: int, rng: np.random.Generator) -> np.ndarray:
    if T < 1:
        raise ValidationError("T must be at least 1", details={"T": T})
    return spec.sample(rng, T)


def random_input(bounds: InputBox, T: int, rng: np.random.Generator) -> np.ndarray:
    if T < 1:
        raise ValidationError("T must be at least 1", details={"T": T})
    return rng.uniform(bounds.lower, bounds.upper, (T, bounds.lower.size))


def lqr_gain(sys: LtiSystem, Q: np.ndarray | None = None, R: np.ndarray | None = None):
    """Stabilizing state feedback u = K x from the discrete Riccati equation."""
    Q = np.eye(sys.n_x) if Q is None else np.atleast_2d(Q)
    R = np.eye(sys.n_u) if R is None else np.atleast_2d(R)
    P = scipy.linalg.solve_discrete_are(sys.A, sys.B, Q, R)
    return -np.linalg.solve(R + sys.B.T @ P @ sys.B, sys.B.T @ P @ sys.A)


def collect_data(
    sys: LtiSystem,
    noise_spec: NoiseSpec,
    input_box: InputBox,
    T: int,
    rng: np.random.Generator,
    *,
    x0: np.ndarray | None = None,
    excitation_gain: np.ndarray | None = None,
) -> DataRecord:
    """Excite the plant and record (x, u, w); ``w_hat`` holds the true noise here.

    With ``excitation_gain`` K the applied input is ``K x_k + v_k`` where ``v_k`` is
    uniform over ``input_box``.
    """
    if noise_spec.n != sys.n_x or input_box.lower.size != sys.n_u:
        raise ValidationError("noise/input dimensions do not match the system")
    v = random_input(input_box, T, rng)
    w = sample_noise(noise_spec, T, rng)
    x = np.empty((T + 1, sys.n_x))
    x[0] = np.zeros(sys.n_x) if x0 is None else np.asarray(x0, dtype=float)
    u = np.empty((T, sys.n_u))
    K = None if excitation_gain is None else np.atleast_2d(excitation_gain)
    for k in range(T):
        u[k] = v[k] if K is None else K @ x[k] + v[k]
        x[k + 1] = step_realization(sys, x[k], u[k], w[k])
    if not np.all(np.isfinite(x)):
        raise ValidationError(
            "state record diverged during data collection; use an excitation gain",
            details={"T": T},
        )
    logger.debug("data_collected T=%d n_x=%d n_u=%d", T, sys.n_x, sys.n_u)
    return DataRecord(x, u, w, w)

"""Reconstruction of past process noise from recorded input/state data.

With S = [x_0 .. x_{T-1}; u_0 .. u_{T-1}] and x+ = [x_1 .. x_T], any noise
sequence consistent with the data satisfies (x+ - w)(I - S^+ S) = 0. The
least-squares estimate is w = x+ (I - S^+ S); the maximum-likelihood estimate
minimizes -sum log p(w_k) over the same affine set.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import cvxpy as cp
import numpy as np
from scipy import stats

from ddsmpc.core import linalg
from ddsmpc.core.errors import (
    PersistencyOfExcitationError,
    SolverError,
    ValidationError,
)

logger = logging.getLogger(__name__)


class EstimationMethod(str, Enum):
    """Which estimator actually produced ``w_hat``.

    ``CLOSED_FORM`` is the least-squares projection returned for a density
    whose likelihood maximizer it is. A requested maximum-likelihood estimate
    that could not be computed is reported as ``LEAST_SQUARES`` with
    ``fallback`` set in the metadata.
    """

    LEAST_SQUARES = "least_squares"
    CLOSED_FORM = "closed_form_least_squares"
    MAX_LIKELIHOOD = "max_likelihood"


@dataclass(frozen=True, eq=False)
class EstimationResult:
    w_hat: np.ndarray
    projector_residual: float
    method: EstimationMethod
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def fallback(self) -> bool:
        return bool(self.metadata.get("fallback", False))


def _transition_data(x, u) -> tuple[np.ndarray, np.ndarray]:
    """Return (S, x+) in column-per-sample layout."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x = x.reshape(x.shape[0], -1)
    u = u.reshape(u.shape[0], -1)
    T = u.shape[0]
    if x.shape[0] != T + 1:
        raise ValidationError(
            "state record must have one more sample than the input record",
            details={"x": x.shape[0], "u": T},
        )
    S = np.vstack([x[:T].T, u.T])
    required = S.shape[0]
    rank = linalg.numerical_rank(S)
    if rank < required:
        raise PersistencyOfExcitationError(
            required_order=1,
            rank=rank,
            required_rank=required,
            details={"T": T, "stage": "noise_estimation"},
        )
    return S, x[1:].T


def _projector_residual(x_plus: np.ndarray, w_cols: np.ndarray, P: np.ndarray) -> float:
    return float(np.linalg.norm((x_plus - w_cols) @ P))


def estimate_noise_ls(x, u) -> EstimationResult:
    S, x_plus = _transition_data(x, u)
    P = linalg.row_space_projector(S)
    w_cols = x_plus @ P
    residual = _projector_residual(x_plus, w_cols, P)
    logger.info(
        "noise_estimated method=least_squares T=%d residual=%.3e",
        S.shape[1],
        residual,
    )
    return EstimationResult(w_cols.T, residual, EstimationMethod.LEAST_SQUARES)


class NoiseDensity:
    """Negative log-likelihood of a noise sample matrix, up to constants.

    ``negative_log_likelihood`` receives a cvxpy expression of shape (n_x, T)
    and must return a scalar expression; it is accepted only when DCP-convex.
    """

    name = "custom"
    closed_form_least_squares = False
    unique_maximizer = True

    def negative_log_likelihood(self, w: cp.Expression) -> cp.Expression:
        raise NotImplementedError

    def log_pdf(self, w: np.ndarray) -> np.ndarray:
        """Per-sample log density of rows of ``w`` (T, n_x)."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class GaussianDensity(NoiseDensity):
    variances: np.ndarray

    name = "gaussian"
    closed_form_least_squares = True

    def negative_log_likelihood(self, w: cp.Expression) -> cp.Expression:
        weights = 1.0 / (2.0 * np.asarray(self.variances, dtype=float))
        return cp.sum(cp.multiply(weights[:, None], cp.square(w)))

    def log_pdf(self, w: np.ndarray) -> np.ndarray:
        scale = np.sqrt(np.asarray(self.variances, dtype=float))
        return np.sum(stats.norm.logpdf(np.atleast_2d(w), scale=scale), axis=1)


@dataclass(frozen=True, eq=False)
class UniformDensity(NoiseDensity):
    half_widths: np.ndarray

    name = "uniform"
    unique_maximizer = False

    def negative_log_likelihood(self, w: cp.Expression) -> cp.Expression:
        # Constant on the support; any feasible point maximizes the likelihood.
        return cp.Constant(0.0)

    def log_pdf(self, w: np.ndarray) -> np.ndarray:
        half = np.asarray(self.half_widths, dtype=float)
        return np.sum(
            stats.uniform.logpdf(np.atleast_2d(w), loc=-half, scale=2 * half), axis=1
        )


@dataclass(frozen=True, eq=False)
class LaplaceDensity(NoiseDensity):
    scales: np.ndarray

    name = "laplace"

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.scales) <= 0):
            raise ValidationError("Laplace scales must be positive")

    def negative_log_likelihood(self, w: cp.Expression) -> cp.Expression:
        weights = 1.0 / np.asarray(self.scales, dtype=float)
        return cp.sum(cp.multiply(weights[:, None], cp.abs(w)))

    def log_pdf(self, w: np.ndarray) -> np.ndarray:
        scale = np.asarray(self.scales, dtype=float)
        return np.sum(stats.laplace.logpdf(np.atleast_2d(w), scale=scale), axis=1)


@dataclass(frozen=True, eq=False)
class CustomDensity(NoiseDensity):
    nll: Callable[[cp.Expression], cp.Expression]
    pdf_log: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    def negative_log_likelihood(self, w: cp.Expression) -> cp.Expression:
        return self.nll(w)

    def log_pdf(self, w: np.ndarray) -> np.ndarray:
        if self.pdf_log is None:
            raise ValidationError(f"density {self.name!r} has no numeric log-pdf")
        return self.pdf_log(np.atleast_2d(w))


def density_for(spec) -> NoiseDensity:
    """Density matching a ``NoiseSpec`` (gaussian variances or uniform half-widths)."""
    if spec.kind == "gaussian":
        return GaussianDensity(spec.params)
    return UniformDensity(spec.params)


def estimate_noise_ml(x, u, density: NoiseDensity) -> EstimationResult:
    S, x_plus = _transition_data(x, u)

    if density.closed_form_least_squares or not density.unique_maximizer:
        ls = estimate_noise_ls(x, u)
        fallback = not density.unique_maximizer
        if fallback:
            logger.warning(
                "ml_fallback density=%s reason=non_unique_maximizer", density.name
            )
        method = (
            EstimationMethod.LEAST_SQUARES if fallback else EstimationMethod.CLOSED_FORM
        )
        return EstimationResult(
            ls.w_hat,
            ls.projector_residual,
            method,
            {"density": density.name, "fallback": fallback},
        )

    theta = cp.Variable((x_plus.shape[0], S.shape[0]))
    w_expr = x_plus - theta @ S
    problem = cp.Problem(cp.Minimize(density.negative_log_likelihood(w_expr)))
    if not problem.is_dcp():
        raise ValidationError(
            f"density {density.name!r} is not log-concave in a form the "
            "estimator can solve",
            details={"density": density.name},
        )
    problem.solve(solver=cp.CLARABEL)
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or theta.value is None:
        raise SolverError(
            "maximum-likelihood noise estimate did not converge",
            details={"status": problem.status, "density": density.name},
        )
    w_cols = x_plus - theta.value @ S
    P = linalg.row_space_projector(S)
    residual = _projector_residual(x_plus, w_cols, P)
    logger.info(
        "noise_estimated method=max_likelihood density=%s T=%d residual=%.3e",
        density.name,
        S.shape[1],
        residual,
    )
    return EstimationResult(
        w_cols.T,
        residual,
        EstimationMethod.MAX_LIKELIHOOD,
        {"density": density.name, "fallback": False, "status": problem.status},
    )


def identified_dynamics(x, u, w_hat) -> tuple[np.ndarray, np.ndarray]:
    """[A B] implied by the de-noised transitions, (x+ - w) S^+."""
    S, x_plus = _transition_data(x, u)
    w_cols = np.asarray(w_hat, dtype=float).reshape(S.shape[1], -1).T
    AB = (x_plus - w_cols) @ linalg.pinv(S)
    n_x = x_plus.shape[0]
    return AB[:, :n_x], AB[:, n_x:]

"""Hankel matrices, excitation checks and fundamental-lemma solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ddsmpc.core import linalg
from ddsmpc.core.errors import (
    InfeasibleSystemError,
    PersistencyOfExcitationError,
    ValidationError,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


def _as_trajectory(traj) -> np.ndarray:
    z = np.asarray(traj, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValidationError(
            "trajectory must be a nonempty (T, n_z) array", details={"shape": z.shape}
        )
    return z


@dataclass(frozen=True, eq=False)
class HankelMatrix:
    """Depth-``t`` block Hankel matrix; block (r, c) holds sample ``z[r + c]``."""

    data: np.ndarray
    depth: int
    matrix: np.ndarray

    @property
    def n_z(self) -> int:
        return self.data.shape[1]

    @property
    def columns(self) -> int:
        return self.matrix.shape[1]

    def block_rows(self, start: int, stop: int) -> np.ndarray:
        """Rows of depth blocks ``start..stop-1``."""
        return self.matrix[start * self.n_z : stop * self.n_z]


def build_hankel(traj, t: int) -> HankelMatrix:
    z = _as_trajectory(traj)
    T = z.shape[0]
    if not 1 <= t <= T:
        raise ValidationError(
            f"Hankel depth {t} must lie in [1, {T}]", details={"t": t, "T": T}
        )
    # windows[c, comp, r] == z[c + r, comp]
    windows = sliding_window_view(z, t, axis=0)
    matrix = windows.transpose(2, 1, 0).reshape(t * z.shape[1], T - t + 1)
    matrix = np.ascontiguousarray(matrix)
    matrix.setflags(write=False)
    return HankelMatrix(z, t, matrix)


@dataclass(frozen=True)
class PeReport:
    order: int
    rank: int
    required: int

    @property
    def ok(self) -> bool:
        return self.rank == self.required


def pe_report(traj, t: int) -> PeReport:
    z = _as_trajectory(traj)
    required = z.shape[1] * t
    if t < 1 or t > z.shape[0]:
        return PeReport(t, 0, required)
    rank = linalg.numerical_rank(build_hankel(z, t).matrix)
    return PeReport(t, rank, required)


def is_persistently_exciting(traj, t: int) -> bool:
    report = pe_report(traj, t)
    logger.debug(
        "pe_check order=%d rank=%d required=%d", t, report.rank, report.required
    )
    return report.ok


def minimum_length(n_z: int, t: int) -> int:
    """Shortest record whose depth-``t`` Hankel matrix can reach full row rank."""
    return (n_z + 1) * t - 1


def require_persistency(u, w, order: int) -> PeReport:
    """Raise unless the stacked (u, w) record is PE of ``order``.

    ``w=None`` checks the inputs alone (noise-free data).
    """
    parts = [_as_trajectory(u)] if w is None else [_as_trajectory(u), _as_trajectory(w)]
    stacked = np.hstack(parts)
    report = pe_report(stacked, order)
    if not report.ok:
        raise PersistencyOfExcitationError(
            required_order=order,
            rank=report.rank,
            required_rank=report.required,
            details={"T": stacked.shape[0]},
        )
    return report


@dataclass(frozen=True, eq=False)
class BehaviorHankel:
    """Depth-``t`` Hankel matrices of a recorded (x, u, w) behavior."""

    H_x: HankelMatrix
    H_u: HankelMatrix
    H_w: HankelMatrix

    @property
    def depth(self) -> int:
        return self.H_x.depth

    @property
    def columns(self) -> int:
        return self.H_x.columns

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.H_x.matrix, self.H_u.matrix, self.H_w.matrix])


def stacked_behavior_hankel(x, u, w, t: int) -> BehaviorHankel:
    """``x`` may carry the trailing sample x_T; only x_0..x_{T-1} are used."""
    u = _as_trajectory(u)
    w = _as_trajectory(w)
    x = _as_trajectory(x)[: u.shape[0]]
    if not (x.shape[0] == u.shape[0] == w.shape[0]):
        raise ValidationError(
            "x, u and w records must cover the same samples",
            details={"x": x.shape[0], "u": u.shape[0], "w": w.shape[0]},
        )
    return BehaviorHankel(build_hankel(x, t), build_hankel(u, t), build_hankel(w, t))


@dataclass(frozen=True, eq=False)
class BehaviorSolution:
    """Per-coefficient g vectors (J, columns) and completed x windows (J, t, n_x)."""

    g: np.ndarray
    x: np.ndarray
    residual: float


def _initial_rows(target, rows: int) -> np.ndarray:
    arr = np.asarray(getattr(target, "coefficients", target), dtype=float)
    arr = arr.reshape(1, -1) if arr.ndim == 1 else arr
    if arr.ndim != 2 or arr.shape[1] != rows:
        raise ValidationError(
            f"x_init targets must have {rows} entries per coefficient"
        )
    return arr


def _window_rows(target, rows: int, name: str) -> np.ndarray:
    if hasattr(target, "coefficients"):
        # PceTrajectory layout (time, J, n)
        arr = np.asarray(target.coefficients).transpose(1, 0, 2)
    else:
        arr = np.asarray(target, dtype=float)
        arr = arr[None] if arr.ndim <= 2 else arr
    arr = arr.reshape(arr.shape[0], -1)
    if arr.shape[1] != rows:
        raise ValidationError(
            f"{name} targets have {arr.shape[1]} entries per coefficient, "
            f"expected {rows}"
        )
    return arr


def solve_coefficient_behavior(
    H_x: HankelMatrix,
    H_u: HankelMatrix,
    H_w: HankelMatrix,
    target_x_init,
    target_u_coeffs,
    target_w_coeffs,
    *,
    tol: float = RESIDUAL_TOL,
) -> BehaviorSolution:
    """Least-norm g^j with [H_x(init); H_u; H_w] g^j = [x_init^j; u^j; w^j].

    Targets are given per coefficient j: ``target_x_init`` as (J, n_x),
    ``target_u_coeffs`` as (J, t, n_u) or a ``PceTrajectory`` (t, J, n_u), and
    likewise for w. A single realization is the case J = 1.
    """
    same_columns = H_x.columns == H_u.columns == H_w.columns
    if not (same_columns and H_x.depth == H_u.depth == H_w.depth):
        raise ValidationError("Hankel matrices must share depth and column count")
    t = H_x.depth
    x_init = _initial_rows(target_x_init, H_x.n_z)
    u = _window_rows(target_u_coeffs, t * H_u.n_z, "u")
    w = _window_rows(target_w_coeffs, t * H_w.n_z, "w")
    if not (x_init.shape[0] == u.shape[0] == w.shape[0]):
        raise ValidationError("targets must carry the same number of coefficients")

    system = np.vstack([H_x.block_rows(0, 1), H_u.matrix, H_w.matrix])
    rhs = np.hstack([x_init, u, w])
    g = rhs @ linalg.pinv(system).T
    residual = float(np.max(np.linalg.norm(g @ system.T - rhs, axis=1)))
    scale = 1.0 + float(np.max(np.linalg.norm(rhs, axis=1)))
    if residual > tol * scale:
        raise InfeasibleSystemError(
            "fundamental-lemma system has no exact solution; "
            "the data may not be persistently exciting or the targets are inconsistent",
            residual=residual,
            details={"tolerance": tol * scale},
        )
    x = (g @ H_x.matrix.T).reshape(g.shape[0], t, H_x.n_z)
    return BehaviorSolution(g, x, residual)


def _matrix(h) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(h, "matrix", h), dtype=float))


def column_space_equal(H_a, H_b) -> bool:
    a, b = _matrix(H_a), _matrix(H_b)
    if a.shape[0] != b.shape[0]:
        raise ValidationError(
            "column spaces can only be compared for equal row counts",
            details={"rows_a": a.shape[0], "rows_b": b.shape[0]},
        )
    rank_a = linalg.numerical_rank(a)
    rank_b = linalg.numerical_rank(b)
    rank_ab = linalg.numerical_rank(np.hstack([a, b]))
    return rank_a == rank_b == rank_ab


def galerkin_stack(hankel_coeffs, target_coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Project ``sum_j H^j phi^j g = sum_j c^j phi^j`` onto every basis function.

    ``hankel_coeffs`` is (J, rows, cols) and ``target_coeffs`` (J, rows); with a
    deterministic g the projection onto phi^j leaves ``H^j g = c^j``, stacked by j.
    """
    H = np.asarray(hankel_coeffs, dtype=float)
    c = np.asarray(target_coeffs, dtype=float)
    if H.ndim != 3 or c.shape != H.shape[:2]:
        raise ValidationError(
            "Galerkin stack expects (J, rows, cols) matrices and (J, rows) targets"
        )
    return H.reshape(-1, H.shape[2]), c.reshape(-1)


# Scalar X+ = X + U with three past samples over the basis {phi^0, phi^1}.
# Rows per coefficient j: X_0..X_2 then U_0..U_2.
_COUNTEREXAMPLE_PAST = np.array(
    [
        [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0]],
        [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0]],
    ]
)
_COUNTEREXAMPLE_TARGET = np.array([[0.0, 0.0], [1.0, 1.0]])


def galerkin_counterexample_system() -> tuple[np.ndarray, np.ndarray]:
    return galerkin_stack(_COUNTEREXAMPLE_PAST, _COUNTEREXAMPLE_TARGET)


def galerkin_counterexample_ranks() -> tuple[int, int]:
    """Ranks of M and [M | c] for a depth-1 random-variable Hankel system.

    The PCE coefficients of the input are persistently exciting, yet the
    projected system M g = c has no solution.
    """
    M, c = galerkin_counterexample_system()
    return linalg.numerical_rank(M), linalg.numerical_rank(np.column_stack([M, c]))

"""Second-order cone solver client (cvxpy + Clarabel) with an independent re-check."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from ddsmpc.core.config import Settings, get_settings
from ddsmpc.core.errors import ValidationError

if TYPE_CHECKING:
    from ddsmpc.services.ocp_builder import ConicProgram

logger = logging.getLogger(__name__)


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    ITER_LIMIT = "iter_limit"
    SOLVER_ERROR = "solver_error"


_STATUS_MAP = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.OPTIMAL_INACCURATE: SolveStatus.ITER_LIMIT,
    cp.USER_LIMIT: SolveStatus.ITER_LIMIT,
    cp.INFEASIBLE: SolveStatus.PRIMAL_INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.PRIMAL_INFEASIBLE,
    cp.UNBOUNDED: SolveStatus.DUAL_INFEASIBLE,
    cp.UNBOUNDED_INACCURATE: SolveStatus.DUAL_INFEASIBLE,
}


@dataclass(frozen=True)
class SolveSettings:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_iters: int = 200
    infeasibility_tol: float = 1e-8
    recheck_tol: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("abs_tol", "rel_tol", "infeasibility_tol", "recheck_tol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"solver setting {name} must be positive")
        if self.max_iters < 1:
            raise ValidationError("solver max_iters must be at least 1")

    @classmethod
    def from_settings(cls, settings: Settings | None = None) -> SolveSettings:
        settings = settings or get_settings()
        return cls(
            abs_tol=settings.solver_abs_tol,
            rel_tol=settings.solver_rel_tol,
            max_iters=settings.solver_max_iters,
            recheck_tol=settings.solver_recheck_tol,
        )


@dataclass(frozen=True)
class RecheckReport:
    """Largest violation per constraint family, by plain arithmetic."""

    equality: float
    cone: float
    linear: float
    fixed: float

    @property
    def max_violation(self) -> float:
        return max(self.equality, self.cone, self.linear, self.fixed)


@dataclass(frozen=True)
class SolveReport:
    status: SolveStatus
    primal_residual: float | None
    dual_residual: float | None
    duality_gap: float | None
    iterations: int | None
    solve_time_ms: float
    recheck: RecheckReport | None
    certified: bool

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL and self.certified

    def summary(self) -> dict[str, Any]:
        data = asdict(self)
        data["status"] = self.status.value
        return data


def recheck(program: ConicProgram, z: np.ndarray) -> RecheckReport:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        return RecheckReport(np.inf, np.inf, np.inf, np.inf)
    eq = program.A_eq @ z - program.b_eq
    equality = float(np.max(np.abs(eq))) if eq.size else 0.0
    cone = max((soc.violation(z) for soc in program.socs), default=0.0)
    lin = program.G @ z - program.k
    linear = float(max(np.max(lin), 0.0)) if lin.size else 0.0
    fixed = (
        float(np.max(np.abs(z[program.fixed_idx] - program.fixed_val)))
        if program.fixed_idx.size
        else 0.0
    )
    return RecheckReport(equality, cone, linear, fixed)


def eliminate_fixed(program: ConicProgram):
    """Substitute fixed variables by their values; returns (program, E, e)."""
    from ddsmpc.services.ocp_builder import VariableLayout

    n = program.n
    free = np.setdiff1d(np.arange(n), program.fixed_idx)
    E = sp.identity(n, format="csc")[:, free].tocsr()
    e = np.zeros(n)
    e[program.fixed_idx] = program.fixed_val
    layout = VariableLayout.from_shapes([("free", (free.size,))])
    return program.substitute(E, e, layout), E, e


class PreparedProgram:
    """A compiled program whose equality right-hand side can change between solves."""

    def __init__(self, program: ConicProgram, settings: SolveSettings) -> None:
        self.program = program
        self.settings = settings
        self.reduced, self.E, self.e = eliminate_fixed(program)
        self._shift = program.A_eq @ self.e

        red = self.reduced
        self.y = cp.Variable(red.n)
        self.b = cp.Parameter(red.b_eq.size)
        objective = red.q @ self.y + red.const
        if red.C.shape[0]:
            objective = objective + 0.5 * cp.sum_squares(red.C @ self.y)
        constraints = []
        if red.b_eq.size:
            constraints.append(red.A_eq @ self.y == self.b)
        for soc in red.socs:
            constraints.append(
                cp.SOC(soc.g @ self.y + soc.h, soc.F @ self.y + soc.f)
            )
        if red.G.shape[0]:
            constraints.append(red.G @ self.y <= red.k)
        self.problem = cp.Problem(cp.Minimize(objective), constraints)
        logger.debug(
            "conic_program_prepared n=%d free=%d eq=%d soc=%d lin=%d",
            program.n,
            red.n,
            red.b_eq.size,
            len(red.socs),
            red.G.shape[0],
        )

    def solve(self, b_eq: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
        """Solve with ``b_eq`` (defaults to the program's own right-hand side).

        Returns the primal vector in the program's variables, fixed entries
        reinserted exactly.
        """
        b_eq = self.program.b_eq if b_eq is None else np.asarray(b_eq, dtype=float)
        if b_eq.shape != self.program.b_eq.shape:
            raise ValidationError("right-hand side has the wrong length")
        if self.b.size:
            self.b.value = b_eq - self._shift

        s = self.settings
        start_time = time.perf_counter()
        try:
            self.problem.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=s.abs_tol,
                tol_gap_rel=s.rel_tol,
                tol_feas=s.abs_tol,
                tol_infeas_abs=s.infeasibility_tol,
                tol_infeas_rel=s.infeasibility_tol,
                max_iter=s.max_iters,
            )
            status = _STATUS_MAP.get(self.problem.status, SolveStatus.SOLVER_ERROR)
        except cp.error.SolverError:
            logger.exception("conic_solve_failed n=%d", self.reduced.n)
            status = SolveStatus.SOLVER_ERROR
        duration_ms = (time.perf_counter() - start_time) * 1000

        y = self.y.value
        if y is None:
            z = np.full(self.program.n, np.nan)
        else:
            z = self.E @ y + self.e

        program = self.program.with_b_eq(b_eq)
        check = recheck(program, z)
        scale = 1.0 + (float(np.max(np.abs(b_eq))) if b_eq.size else 0.0)
        certified = check.max_violation <= s.recheck_tol * scale
        stats = self.problem.solver_stats
        extra = getattr(stats, "extra_stats", None) if stats is not None else None
        gap = None
        if extra is not None and hasattr(extra, "obj_val_dual"):
            gap = abs(float(extra.obj_val) - float(extra.obj_val_dual))
        report = SolveReport(
            status=status,
            primal_residual=_maybe_float(getattr(extra, "r_prim", None)),
            dual_residual=_maybe_float(getattr(extra, "r_dual", None)),
            duality_gap=gap,
            iterations=getattr(stats, "num_iters", None) if stats else None,
            solve_time_ms=duration_ms,
            recheck=check,
            certified=certified,
        )
        logger.info(
            "conic_solve_completed status=%s iterations=%s duration_ms=%.1f "
            "max_violation=%.2e",
            status.value,
            report.iterations,
            duration_ms,
            check.max_violation,
        )
        if status is SolveStatus.OPTIMAL and not certified:
            logger.warning(
                "conic_solve_not_certified max_violation=%.2e tol=%.1e",
                check.max_violation,
                s.recheck_tol * scale,
            )
        return z, report


def _maybe_float(value) -> float | None:
    return None if value is None else float(value)


class ConicSolver:
    """Solves ``ConicProgram`` instances to the configured tolerances."""

    def __init__(self, settings: SolveSettings | None = None) -> None:
        self.settings = settings or SolveSettings.from_settings()

    def prepare(self, program: ConicProgram) -> PreparedProgram:
        return PreparedProgram(program, self.settings)

    def solve(self, program: ConicProgram) -> tuple[np.ndarray, SolveReport]:
        return self.prepare(program).solve()

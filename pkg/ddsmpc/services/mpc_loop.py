"""Data collection with excitation retries and the receding-horizon loop."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from tenacity import (
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
)

from ddsmpc.core.errors import (
    PersistencyOfExcitationError,
    RetryExhaustedError,
    SolverError,
    ValidationError,
)
from ddsmpc.core.logging import run_id_contextvar
from ddsmpc.integrations.conic_solver import ConicSolver, SolveSettings
from ddsmpc.services.hankel import minimum_length, require_persistency
from ddsmpc.services.lti_sim import (
    DataRecord,
    InputBox,
    LtiSystem,
    NoiseSpec,
    collect_data,
    step_realization,
)
from ddsmpc.services.noise_estimation import estimate_noise_ls
from ddsmpc.services.ocp_builder import (
    OcpSolution,
    OcpSpec,
    build_reduced_data_driven,
    pin_initial_state,
    solution_from_vector,
)
from ddsmpc.services.pce_basis import JointBasis, noise_trajectory_pce

logger = logging.getLogger(__name__)


def _unwrap_retry_error(exc: RetryError) -> BaseException | None:
    return exc.last_attempt.exception()


def collect_until_pe(
    plant: LtiSystem,
    noise_spec: NoiseSpec,
    input_box: InputBox,
    T: int,
    N: int,
    rng: np.random.Generator,
    max_retries: int,
    *,
    estimation_length: int = 0,
    excitation_gain: np.ndarray | None = None,
) -> DataRecord:
    """Collect, estimate noise and re-collect until (u, w_hat) is PE of order n_x + N.

    ``estimation_length`` extra transitions precede the ``T`` Hankel samples; the
    noise estimate uses the whole record, the returned record only the last T.
    """
    order = plant.n_x + N
    required_T = minimum_length(plant.n_u + plant.n_x, order)
    if T < required_T:
        raise PersistencyOfExcitationError(
            f"T={T} is too short for excitation of order {order} "
            f"(at least {required_T} samples needed)",
            required_order=order,
            details={"T": T, "minimum_T": required_T},
        )
    if max_retries < 1:
        raise ValidationError("max_retries must be at least 1")
    noise_free = not np.any(noise_spec.params)

    def attempt() -> DataRecord:
        record = collect_data(
            plant,
            noise_spec,
            input_box,
            estimation_length + T,
            rng,
            excitation_gain=excitation_gain,
        )
        if noise_free:
            w_hat = np.zeros_like(record.w_true)
        else:
            w_hat = estimate_noise_ls(record.x, record.u).w_hat
        data = DataRecord(record.x, record.u, w_hat, record.w_true).tail(T)
        report = require_persistency(data.u, None if noise_free else data.w_hat, order)
        logger.info(
            "data_collected T=%d order=%d rank=%d", T, order, report.rank
        )
        return data

    retrying = Retrying(
        retry=retry_if_exception_type(PersistencyOfExcitationError),
        stop=stop_after_attempt(max_retries),
    )
    try:
        return retrying(attempt)
    except RetryError as e:
        inner = _unwrap_retry_error(e)
        rank = getattr(inner, "rank", None)
        logger.error(
            "data_collection_exhausted attempts=%d order=%d", max_retries, order
        )
        raise RetryExhaustedError(
            f"data not persistently exciting of order {order} after "
            f"{max_retries} attempts",
            required_order=order,
            rank=rank,
            required_rank=getattr(inner, "required_rank", None),
            details={"attempts": max_retries},
        ) from e


@dataclass
class ClosedLoopRecord:
    """Closed-loop trajectory; x has one more row than u, w and stage_cost."""

    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    stage_cost: np.ndarray
    predicted_x_mean: np.ndarray
    reports: list[dict[str, Any]] = field(default_factory=list)
    aborted: bool = False

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    def raise_for_status(self) -> None:
        if self.aborted:
            last = self.reports[-1] if self.reports else None
            raise SolverError(
                f"closed loop aborted at step {self.steps}",
                report=last,
                details={"step": self.steps, "status": (last or {}).get("status")},
            )


def stage_cost(x: np.ndarray, u: np.ndarray, Q: np.ndarray, R: np.ndarray) -> float:
    return 0.5 * float(x @ Q @ x + u @ R @ u)


class StochasticMpcController:
    """Data-driven stochastic MPC with exact state feedback.

    The reduced program is compiled once; each step only rewrites the
    mean-coefficient initial-state rows of the equality right-hand side.
    """

    def __init__(
        self,
        data: DataRecord,
        spec: OcpSpec,
        basis: JointBasis,
        noise_spec: NoiseSpec,
        solver: ConicSolver | None = None,
    ) -> None:
        if basis.L_x != 0:
            raise ValidationError(
                "closed-loop basis must not carry an initial-state germ",
                details={"L_x": basis.L_x},
            )
        self.spec = spec
        self.basis = basis
        self.solver = solver or ConicSolver()
        w_coeffs = noise_trajectory_pce(noise_spec.germ(), basis)
        x_zero = pin_initial_state(basis, np.zeros(spec.n_x))
        self.program = build_reduced_data_driven(data, spec, basis, x_zero, w_coeffs)
        self.prepared = self.solver.prepare(self.program)
        self._init_rows = self.program.rows("x_init", 0)
        layout = self.program.layout
        self._u_index = [layout.index("u", 0, 0, c) for c in range(spec.n_u)]

    def solve(self, x_k) -> tuple[np.ndarray, OcpSolution]:
        b_eq = self.program.b_eq.copy()
        b_eq[self._init_rows] = np.asarray(x_k, dtype=float).reshape(-1)
        z, report = self.prepared.solve(b_eq)
        return z, solution_from_vector(self.program, z, self.basis, report)

    def control(self, x_k) -> tuple[np.ndarray, OcpSolution]:
        """First mean input u^0_{k|k}, read directly from the solution vector."""
        z, solution = self.solve(x_k)
        return z[self._u_index], solution


def run_mpc(
    plant: LtiSystem,
    data: DataRecord,
    spec: OcpSpec,
    basis: JointBasis,
    steps: int,
    rng: np.random.Generator,
    *,
    noise_spec: NoiseSpec,
    x_init,
    controller: StochasticMpcController | None = None,
    solver: ConicSolver | None = None,
) -> ClosedLoopRecord:
    """Closed loop for ``steps`` steps; stops early on the first uncertified solve."""
    if steps < 1:
        raise ValidationError("steps must be at least 1")
    controller = controller or StochasticMpcController(
        data, spec, basis, noise_spec, solver
    )
    n_x, n_u, N = plant.n_x, plant.n_u, spec.N
    x = np.zeros((steps + 1, n_x))
    u = np.zeros((steps, n_u))
    w = np.zeros((steps, n_x))
    cost = np.zeros(steps)
    predicted = np.zeros((steps, N, n_x))
    x[0] = np.asarray(x_init, dtype=float).reshape(-1)
    reports: list[dict[str, Any]] = []

    for k in range(steps):
        u_k, solution = controller.control(x[k])
        reports.append(solution.report.summary())
        if not solution.report.ok:
            logger.error(
                "mpc_step_failed step=%d status=%s", k, solution.report.status.value
            )
            return ClosedLoopRecord(
                x[: k + 1], u[:k], w[:k], cost[:k], predicted[:k], reports, aborted=True
            )
        u[k] = u_k
        predicted[k] = solution.x_coeffs.coefficients[:, 0, :]
        w[k] = noise_spec.sample(rng, 1)[0]
        cost[k] = stage_cost(x[k], u[k], spec.Q, spec.R)
        x[k + 1] = step_realization(plant, x[k], u[k], w[k])
        logger.debug("mpc_step step=%d cost=%.6g", k, cost[k])

    return ClosedLoopRecord(x, u, w, cost, predicted, reports)


@dataclass(frozen=True)
class PerformanceSummary:
    total: float
    per_step: np.ndarray


def evaluate_performance(record: ClosedLoopRecord, Q, R) -> PerformanceSummary:
    if record.steps == 0:
        raise ValidationError("closed-loop record is empty")
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    per_step = np.array(
        [stage_cost(record.x[k], record.u[k], Q, R) for k in range(record.steps)]
    )
    return PerformanceSummary(float(per_step.sum()), per_step)


@dataclass(frozen=True)
class Histogram:
    step: int
    edges: np.ndarray
    density: np.ndarray

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


def histogram_export(
    records: list[ClosedLoopRecord], component: int, timesteps, bins: int = 30
) -> list[Histogram]:
    """Normalized histograms of x[k, component] across runs, one per timestep."""
    if not records:
        raise ValidationError("no closed-loop records to bin")
    histograms = []
    for k in timesteps:
        values = np.array([r.x[k, component] for r in records if r.x.shape[0] > k])
        if values.size == 0:
            raise ValidationError(f"no run reached step {k}")
        density, edges = np.histogram(values, bins=bins, density=True)
        histograms.append(Histogram(int(k), edges, density))
    return histograms


@dataclass(frozen=True)
class CostComparison:
    """Per-run relative cost gaps; ``mean_gap`` is signed and may cancel."""

    relative_gaps: np.ndarray
    mean_gap: float
    mean_abs_gap: float


def compare_closed_loop(
    records: list[ClosedLoopRecord], baseline: list[ClosedLoopRecord], Q, R
) -> CostComparison:
    """Relative realized-cost gap of each run against its baseline run."""
    if len(records) != len(baseline) or not records:
        raise ValidationError("runs must be paired one-to-one and nonempty")
    gaps = []
    for record, base in zip(records, baseline):
        cost = evaluate_performance(record, Q, R).total
        ref = evaluate_performance(base, Q, R).total
        gaps.append((cost - ref) / ref if ref else 0.0)
    gaps_arr = np.asarray(gaps)
    return CostComparison(
        gaps_arr, float(np.mean(gaps_arr)), float(np.mean(np.abs(gaps_arr)))
    )


@dataclass(frozen=True, eq=False)
class MonteCarloJob:
    """Everything a worker needs to run closed loops from independent seeds."""

    plant: LtiSystem
    data: DataRecord
    spec: OcpSpec
    basis: JointBasis
    noise_spec: NoiseSpec
    x_init: np.ndarray
    steps: int
    solve_settings: SolveSettings
    label: str = "run"


def _run_chunk(
    job: MonteCarloJob, chunk: list[tuple[int, np.random.SeedSequence]]
) -> list[tuple[int, ClosedLoopRecord]]:
    controller = StochasticMpcController(
        job.data, job.spec, job.basis, job.noise_spec, ConicSolver(job.solve_settings)
    )
    results = []
    for index, seed in chunk:
        token = run_id_contextvar.set(f"{job.label}-{index}")
        try:
            record = run_mpc(
                job.plant,
                job.data,
                job.spec,
                job.basis,
                job.steps,
                np.random.default_rng(seed),
                noise_spec=job.noise_spec,
                x_init=job.x_init,
                controller=controller,
            )
        finally:
            run_id_contextvar.reset(token)
        results.append((index, record))
    return results


def run_monte_carlo(
    job: MonteCarloJob, runs: int, seed: int, max_workers: int = 1
) -> list[ClosedLoopRecord]:
    """Run ``runs`` closed loops; run i uses the i-th child of SeedSequence(seed).

    Results are ordered by run index and independent of ``max_workers``.
    """
    if runs < 1:
        raise ValidationError("runs must be at least 1")
    children = np.random.SeedSequence(seed).spawn(runs)
    indexed = list(enumerate(children))
    workers = max(1, min(max_workers, runs))
    chunks = [indexed[w::workers] for w in range(workers)]
    logger.info(
        "monte_carlo_started label=%s runs=%d workers=%d", job.label, runs, workers
    )
    if workers == 1:
        results = _run_chunk(job, indexed)
    else:
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [job] * workers, chunks):
                results.extend(part)
    results.sort(key=lambda item: item[0])
    return [record for _, record in results]

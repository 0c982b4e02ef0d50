"""Scenario-level pipelines: data collection, open-loop comparison, closed-loop runs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ddsmpc.core.config import Settings, get_settings
from ddsmpc.core.scenario import BoxConfig, ScenarioConfig
from ddsmpc.integrations.conic_solver import ConicSolver, SolveSettings
from ddsmpc.services.lti_sim import (
    DataRecord,
    InputBox,
    LtiSystem,
    NoiseSpec,
    lqr_gain,
)
from ddsmpc.services.mpc_loop import (
    ClosedLoopRecord,
    CostComparison,
    MonteCarloJob,
    collect_until_pe,
    compare_closed_loop,
    run_monte_carlo,
)
from ddsmpc.services.ocp_builder import (
    BoxConstraint,
    OcpSolution,
    OcpSpec,
    build_model_based,
    build_reduced_data_driven,
    pin_initial_state,
    solution_from_vector,
)
from ddsmpc.services.pce_basis import (
    GermFamily,
    JointBasis,
    PceVector,
    build_horizon_basis,
    initial_state_pce,
    noise_trajectory_pce,
)

logger = logging.getLogger(__name__)


def build_system(cfg: ScenarioConfig) -> LtiSystem:
    return LtiSystem(np.array(cfg.system.A), np.array(cfg.system.B))


def build_noise_spec(cfg: ScenarioConfig) -> NoiseSpec:
    return NoiseSpec(cfg.noise.kind, np.array(cfg.noise.params))


def _box(box: BoxConfig | None, n: int) -> BoxConstraint:
    if box is None:
        return BoxConstraint.unbounded(n)
    return BoxConstraint(np.array(box.lower), np.array(box.upper))


def build_ocp_spec(cfg: ScenarioConfig) -> OcpSpec:
    ocp = cfg.ocp
    return OcpSpec(
        N=ocp.N,
        Q=np.array(ocp.Q),
        R=np.array(ocp.R),
        state_box=_box(ocp.state_box, cfg.system.n_x),
        input_box=_box(ocp.input_box, cfg.system.n_u),
        eps_x=ocp.eps_x,
        eps_u=ocp.eps_u,
    )


def initial_germ(cfg: ScenarioConfig) -> GermFamily | None:
    init = cfg.initial_state
    if init.kind == "uniform":
        return GermFamily.uniform(init.lower, init.upper)
    if init.kind == "gaussian":
        return GermFamily.gaussian(init.mean, init.stddev)
    return None


def build_basis(cfg: ScenarioConfig, *, closed_loop: bool = False) -> JointBasis:
    """Horizon basis; closed loops pin the measured state and carry no x0 germ."""
    germ = None if closed_loop else initial_germ(cfg)
    return build_horizon_basis(germ, build_noise_spec(cfg).germ(), cfg.ocp.N)


def initial_state_coefficients(cfg: ScenarioConfig, basis: JointBasis) -> PceVector:
    germ = initial_germ(cfg)
    if germ is None or basis.L_x == 0:
        return pin_initial_state(basis, np.array(cfg.initial_state.center))
    return initial_state_pce(germ, basis)


def excitation_gain(cfg: ScenarioConfig, system: LtiSystem) -> np.ndarray | None:
    if cfg.data.excitation == "none":
        return None
    return lqr_gain(system)


def collect(
    cfg: ScenarioConfig,
    *,
    settings: Settings | None = None,
    T: int | None = None,
    seed: int | None = None,
) -> DataRecord:
    settings = settings or get_settings()
    system = build_system(cfg)
    rng = np.random.default_rng(cfg.data.seed if seed is None else seed)
    box = cfg.data.input_box
    return collect_until_pe(
        system,
        build_noise_spec(cfg),
        InputBox(np.array(box.lower), np.array(box.upper)),
        T or cfg.data.T,
        cfg.ocp.N,
        rng,
        cfg.data.max_retries or settings.pe_max_retries,
        estimation_length=cfg.data.estimation_length,
        excitation_gain=excitation_gain(cfg, system),
    )


def _solve(solver: ConicSolver, program, basis: JointBasis) -> OcpSolution:
    z, report = solver.solve(program)
    return solution_from_vector(program, z, basis, report)


def solve_model_based(cfg: ScenarioConfig, solver: ConicSolver) -> OcpSolution:
    basis = build_basis(cfg)
    program = build_model_based(
        build_system(cfg),
        build_ocp_spec(cfg),
        basis,
        initial_state_coefficients(cfg, basis),
        noise_trajectory_pce(build_noise_spec(cfg).germ(), basis),
    )
    return _solve(solver, program, basis)


def solve_data_driven(
    cfg: ScenarioConfig, data: DataRecord, solver: ConicSolver
) -> OcpSolution:
    basis = build_basis(cfg)
    program = build_reduced_data_driven(
        data,
        build_ocp_spec(cfg),
        basis,
        initial_state_coefficients(cfg, basis),
        noise_trajectory_pce(build_noise_spec(cfg).germ(), basis),
    )
    return _solve(solver, program, basis)


@dataclass(frozen=True)
class SolutionGap:
    """Largest differences of mean and standard deviation over the horizon."""

    mean: float
    std: float
    objective_rel: float


def solution_gap(a: OcpSolution, b: OcpSolution) -> SolutionGap:
    worst_mean, worst_std = 0.0, 0.0
    for ta, tb in ((a.x_coeffs, b.x_coeffs), (a.u_coeffs, b.u_coeffs)):
        mean_a, var_a = ta.moments()
        mean_b, var_b = tb.moments()
        worst_mean = max(worst_mean, float(np.max(np.abs(mean_a - mean_b))))
        worst_std = max(
            worst_std, float(np.max(np.abs(np.sqrt(var_a) - np.sqrt(var_b))))
        )
    ref = abs(b.objective_value)
    rel = abs(a.objective_value - b.objective_value) / ref if ref else 0.0
    return SolutionGap(worst_mean, worst_std, rel)


@dataclass(frozen=True)
class OpenLoopComparison:
    estimated: OcpSolution
    exact: OcpSolution
    model_based: OcpSolution

    @property
    def exact_vs_model(self) -> SolutionGap:
        return solution_gap(self.exact, self.model_based)

    @property
    def estimated_vs_exact(self) -> SolutionGap:
        return solution_gap(self.estimated, self.exact)


def compare_open_loop(
    cfg: ScenarioConfig, data: DataRecord, solver: ConicSolver
) -> OpenLoopComparison:
    """Estimated-noise and exact-noise data-driven solutions against the model."""
    comparison = OpenLoopComparison(
        estimated=solve_data_driven(cfg, data, solver),
        exact=solve_data_driven(cfg, data.with_exact_noise(), solver),
        model_based=solve_model_based(cfg, solver),
    )
    logger.info(
        "open_loop_compared scenario=%s exact_vs_model_mean=%.2e "
        "estimated_vs_exact_objective=%.2e",
        cfg.name,
        comparison.exact_vs_model.mean,
        comparison.estimated_vs_exact.objective_rel,
    )
    return comparison


def closed_loop_job(
    cfg: ScenarioConfig,
    data: DataRecord,
    *,
    steps: int | None = None,
    solve_settings: SolveSettings | None = None,
    label: str = "run",
) -> MonteCarloJob:
    return MonteCarloJob(
        plant=build_system(cfg),
        data=data,
        spec=build_ocp_spec(cfg),
        basis=build_basis(cfg, closed_loop=True),
        noise_spec=build_noise_spec(cfg),
        x_init=np.array(cfg.initial_state.center),
        steps=steps or cfg.run.steps,
        solve_settings=solve_settings or SolveSettings.from_settings(),
        label=label,
    )


def run_closed_loop(
    cfg: ScenarioConfig,
    data: DataRecord,
    *,
    runs: int | None = None,
    seed: int | None = None,
    steps: int | None = None,
    settings: Settings | None = None,
    label: str = "run",
) -> list[ClosedLoopRecord]:
    settings = settings or get_settings()
    job = closed_loop_job(
        cfg,
        data,
        steps=steps,
        solve_settings=SolveSettings.from_settings(settings),
        label=label,
    )
    return run_monte_carlo(
        job,
        runs or cfg.run.monte_carlo_runs,
        cfg.data.seed if seed is None else seed,
        settings.max_workers,
    )


def compare_closed_loop_noise(
    cfg: ScenarioConfig,
    data: DataRecord,
    *,
    runs: int | None = None,
    seed: int | None = None,
    steps: int | None = None,
    settings: Settings | None = None,
) -> tuple[list[ClosedLoopRecord], list[ClosedLoopRecord], CostComparison]:
    """Paired runs (same noise sequences) with estimated vs exact noise data."""
    kwargs = dict(runs=runs, seed=seed, steps=steps, settings=settings)
    estimated = run_closed_loop(cfg, data, label="estimated", **kwargs)
    exact = run_closed_loop(cfg, data.with_exact_noise(), label="exact", **kwargs)
    Q, R = np.array(cfg.ocp.Q), np.array(cfg.ocp.R)
    return estimated, exact, compare_closed_loop(estimated, exact, Q, R)

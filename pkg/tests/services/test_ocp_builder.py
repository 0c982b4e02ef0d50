import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from ddsmpc.core.errors import (
    InfeasibleSystemError,
    PersistencyOfExcitationError,
    ValidationError,
)
from ddsmpc.integrations.conic_solver import ConicSolver
from ddsmpc.services import experiments
from ddsmpc.services.hankel import minimum_length
from ddsmpc.services.lti_sim import (
    DataRecord,
    InputBox,
    LtiSystem,
    NoiseSpec,
    collect_data,
)
from ddsmpc.services.ocp_builder import (
    CONIC_FORMAT,
    BoxConstraint,
    OcpSpec,
    VariableLayout,
    apply_nullspace_reduction,
    batch_lq_oracle,
    build_data_driven,
    build_model_based,
    build_reduced_data_driven,
    causality_zero_indices,
    objective_from_moments,
    pin_initial_state,
    sigma,
    solution_from_vector,
)
from ddsmpc.services.pce_basis import (
    GermFamily,
    build_horizon_basis,
    evaluate_basis,
    noise_trajectory_pce,
    sample_germ,
)


@pytest.fixture(scope="module")
def solver():
    return ConicSolver()


@pytest.mark.parametrize(
    "eps, expected", [(0.2, 3.0), (1.0, 1.0), (0.1, math.sqrt(19.0))]
)
def test_sigma(eps, expected):
    assert sigma(eps) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("eps", [0.0, -0.1, 1.5])
def test_sigma_rejects_out_of_range(eps):
    with pytest.raises(ValidationError):
        sigma(eps)


def test_causality_zero_indices():
    assert causality_zero_indices(1, 1, 3, 0) == {2, 3, 4}
    assert causality_zero_indices(1, 1, 3, 2) == {4}
    assert causality_zero_indices(0, 2, 2, 1) == frozenset()
    with pytest.raises(ValidationError):
        causality_zero_indices(1, 1, 3, 3)


def test_ocp_spec_validation():
    with pytest.raises(ValidationError):
        OcpSpec(N=3, Q=np.diag([1.0, -1.0]), R=np.eye(1))
    with pytest.raises(ValidationError):
        OcpSpec(N=0, Q=np.eye(1), R=np.eye(1))
    with pytest.raises(ValidationError):
        OcpSpec(N=2, Q=np.eye(1), R=np.eye(1), state_box=BoxConstraint.unbounded(2))
    with pytest.raises(ValidationError):
        BoxConstraint([1.0], [0.0])


def test_layout_index_is_role_major():
    layout = VariableLayout.from_shapes([("x", (3, 4, 2)), ("u", (3, 4, 1))])
    j, i, c = 2, 1, 1
    assert layout.index("x", j, i, c) == (j * 4 + i) * 2 + c
    assert layout.index("u", 0, 0, 0) == 24
    assert layout.size == 36


def _unconstrained(system: LtiSystem, N: int):
    noise = GermFamily.gaussian(np.zeros(system.n_x), np.full(system.n_x, 0.3))
    basis = build_horizon_basis(None, noise, N)
    spec = OcpSpec(N=N, Q=np.eye(system.n_x), R=np.eye(system.n_u))
    x0 = pin_initial_state(basis, np.ones(system.n_x))
    return spec, basis, x0, noise_trajectory_pce(noise, basis)


def test_model_based_mean_matches_batch_oracle(scalar_system, solver):
    spec, basis, x0, w = _unconstrained(scalar_system, 6)
    program = build_model_based(scalar_system, spec, basis, x0, w)
    z, report = solver.solve(program)
    assert report.ok
    solution = solution_from_vector(program, z, basis, report)
    x_oracle, u_oracle, _ = batch_lq_oracle(
        scalar_system, spec.Q, spec.R, np.ones(1), 6
    )
    mean_x, _ = solution.x_coeffs.moments()
    mean_u, _ = solution.u_coeffs.moments()
    np.testing.assert_allclose(mean_x, x_oracle, atol=1e-6)
    np.testing.assert_allclose(mean_u, u_oracle, atol=1e-6)


def test_objective_equals_expected_cost(scalar_system, solver):
    spec, basis, x0, w = _unconstrained(scalar_system, 4)
    program = build_model_based(scalar_system, spec, basis, x0, w)
    z, report = solver.solve(program)
    solution = solution_from_vector(program, z, basis, report)
    assert solution.objective_value == pytest.approx(
        objective_from_moments(solution, spec.Q, spec.R), rel=1e-6
    )


def test_causal_inputs_have_fixed_zeros(scalar_system, solver):
    spec, basis, x0, w = _unconstrained(scalar_system, 4)
    program = build_model_based(scalar_system, spec, basis, x0, w)
    z, report = solver.solve(program)
    solution = solution_from_vector(program, z, basis, report)
    for i in range(4):
        for j in causality_zero_indices(basis.L_x, basis.L_w, 4, i):
            assert solution.u_coeffs.coefficients[i, j, 0] == 0.0


def test_to_json_is_versioned_and_deterministic(scalar_system):
    spec, basis, x0, w = _unconstrained(scalar_system, 3)
    a = build_model_based(scalar_system, spec, basis, x0, w).to_json()
    b = build_model_based(scalar_system, spec, basis, x0, w).to_json()
    assert a == b
    payload = json.loads(a)
    assert payload["format"] == CONIC_FORMAT
    assert payload["kind"] == "model_based"


def test_horizon_must_match_basis(scalar_system):
    spec, basis, x0, w = _unconstrained(scalar_system, 3)
    longer = OcpSpec(N=4, Q=spec.Q, R=spec.R)
    with pytest.raises(ValidationError):
        build_model_based(scalar_system, longer, basis, x0, w)


def test_data_driven_with_exact_noise_matches_model(
    small_scalar_cfg, small_scalar_data, solver
):
    exact = experiments.solve_data_driven(
        small_scalar_cfg, small_scalar_data.with_exact_noise(), solver
    )
    model = experiments.solve_model_based(small_scalar_cfg, solver)
    assert exact.report.ok and model.report.ok
    gap = experiments.solution_gap(exact, model)
    assert gap.mean <= 1e-5
    assert gap.std <= 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_random_systems_data_driven_matches_model(seed, make_stable_system, solver):
    rng = np.random.default_rng(seed)
    n_x = int(rng.integers(1, 4))
    n_u = int(rng.integers(1, 3))
    N = int(rng.integers(2, 9))
    system = make_stable_system(rng, n_x, n_u)
    T = 2 * minimum_length(n_u + n_x, n_x + N) + 20
    data = collect_data(
        system,
        NoiseSpec.gaussian_diag(np.full(n_x, 0.1)),
        InputBox.symmetric(1.0, n_u),
        T,
        rng,
    )
    noise = GermFamily.gaussian(np.zeros(n_x), np.full(n_x, 0.3))
    basis = build_horizon_basis(None, noise, N)
    spec = OcpSpec(N=N, Q=np.eye(n_x), R=np.eye(n_u))
    x0 = pin_initial_state(basis, rng.standard_normal(n_x))
    w = noise_trajectory_pce(noise, basis)

    solutions = []
    for program in (
        build_model_based(system, spec, basis, x0, w),
        build_reduced_data_driven(data, spec, basis, x0, w),
    ):
        z, report = solver.solve(program)
        assert report.ok
        solutions.append(solution_from_vector(program, z, basis, report))
    gap = experiments.solution_gap(*solutions)
    assert gap.mean <= 1e-5
    assert gap.std <= 1e-5


def test_model_based_moments_match_monte_carlo(small_scalar_cfg, solver):
    cfg = small_scalar_cfg
    system = experiments.build_system(cfg)
    solution = experiments.solve_model_based(cfg, solver)
    assert solution.report.ok
    basis = solution.x_coeffs.basis
    x0 = experiments.initial_state_coefficients(cfg, basis)
    w = noise_trajectory_pce(experiments.build_noise_spec(cfg).germ(), basis)

    n = 100_000
    phi = evaluate_basis(basis, sample_germ(basis, np.random.default_rng(7), n))
    u_s = np.einsum("sj,tjn->stn", phi, solution.u_coeffs.coefficients)
    w_s = np.einsum("sj,tjn->stn", phi, w.coefficients)
    x = np.empty((n, cfg.ocp.N, system.n_x))
    x[:, 0] = phi @ x0.coefficients
    for i in range(cfg.ocp.N - 1):
        x[:, i + 1] = x[:, i] @ system.A.T + u_s[:, i] @ system.B.T + w_s[:, i]

    mean, var = solution.x_coeffs.moments()
    sample_mean = x.mean(axis=0)
    sample_var = x.var(axis=0)
    central4 = np.mean((x - sample_mean) ** 4, axis=0)
    se_mean = np.sqrt(sample_var / n)
    se_var = np.sqrt((central4 - sample_var**2) / n)
    assert mean.shape == sample_mean.shape
    assert np.all(np.abs(sample_mean - mean) <= 4 * se_mean)
    assert np.all(np.abs(sample_var - var) <= 4 * se_var)


def test_chance_constraints_hold_in_moments(
    small_scalar_cfg, small_scalar_data, solver
):
    cfg = small_scalar_cfg
    solution = experiments.solve_data_driven(cfg, small_scalar_data, solver)
    s = sigma(cfg.ocp.eps_x)
    mean, var = solution.x_coeffs.moments()
    upper = small_scalar_cfg.ocp.state_box.upper[0]
    lower = small_scalar_cfg.ocp.state_box.lower[0]
    std = np.sqrt(var[1:, 0])
    assert np.all(mean[1:, 0] + s * std <= upper + 1e-6)
    assert np.all(mean[1:, 0] - s * std >= lower - 1e-6)


def _full_program(cfg, data):
    basis = experiments.build_basis(cfg)
    x0 = experiments.initial_state_coefficients(cfg, basis)
    w = noise_trajectory_pce(experiments.build_noise_spec(cfg).germ(), basis)
    spec = experiments.build_ocp_spec(cfg)
    return build_data_driven(data, spec, basis, x0, w), basis, w


def test_nullspace_reduction_dimension_and_optimum(
    small_scalar_cfg, small_scalar_data, solver
):
    full, basis, w = _full_program(small_scalar_cfg, small_scalar_data)
    reduced = apply_nullspace_reduction(full, full.meta["hankel"].H_w, w)
    T, N, n_x = small_scalar_data.T, small_scalar_cfg.ocp.N, small_scalar_data.n_x
    assert reduced.layout.block("h").shape == (basis.total_terms, T - N * (n_x + 1) + 1)
    assert "w" not in set(reduced.row_tags)

    z_red, report_red = solver.solve(reduced)
    lifted = reduced.lift_vector(z_red)
    rows = full.rows("w")
    residual = np.max(np.abs(full.A_eq[rows] @ lifted - full.b_eq[rows]))
    assert residual <= 1e-8

    z_full, report_full = solver.solve(full)
    a = solution_from_vector(reduced, z_red, basis, report_red)
    b = solution_from_vector(full, z_full, basis, report_full)
    assert a.objective_value == pytest.approx(b.objective_value, rel=1e-6, abs=1e-8)


def test_reduction_requires_full_row_rank_noise_hankel(
    small_scalar_cfg, small_scalar_data
):
    full, _, w = _full_program(small_scalar_cfg, small_scalar_data)
    H = full.meta["hankel"].H_w.matrix.copy()
    H[1] = H[0]
    with pytest.raises(PersistencyOfExcitationError):
        apply_nullspace_reduction(full, H, w)


def test_substitution_checks_dropped_rows(small_scalar_cfg, small_scalar_data):
    full, _, _ = _full_program(small_scalar_cfg, small_scalar_data)
    identity = sp.identity(full.n, format="csr")
    with pytest.raises(InfeasibleSystemError):
        full.substitute(identity, np.zeros(full.n), full.layout, drop_tags=("w",))


def test_short_data_fails_persistency(small_scalar_cfg, small_scalar_data):
    short = small_scalar_data.tail(12)
    with pytest.raises(PersistencyOfExcitationError) as exc_info:
        _full_program(small_scalar_cfg, short)
    assert exc_info.value.required_order == 1 + small_scalar_cfg.ocp.N


def test_noise_free_data_rejects_noise_targets(small_scalar_cfg, small_scalar_data):
    d = small_scalar_data
    clean = DataRecord(d.x, d.u, np.zeros_like(d.w_hat))
    with pytest.raises(ValidationError):
        _full_program(small_scalar_cfg, clean)

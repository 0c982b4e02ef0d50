import numpy as np
import pytest

from ddsmpc.core.errors import (
    PersistencyOfExcitationError,
    RetryExhaustedError,
    SolverError,
    ValidationError,
)
from ddsmpc.services import experiments
from ddsmpc.services.lti_sim import InputBox, NoiseSpec
from ddsmpc.services.mpc_loop import (
    ClosedLoopRecord,
    StochasticMpcController,
    collect_until_pe,
    compare_closed_loop,
    evaluate_performance,
    histogram_export,
    run_monte_carlo,
    run_mpc,
)
from ddsmpc.services.ocp_builder import OcpSpec, batch_lq_oracle


def test_short_record_names_required_order(scalar_system, scalar_noise, rng):
    with pytest.raises(PersistencyOfExcitationError) as exc_info:
        collect_until_pe(
            scalar_system, scalar_noise, InputBox.symmetric(1.0), 10, 25, rng, 5
        )
    assert exc_info.value.required_order == 26
    assert exc_info.value.details["minimum_T"] == 77


def test_retries_exhausted_without_excitation(scalar_system, rng):
    with pytest.raises(RetryExhaustedError) as exc_info:
        collect_until_pe(
            scalar_system,
            NoiseSpec.gaussian_diag([0.0]),
            InputBox([0.0], [0.0]),
            30,
            3,
            rng,
            3,
        )
    assert exc_info.value.details["attempts"] == 3
    assert exc_info.value.required_order == 4


def test_collected_record_is_tail_of_long_record(small_scalar_data, small_scalar_cfg):
    assert small_scalar_data.T == small_scalar_cfg.data.T
    assert small_scalar_data.w_true is not None
    assert not np.allclose(small_scalar_data.w_hat, small_scalar_data.w_true)


def test_controller_rejects_initial_state_germ(small_scalar_cfg, small_scalar_data):
    with pytest.raises(ValidationError):
        StochasticMpcController(
            small_scalar_data,
            experiments.build_ocp_spec(small_scalar_cfg),
            experiments.build_basis(small_scalar_cfg),
            experiments.build_noise_spec(small_scalar_cfg),
        )


def test_run_mpc_records_closed_loop(small_scalar_cfg, small_scalar_data, rng):
    cfg = small_scalar_cfg
    record = run_mpc(
        experiments.build_system(cfg),
        small_scalar_data,
        experiments.build_ocp_spec(cfg),
        experiments.build_basis(cfg, closed_loop=True),
        4,
        rng,
        noise_spec=experiments.build_noise_spec(cfg),
        x_init=[1.0],
    )
    assert not record.aborted
    assert record.x.shape == (5, 1)
    assert record.u.shape == (4, 1)
    assert record.predicted_x_mean.shape == (4, cfg.ocp.N, 1)
    np.testing.assert_allclose(
        record.predicted_x_mean[:, 0, 0], record.x[:4, 0], atol=1e-6
    )
    assert all(r["status"] == "optimal" for r in record.reports)
    record.raise_for_status()


def test_receding_horizon_plan_matches_noise_free_plant(
    small_scalar_cfg, small_scalar_data
):
    cfg = small_scalar_cfg
    plant = experiments.build_system(cfg)
    spec = OcpSpec(N=cfg.ocp.N, Q=np.eye(1), R=np.eye(1))
    controller = StochasticMpcController(
        small_scalar_data.with_exact_noise(),
        spec,
        experiments.build_basis(cfg, closed_loop=True),
        experiments.build_noise_spec(cfg),
    )
    b_eq_before = controller.program.b_eq.copy()
    steps = 6
    record = run_mpc(
        plant,
        small_scalar_data,
        spec,
        controller.basis,
        steps,
        np.random.default_rng(0),
        noise_spec=NoiseSpec.gaussian_diag([0.0]),
        x_init=[1.0],
        controller=controller,
    )
    assert not record.aborted
    np.testing.assert_array_equal(record.w, 0.0)
    # One-step-ahead mean prediction equals the realized next state.
    np.testing.assert_allclose(
        record.predicted_x_mean[:, 1, :], record.x[1:], atol=1e-6
    )
    for k in range(steps):
        _, u_oracle, _ = batch_lq_oracle(plant, spec.Q, spec.R, record.x[k], spec.N)
        np.testing.assert_allclose(record.u[k], u_oracle[0], atol=1e-6)

    # Earlier solves leave the compiled program untouched.
    np.testing.assert_array_equal(controller.program.b_eq, b_eq_before)
    u_again, _ = controller.control(record.x[0])
    np.testing.assert_allclose(u_again, record.u[0], atol=1e-7)


def test_monte_carlo_is_reproducible_across_workers(
    small_scalar_cfg, small_scalar_data
):
    job = experiments.closed_loop_job(small_scalar_cfg, small_scalar_data, steps=3)
    serial = run_monte_carlo(job, 2, seed=7, max_workers=1)
    parallel = run_monte_carlo(job, 2, seed=7, max_workers=2)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.w, b.w)
    assert not np.array_equal(serial[0].w, serial[1].w)


def _record(x, u):
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    u = np.asarray(u, dtype=float).reshape(-1, 1)
    steps = u.shape[0]
    return ClosedLoopRecord(
        x, u, np.zeros((steps, 1)), np.zeros(steps), np.zeros((steps, 2, 1))
    )


def test_evaluate_performance():
    summary = evaluate_performance(_record([1.0, 2.0, 0.0], [1.0, -1.0]), 2.0, 1.0)
    # 1/2 (2*1 + 1) + 1/2 (2*4 + 1)
    assert summary.total == pytest.approx(6.0)
    with pytest.raises(ValidationError):
        evaluate_performance(_record([1.0], []), 1.0, 1.0)


def test_histograms_are_normalized():
    rng = np.random.default_rng(0)
    records = [_record(rng.standard_normal(4), np.zeros(3)) for _ in range(200)]
    histograms = histogram_export(records, 0, [1, 3], bins=10)
    assert [h.step for h in histograms] == [1, 3]
    for h in histograms:
        assert h.edges.size == 11
        assert h.mass == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        histogram_export(records, 0, [10])


def test_compare_closed_loop_identical_runs():
    runs = [_record([1.0, 0.5], [0.2]), _record([2.0, 1.0], [0.1])]
    comparison = compare_closed_loop(runs, runs, 1.0, 1.0)
    np.testing.assert_allclose(comparison.relative_gaps, 0.0)
    assert comparison.mean_gap == comparison.mean_abs_gap == 0.0
    with pytest.raises(ValidationError):
        compare_closed_loop(runs, runs[:1], 1.0, 1.0)


def test_compare_closed_loop_reports_absolute_gap():
    baseline = [_record([1.0, 0.0], [1.0]), _record([1.0, 0.0], [1.0])]
    runs = [
        _record([1.0, 0.0], [np.sqrt(1.2)]),
        _record([1.0, 0.0], [np.sqrt(0.8)]),
    ]
    comparison = compare_closed_loop(runs, baseline, 1.0, 1.0)
    np.testing.assert_allclose(comparison.relative_gaps, [0.1, -0.1])
    assert comparison.mean_gap == pytest.approx(0.0, abs=1e-12)
    assert comparison.mean_abs_gap == pytest.approx(0.1)


def test_aborted_record_raises_solver_error():
    record = _record([1.0], [])
    record.aborted = True
    record.reports.append({"status": "primal_infeasible"})
    with pytest.raises(SolverError) as exc_info:
        record.raise_for_status()
    assert exc_info.value.details["status"] == "primal_infeasible"

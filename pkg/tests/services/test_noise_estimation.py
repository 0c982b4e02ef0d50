import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import linprog

from ddsmpc.core import linalg
from ddsmpc.core.errors import PersistencyOfExcitationError, ValidationError
from ddsmpc.services.lti_sim import InputBox, NoiseSpec, collect_data, lqr_gain
from ddsmpc.services.noise_estimation import (
    CustomDensity,
    EstimationMethod,
    GaussianDensity,
    LaplaceDensity,
    UniformDensity,
    density_for,
    estimate_noise_ls,
    estimate_noise_ml,
    identified_dynamics,
)


@pytest.fixture
def record(aircraft_system, rng):
    noise = NoiseSpec.gaussian_diag([0.01, 0.01, 0.01, 4.0])
    return collect_data(
        aircraft_system,
        noise,
        InputBox.symmetric(0.5),
        300,
        rng,
        excitation_gain=lqr_gain(aircraft_system),
    )


def test_ls_estimate_is_projected_true_noise(record):
    est = estimate_noise_ls(record.x, record.u)
    S = np.vstack([record.x[:-1].T, record.u.T])
    P = linalg.row_space_projector(S)
    np.testing.assert_allclose(est.w_hat.T, record.w_true.T @ P, atol=1e-8)
    assert est.method is EstimationMethod.LEAST_SQUARES
    assert est.projector_residual <= 1e-8


def test_noise_free_data_gives_zero_estimate(scalar_system, rng):
    clean = collect_data(
        scalar_system,
        NoiseSpec.gaussian_diag([0.0]),
        InputBox.symmetric(1.0),
        80,
        rng,
        excitation_gain=lqr_gain(scalar_system),
    )
    est = estimate_noise_ls(clean.x, clean.u)
    assert np.linalg.norm(est.w_hat) <= 1e-8


def test_identified_dynamics_recover_plant(record, aircraft_system):
    est = estimate_noise_ls(record.x, record.u)
    A_hat, B_hat = identified_dynamics(record.x, record.u, record.w_true)
    np.testing.assert_allclose(A_hat, aircraft_system.A, atol=1e-8)
    np.testing.assert_allclose(B_hat, aircraft_system.B, atol=1e-8)
    A_ls, _ = identified_dynamics(record.x, record.u, est.w_hat)
    assert A_ls.shape == (4, 4)


def test_rank_deficient_data_is_rejected():
    x = np.zeros((11, 1))
    u = np.zeros((10, 1))
    with pytest.raises(PersistencyOfExcitationError) as exc_info:
        estimate_noise_ls(x, u)
    assert exc_info.value.required_order == 1


def test_gaussian_ml_equals_ls(record):
    ls = estimate_noise_ls(record.x, record.u)
    ml = estimate_noise_ml(record.x, record.u, GaussianDensity(np.ones(4)))
    np.testing.assert_allclose(ml.w_hat, ls.w_hat, atol=1e-10)
    assert ml.method is EstimationMethod.CLOSED_FORM
    assert ml.method.value == "closed_form_least_squares"
    assert not ml.fallback


def test_uniform_ml_falls_back_with_flag(record, caplog):
    with caplog.at_level("WARNING"):
        ml = estimate_noise_ml(record.x, record.u, UniformDensity(np.ones(4)))
    assert ml.fallback
    assert ml.method is EstimationMethod.LEAST_SQUARES
    assert ml.method is not EstimationMethod.MAX_LIKELIHOOD
    assert "ml_fallback" in caplog.text


def test_laplace_ml_satisfies_data_identity(scalar_system, rng):
    noise = NoiseSpec.gaussian_diag([0.25])
    data = collect_data(
        scalar_system,
        noise,
        InputBox.symmetric(1.0),
        60,
        rng,
        excitation_gain=lqr_gain(scalar_system),
    )
    ml = estimate_noise_ml(data.x, data.u, LaplaceDensity(np.array([0.5])))
    assert ml.projector_residual <= 1e-6
    assert ml.w_hat.shape == (60, 1)


def _l1_regression(x, u):
    """Least-absolute-deviation fit of x+ on (x, u) as a linear program."""
    S = np.vstack([x[:-1].T, u.T])
    x_plus = x[1:, 0]
    p, T = S.shape
    eye = np.eye(T)
    A_ub = np.block([[-S.T, -eye], [S.T, -eye]])
    b_ub = np.concatenate([-x_plus, x_plus])
    c = np.concatenate([np.zeros(p), np.ones(T)])
    bounds = [(None, None)] * p + [(0, None)] * T
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    assert res.status == 0
    theta = res.x[:p]
    return x_plus - theta @ S, res.fun


def test_laplace_ml_matches_l1_regression(scalar_system, rng):
    data = collect_data(
        scalar_system,
        NoiseSpec.gaussian_diag([0.25]),
        InputBox.symmetric(1.0),
        60,
        rng,
        excitation_gain=lqr_gain(scalar_system),
    )
    scale = 0.5
    ml = estimate_noise_ml(data.x, data.u, LaplaceDensity(np.array([scale])))
    w_lad, l1 = _l1_regression(data.x, data.u)
    assert ml.method is EstimationMethod.MAX_LIKELIHOOD
    assert np.sum(np.abs(ml.w_hat)) / scale == pytest.approx(l1 / scale, rel=1e-6)
    np.testing.assert_allclose(ml.w_hat[:, 0], w_lad, atol=1e-4)


def test_ls_estimate_tracks_true_noise_on_long_record(scalar_system, rng):
    variance = 0.25
    data = collect_data(
        scalar_system,
        NoiseSpec.gaussian_diag([variance]),
        InputBox.symmetric(1.0),
        1000,
        rng,
        excitation_gain=lqr_gain(scalar_system),
    )
    est = estimate_noise_ls(data.x, data.u)
    w_hat = est.w_hat[:, 0]
    w_true = data.w_true[:, 0]
    assert abs(np.var(w_hat) - variance) <= 0.15 * variance
    assert np.corrcoef(w_hat, w_true)[0, 1] > 0.9
    A_hat, B_hat = identified_dynamics(data.x, data.u, est.w_hat)
    np.testing.assert_allclose(A_hat, scalar_system.A, atol=0.1)
    np.testing.assert_allclose(B_hat, scalar_system.B, atol=0.1)


def test_non_convex_density_is_rejected(record):
    density = CustomDensity(nll=lambda w: -cp.sum_squares(w), name="bimodal")
    with pytest.raises(ValidationError, match="bimodal"):
        estimate_noise_ml(record.x, record.u, density)


def test_density_for_spec():
    assert isinstance(density_for(NoiseSpec.gaussian_diag([1.0])), GaussianDensity)
    assert isinstance(density_for(NoiseSpec.uniform_box([1.0])), UniformDensity)

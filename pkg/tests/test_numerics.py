import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy import integrate

from hmwm.numerics import (
    ConvergenceError,
    GaussianSpec,
    UnstableMatrixError,
    chi_square_quantile,
    is_schur,
    kalman_steady_state,
    make_rng,
    random_orthonormal,
    sample_gaussian,
    solve_discrete_lyapunov,
    spectral_radius,
)


def lyapunov_residual(A, P, Q):
    return np.linalg.norm(A @ P @ A.T - P + Q)


def test_spectral_radius_examples():
    assert spectral_radius(np.diag([0.3908, 0.6076])) == pytest.approx(0.6076, abs=1e-15)
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0)
    assert spectral_radius([[0.0, 1.0], [0.0, 0.0]]) == 0.0


def test_spectral_radius_rejects_non_square():
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


@pytest.mark.parametrize("A, margin, expected", [
    (np.diag([0.5]), 1e-6, True),
    (np.eye(2), 1e-6, False),
    (np.diag([0.3908, 0.6076]), 0.1, True),
])
def test_is_schur(A, margin, expected):
    assert is_schur(A, margin) is expected


def test_is_schur_margin_domain():
    with pytest.raises(ValueError):
        is_schur(np.eye(1) * 0.5, 0.0)
    with pytest.raises(ValueError):
        is_schur(np.ones((1, 2)), 0.1)


def test_lyapunov_scalar_and_zero():
    assert solve_discrete_lyapunov([[0.5]], [[1.0]])[0, 0] == pytest.approx(4 / 3, rel=1e-14)
    Q0 = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(solve_discrete_lyapunov(np.zeros((2, 2)), Q0), Q0)


def test_lyapunov_matches_fixed_point_iteration():
    A = np.diag([0.3908, 0.6076])
    B = np.array([[0.1299, 0.4694], [0.5688, 0.0119]])
    Q = B @ (0.1 * np.eye(2)) @ B.T
    P = np.zeros((2, 2))
    for _ in range(10_000):
        P = A @ P @ A.T + Q
    np.testing.assert_allclose(solve_discrete_lyapunov(A, Q), P, atol=1e-8)


def test_lyapunov_rejects_unstable():
    with pytest.raises(UnstableMatrixError):
        solve_discrete_lyapunov(np.eye(2) * 1.01, np.eye(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6), rho=st.floats(0.05, 0.98))
def test_lyapunov_residual_property(seed, n, rho):
    rng = make_rng(seed)
    A = rng.standard_normal((n, n))
    A *= rho / max(spectral_radius(A), 1e-12)
    G = rng.standard_normal((n, n))
    Q = G @ G.T
    P = solve_discrete_lyapunov(A, Q)
    assert lyapunov_residual(A, P, Q) <= 1e-10 * (1 + np.linalg.norm(Q))
    np.testing.assert_allclose(P, sla.solve_discrete_lyapunov(A, Q), rtol=1e-8, atol=1e-10)


def test_kalman_scalar_closed_form():
    q, r = 0.3, 0.7
    kf = kalman_steady_state([[0.0]], [[1.0]], [[q]], [[r]])
    assert kf.gain[0, 0] == pytest.approx(q / (q + r), rel=1e-12)
    assert kf.innovation_cov[0, 0] == pytest.approx(q + r, rel=1e-12)


def joseph_filter_oracle(A, C, Q, R, steps=100_000):
    """Time-varying Kalman covariance in Joseph form, run to steady state."""
    n = A.shape[0]
    P = np.eye(n)
    for _ in range(steps):
        S = C @ P @ C.T + R
        K = P @ C.T @ np.linalg.inv(S)
        I_KC = np.eye(n) - K @ C
        P = A @ (I_KC @ P @ I_KC.T + K @ R @ K.T) @ A.T + Q
    return P, P @ C.T @ np.linalg.inv(C @ P @ C.T + R)


def test_kalman_scalar_matches_recursion_oracle():
    kf = kalman_steady_state([[0.9]], [[1.0]], [[0.01]], [[0.1]])
    # frozen from the Joseph-form recursion oracle, 1e5 steps
    assert kf.error_cov[0, 0] == pytest.approx(0.027441352507368885, abs=1e-8)
    assert kf.gain[0, 0] == pytest.approx(0.2153253395971467, abs=1e-8)
    P, L = joseph_filter_oracle(np.array([[0.9]]), np.eye(1), np.array([[0.01]]), np.array([[0.1]]), 20_000)
    assert kf.gain[0, 0] == pytest.approx(L[0, 0], abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_kalman_matches_recursion_oracle_multivariate(seed):
    rng = make_rng(seed)
    n, p = 3 + seed % 4, 2
    A = rng.standard_normal((n, n))
    A *= 0.95 / spectral_radius(A)
    C = rng.standard_normal((p, n))
    G = rng.standard_normal((n, n))
    Q = 0.1 * G @ G.T + 1e-3 * np.eye(n)
    R = np.diag(rng.uniform(0.05, 0.5, p))
    kf = kalman_steady_state(A, C, Q, R)
    P, L = joseph_filter_oracle(A, C, Q, R, 20_000)
    np.testing.assert_allclose(kf.gain, L, atol=1e-8)
    np.testing.assert_allclose(kf.error_cov, P, atol=1e-8)
    np.testing.assert_allclose(kf.innovation_cov, C @ P @ C.T + R, atol=1e-8)


def test_kalman_agrees_with_scipy_dare(plant):
    kf = kalman_steady_state(plant.A, plant.C, plant.Sigma_w, plant.Sigma_v)
    P = sla.solve_discrete_are(plant.A.T, plant.C.T, plant.Sigma_w, plant.Sigma_v)
    np.testing.assert_allclose(kf.error_cov, P, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(kf.predictor_gain, plant.A @ kf.gain)


def test_kalman_no_process_noise():
    kf = kalman_steady_state(np.diag([0.5, 0.2]), np.eye(2), np.zeros((2, 2)), np.eye(2))
    np.testing.assert_array_equal(kf.gain, 0.0)
    np.testing.assert_array_equal(kf.error_cov, 0.0)


def test_kalman_errors():
    with pytest.raises(ValueError, match="observable"):
        kalman_steady_state(np.eye(2) * 0.5, [[1.0, 0.0]], np.eye(2), [[1.0]])
    with pytest.raises(ValueError):
        kalman_steady_state([[0.5]], [[1.0]], [[1.0]], [[0.0]])
    with pytest.raises(ConvergenceError):
        kalman_steady_state([[0.9]], [[1.0]], [[0.01]], [[0.1]], max_iter=3)


def chi2_cdf_by_quadrature(x, k):
    pdf = lambda t: t ** (k / 2 - 1) * math.exp(-t / 2) / (2 ** (k / 2) * math.gamma(k / 2))
    # t = s^2 removes the integrable singularity at 0 for k = 1
    val, _ = integrate.quad(lambda s: 2 * s * pdf(s * s), 0.0, math.sqrt(x), epsabs=1e-13, epsrel=1e-13)
    return val


@pytest.mark.parametrize("dof, prob, expected", [
    (2, 0.95, 5.991464547107985),
    (1, 0.5, 0.4549364231195731),
    (4, 0.99, 13.276704135987615),
    (3, 0.1, 0.5843743741551832),
])
def test_chi_square_quantile_frozen_oracle(dof, prob, expected):
    assert chi_square_quantile(dof, prob) == pytest.approx(expected, abs=1e-8)
    assert chi2_cdf_by_quadrature(chi_square_quantile(dof, prob), dof) == pytest.approx(prob, abs=1e-7)


def test_chi_square_quantile_dof2_closed_form():
    assert chi_square_quantile(2, 1 - math.exp(-1)) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("prob", [0.0, 1.0, -0.1, 1.5])
def test_chi_square_quantile_domain(prob):
    with pytest.raises(ValueError):
        chi_square_quantile(2, prob)


def test_random_orthonormal(rng):
    T1 = random_orthonormal(1, rng)
    assert abs(T1[0, 0]) == pytest.approx(1.0)
    T = random_orthonormal(4, rng)
    assert np.linalg.norm(T.T @ T - np.eye(4)) <= 1e-10
    a = random_orthonormal(3, make_rng(1))
    b = random_orthonormal(3, make_rng(2))
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, random_orthonormal(3, make_rng(1)))
    with pytest.raises(ValueError):
        random_orthonormal(0, rng)


def test_sample_gaussian_zero_covariance(rng):
    spec = GaussianSpec(np.array([1.0, -2.0]), np.zeros((2, 2)))
    np.testing.assert_array_equal(sample_gaussian(spec, rng), [1.0, -2.0])


def test_sample_gaussian_moments(rng):
    draws = sample_gaussian(GaussianSpec(np.zeros(3), np.eye(3)), rng, size=100_000)
    assert np.all(np.abs(draws.mean(axis=0)) <= 4 / np.sqrt(100_000))
    assert np.max(np.abs(np.cov(draws, rowvar=False) - np.eye(3))) <= 0.05


def test_sample_gaussian_measurement_noise_level(rng):
    draws = sample_gaussian(GaussianSpec(np.zeros(2), 0.1 * np.eye(2)), rng, size=100_000)
    np.testing.assert_allclose(draws.var(axis=0), 0.1, atol=0.01)


def test_sample_gaussian_rejects_non_psd():
    with pytest.raises(ValueError):
        GaussianSpec(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianSpec(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_sampling_is_a_function_of_seed():
    spec = GaussianSpec(np.zeros(2), np.array([[1.0, 0.2], [0.2, 0.5]]))
    a = sample_gaussian(spec, make_rng(7), size=10)
    b = sample_gaussian(spec, make_rng(7), size=10)
    np.testing.assert_array_equal(a, b)

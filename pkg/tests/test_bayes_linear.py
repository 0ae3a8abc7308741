"""
Bayesian linear regression and relevance vector machines.

Scenarios:
  * closed-form posterior on tiny systems
  * log marginal likelihood against the direct Gaussian evidence (real and complex)
  * pruned features and feature permutations leave the evidence unchanged
  * log-space noise precisions and the analytic sigma2 derivative
  * fast RVM: sparse recovery, empty data, monotone trace
  * alpha/beta re-estimation and the hyperparameter grid
"""
import math

import numpy as np
import pytest

from gpslab.core.exceptions import InvalidArgumentError
from gpslab.services.bayes_linear import (
    RegressionData,
    RVMOptions,
    fit_dense,
    grid_log_ml,
    hyperparameter_grid_search,
    log_grid,
    log_marginal_likelihood,
    log_space_precisions,
    noise_derivative,
    noise_grad_step,
    posterior,
    rvm_fast_fit,
    update_alpha_dense,
    update_beta_homoscedastic,
)


def gaussian_evidence(phi, y, alpha, precisions, complex_targets):
    """log p(y) with the weights integrated out, written as a covariance in data space."""
    cov = np.diag(1.0 / precisions) + (phi / alpha) @ phi.conj().T
    _, logdet = np.linalg.slogdet(cov)
    quad = float(np.real(np.vdot(y, np.linalg.solve(cov, y))))
    total = len(y) * math.log(2 * math.pi) + logdet + quad
    return -total if complex_targets else -0.5 * total


@pytest.fixture()
def toy(rng):
    phi = rng.standard_normal((12, 3))
    y = phi @ np.array([1.0, -0.5, 0.0]) + 0.1 * rng.standard_normal(12)
    return RegressionData(phi, y, 4.0)


@pytest.fixture()
def complex_toy(rng):
    phi = rng.standard_normal((10, 3)) + 1j * rng.standard_normal((10, 3))
    y = phi @ np.array([0.5 + 1j, -1.0, 0.2j]) + 0.05 * (rng.standard_normal(10) + 1j * rng.standard_normal(10))
    return RegressionData(phi, y, np.linspace(2.0, 8.0, 10))


# ---------------------------------------------------------------------------
# Posterior and evidence
# ---------------------------------------------------------------------------

def test_two_point_mean():
    mu, sigma = posterior(RegressionData([[1.0], [1.0]], [2.0, 2.0], 1.0), 1e-12)
    assert mu[0] == pytest.approx(2.0)
    assert sigma[0, 0] == pytest.approx(0.5)


def test_strong_prior_shrinks_weight():
    mu, _ = posterior(RegressionData([[1.0], [1.0]], [2.0, 2.0], 1.0), 1e10)
    assert abs(mu[0]) < 1e-8


def test_closed_form_toy_value():
    data = RegressionData([[1.0]], [0.0], 1.0)
    assert log_marginal_likelihood(data, 1.0) == pytest.approx(-0.5 * math.log(4 * math.pi))


def test_real_evidence_matches_gaussian(toy):
    alpha = np.array([0.5, 2.0, 3.0])
    expected = gaussian_evidence(toy.phi, toy.y, alpha, toy.precisions, False)
    assert log_marginal_likelihood(toy, alpha) == pytest.approx(expected, rel=1e-10)


def test_complex_evidence_matches_gaussian(complex_toy):
    alpha = np.array([1.0, 0.3, 5.0])
    expected = gaussian_evidence(complex_toy.phi, complex_toy.y, alpha, complex_toy.precisions, True)
    assert log_marginal_likelihood(complex_toy, alpha) == pytest.approx(expected, rel=1e-10)


def test_posterior_mean_minimizes_regularized_loss(complex_toy):
    alpha = np.array([1.0, 0.3, 5.0])
    mu, _ = posterior(complex_toy, alpha)
    residual = complex_toy.y - complex_toy.phi @ mu
    gradient = -complex_toy.phi.conj().T @ (complex_toy.precisions * residual) + alpha * mu
    assert np.max(np.abs(gradient)) < 1e-8


def test_pruned_feature_leaves_evidence_unchanged(toy):
    reduced = RegressionData(toy.phi[:, :2], toy.y, toy.precisions)
    assert log_marginal_likelihood(toy, [1.0, 1.0, np.inf]) == pytest.approx(
        log_marginal_likelihood(reduced, [1.0, 1.0])
    )
    fit = fit_dense(toy, [1.0, 1.0, 1e13])
    assert list(fit.active) == [0, 1]
    assert fit.weights()[2] == 0


def test_feature_permutation_invariance(toy):
    alpha = np.array([0.5, 2.0, 3.0])
    order = [2, 0, 1]
    permuted = RegressionData(toy.phi[:, order], toy.y, toy.precisions)
    a, b = fit_dense(toy, alpha), fit_dense(permuted, alpha[order])
    assert a.log_ml == pytest.approx(b.log_ml, abs=1e-9)
    assert np.allclose(a.mu[order], b.mu)


def test_regression_data_validation():
    with pytest.raises(InvalidArgumentError):
        RegressionData(np.ones((3, 2)), np.ones(2), 1.0)
    with pytest.raises(InvalidArgumentError):
        RegressionData(np.ones((2, 2)), np.ones(2), 0.0)
    with pytest.raises(InvalidArgumentError):
        fit_dense(RegressionData(np.ones((2, 1)), np.ones(2), 1.0), -1.0)


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def test_log_space_precision_unit_case():
    assert log_space_precisions(math.e - 1, np.array([0.0]))[0] == pytest.approx(1.0)


def test_log_space_precisions_shrink_for_small_amplitudes():
    precisions = log_space_precisions(0.1, np.log([1.0, 0.1, 0.01]))
    assert np.all(np.diff(precisions) < 0)


def test_interpolation_limit():
    assert log_space_precisions(1e-14, np.array([0.0]))[0] > 1e12


def test_noise_derivative_matches_finite_difference(rng):
    phi = rng.standard_normal((15, 4))
    log_amplitudes = rng.normal(-1.0, 0.5, size=15) + 1j * rng.normal(size=15)
    y = log_amplitudes
    alpha = np.array([1.0, 2.0, 0.5, 3.0])

    def evidence(sigma2):
        data = RegressionData(phi.astype(complex), y, log_space_precisions(sigma2, log_amplitudes))
        return fit_dense(data, alpha).log_ml

    sigma2, h = 0.3, 1e-6
    data = RegressionData(phi.astype(complex), y, log_space_precisions(sigma2, log_amplitudes))
    analytic = noise_derivative(fit_dense(data, alpha), data, sigma2, log_amplitudes)
    numeric = (evidence(sigma2 + h) - evidence(sigma2 - h)) / (2 * h)
    assert analytic == pytest.approx(numeric, rel=1e-6)


def test_noise_step_never_exceeds_initial(toy):
    log_amplitudes = np.zeros(toy.n_points)
    data = toy.with_precisions(log_space_precisions(1.0, log_amplitudes))
    fit = fit_dense(data, [1.0, 1.0, 1.0])
    assert noise_grad_step(fit, data, 1.0, log_amplitudes, eta=10.0, sigma2_init=1.0) <= 1.0


def test_beta_capped_on_zero_residual():
    data = RegressionData([[1.0], [2.0]], [0.0, 0.0], 1.0)
    fit = fit_dense(data, np.inf)
    assert update_beta_homoscedastic(fit, data) == 1e12


# ---------------------------------------------------------------------------
# Sparsity
# ---------------------------------------------------------------------------

def test_fast_rvm_recovers_single_column(rng):
    phi = rng.standard_normal((60, 20))
    data = RegressionData(phi, 3.0 * phi[:, 5], 1e6)
    fit = rvm_fast_fit(data)
    assert list(fit.active) == [5]
    assert abs(fit.mu[0] - 3.0) < 1e-3
    assert fit.converged


def test_fast_rvm_prunes_everything_for_zero_targets(rng):
    fit = rvm_fast_fit(RegressionData(rng.standard_normal((10, 4)), np.zeros(10), 1.0))
    assert fit.n_active == 0
    assert np.all(fit.weights() == 0)


def test_fast_rvm_trace_is_monotone(rng):
    phi = rng.standard_normal((40, 15)) + 1j * rng.standard_normal((40, 15))
    w = np.zeros(15, dtype=complex)
    w[[1, 4, 9]] = [1.0, -2.0j, 0.5]
    data = RegressionData(phi, phi @ w + 0.1 * rng.standard_normal(40), 50.0)
    fit = rvm_fast_fit(data, RVMOptions(max_iters=50))
    values = [record["log_ml"] for record in fit.trace]
    for before, after in zip(values, values[1:]):
        assert after >= before - 1e-9 * max(1.0, abs(before))
    assert fit.log_ml >= values[0]
    assert {"iteration", "action", "feature", "log_ml", "n_active"} <= set(fit.trace[-1])


def test_fast_rvm_needs_candidates():
    with pytest.raises(InvalidArgumentError):
        rvm_fast_fit(RegressionData(np.zeros((3, 0)), np.ones(3), 1.0))


def test_fast_rvm_reports_non_convergence(rng):
    phi = rng.standard_normal((30, 10))
    data = RegressionData(phi, phi @ rng.standard_normal(10), 10.0)
    fit = rvm_fast_fit(data, RVMOptions(max_iters=1))
    assert fit.warning and not fit.converged


def test_alpha_update_fixed_point(toy):
    relevant = RegressionData(toy.phi[:, :2], toy.y, toy.precisions)
    alpha = np.ones(2)
    for _ in range(500):
        alpha = update_alpha_dense(fit_dense(relevant, alpha))
    again = update_alpha_dense(fit_dense(relevant, alpha))
    assert np.allclose(again, alpha, rtol=1e-6)


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------

def test_grid_returns_boundary_of_monotone_landscape():
    result = hyperparameter_grid_search([1, 2, 3], [0.5, 1.0], [0.1], lambda t, g, s: t + g)
    assert (result.theta, result.gamma) == (3.0, 1.0)
    assert len(result.table) == 6


def test_grid_breaks_ties_toward_larger_values():
    result = hyperparameter_grid_search([1, 2], [1, 2], [1, 2], lambda t, g, s: 0.0)
    assert (result.theta, result.gamma, result.sigma2) == (2.0, 2.0, 2.0)


def test_grid_ignores_failed_points():
    result = hyperparameter_grid_search([1, 2], [1], [1], lambda t, g, s: float("nan") if t == 2 else -3.0)
    assert result.theta == 1.0


def test_grid_skips_points_stopped_at_the_iteration_cap(rng):
    phi = rng.standard_normal((30, 10))
    data = RegressionData(phi, phi @ rng.standard_normal(10), 10.0)
    capped = rvm_fast_fit(data, RVMOptions(max_iters=1))
    assert not capped.converged

    def evaluate(theta, gamma, sigma2):
        return grid_log_ml(capped) if theta == 2.0 else capped.log_ml - 1.0

    result = hyperparameter_grid_search([1, 2], [1], [1], evaluate)
    assert result.theta == 1.0
    assert np.isnan(result.table[1]["log_ml"])


def test_converged_fit_keeps_its_evidence(rng):
    phi = rng.standard_normal((60, 20))
    fit = rvm_fast_fit(RegressionData(phi, 3.0 * phi[:, 5], 1e6))
    assert fit.converged
    assert grid_log_ml(fit) == fit.log_ml


def test_log_grid():
    assert np.allclose(log_grid(0.1, 10, 3), [0.1, 1.0, 10.0])
    with pytest.raises(InvalidArgumentError):
        log_grid(0.0, 1.0, 3)

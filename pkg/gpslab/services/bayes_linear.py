"""
Bayesian linear regression for (complex) log-amplitude targets.

Model: y = Phi w + noise, prior w ~ N(0, A^-1), noise precisions B (diagonal).
Posterior Sigma = (Phi^H B Phi + A)^-1, mu = Sigma Phi^H B y.

Real targets use the usual 1/2-prefactor log marginal likelihood; complex
targets drop the 1/2. Feature precisions at or above PRUNE_ALPHA count as
infinite (pruned).
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from gpslab.core.config import settings
from gpslab.core.exceptions import IllConditionedError, InvalidArgumentError

logger = logging.getLogger(__name__)

JITTERS = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)
BETA_CAP = 1e12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class RegressionData:
    phi: np.ndarray
    y: np.ndarray
    precisions: np.ndarray

    def __post_init__(self):
        self.phi = np.atleast_2d(np.asarray(self.phi))
        self.y = np.asarray(self.y).reshape(-1)
        if self.phi.shape[0] != len(self.y) and self.phi.shape == (1, 0):
            self.phi = np.zeros((len(self.y), 0))
        self.precisions = np.broadcast_to(np.asarray(self.precisions, dtype=float), self.y.shape).copy()
        if self.phi.shape[0] != len(self.y):
            raise InvalidArgumentError(f"{self.phi.shape[0]} design rows but {len(self.y)} targets", field="y")
        if not (np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.y))):
            raise InvalidArgumentError("Design matrix and targets must be finite", field="phi")
        if not np.all(np.isfinite(self.precisions)) or np.any(self.precisions <= 0):
            raise InvalidArgumentError("Noise precisions must be finite and positive", field="precisions")

    @property
    def n_points(self) -> int:
        return self.phi.shape[0]

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]

    @property
    def is_complex(self) -> bool:
        return bool(np.iscomplexobj(self.y) or np.iscomplexobj(self.phi))

    @property
    def prefactor(self) -> float:
        return 1.0 if self.is_complex else 0.5

    def gram(self, columns: Optional[np.ndarray] = None) -> np.ndarray:
        """Phi^H B Phi (restricted to `columns`)."""
        phi = self.phi if columns is None else self.phi[:, columns]
        gram = phi.conj().T @ (phi * self.precisions[:, None])
        return 0.5 * (gram + gram.conj().T)

    def projection(self, columns: Optional[np.ndarray] = None) -> np.ndarray:
        """Phi^H B y."""
        phi = self.phi if columns is None else self.phi[:, columns]
        return phi.conj().T @ (self.precisions * self.y)

    def with_precisions(self, precisions: np.ndarray) -> "RegressionData":
        return RegressionData(self.phi, self.y, precisions)


@dataclass
class NoiseModel:
    """fixed_per_point | homoscedastic (beta) | log_space (sigma2 with reference log amplitudes)."""

    mode: str = "log_space"
    beta: float = 1.0
    sigma2: float = 1.0
    log_amplitudes: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None
    precisions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("fixed_per_point", "homoscedastic", "log_space"):
            raise InvalidArgumentError(f"Unknown noise mode '{self.mode}'", field="mode")
        if self.beta <= 0 or self.sigma2 <= 0:
            raise InvalidArgumentError("Noise parameters must be positive", field="sigma2")

    def point_precisions(self, n_points: int) -> np.ndarray:
        if self.mode == "homoscedastic":
            return np.full(n_points, float(self.beta))
        if self.mode == "fixed_per_point":
            if self.precisions is None:
                raise InvalidArgumentError("Per-point noise needs explicit precisions", field="precisions")
            return np.asarray(self.precisions, dtype=float)
        if self.log_amplitudes is None:
            raise InvalidArgumentError("Log-space noise needs reference log amplitudes", field="log_amplitudes")
        return log_space_precisions(self.sigma2, self.log_amplitudes, self.probabilities)

    def snapshot(self) -> dict:
        return {"mode": self.mode, "beta": float(self.beta), "sigma2": float(self.sigma2)}


@dataclass
class PosteriorFit:
    active: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    log_ml: float
    noise: dict = field(default_factory=dict)
    converged: bool = True
    warning: bool = False
    trace: list = field(default_factory=list)

    @property
    def n_active(self) -> int:
        return len(self.active)

    @property
    def n_features(self) -> int:
        return len(self.alpha)

    def weights(self) -> np.ndarray:
        """Full-length weight vector with zeros on pruned features."""
        out = np.zeros(self.n_features, dtype=self.mu.dtype if self.mu.size else float)
        out[self.active] = self.mu
        return out

    def gamma(self) -> np.ndarray:
        """1 - alpha_i Sigma_ii for the active features."""
        if not self.n_active:
            return np.zeros(0)
        return 1.0 - self.alpha[self.active] * np.real(np.diag(self.sigma))


# ---------------------------------------------------------------------------
# Core linear algebra
# ---------------------------------------------------------------------------

def _cholesky(matrix: np.ndarray):
    """cho_factor with jitter escalation."""
    scale = max(1.0, float(np.mean(np.abs(np.diag(matrix)))))
    identity = np.eye(len(matrix))
    for jitter in JITTERS:
        try:
            factor = scipy.linalg.cho_factor(matrix + jitter * scale * identity, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(factor[0])):
            if jitter:
                logger.debug(f"Cholesky needed jitter {jitter:g}")
            return factor
    condition = float(np.linalg.cond(matrix))
    raise IllConditionedError(f"Posterior system is singular (condition {condition:.3e})", condition=condition)


@dataclass
class _ActiveSolution:
    mu: np.ndarray
    sigma: np.ndarray
    logdet_sigma: float
    projection: np.ndarray


def _solve_active(gram_aa: np.ndarray, proj_a: np.ndarray, alpha_a: np.ndarray) -> _ActiveSolution:
    if len(alpha_a) == 0:
        return _ActiveSolution(np.zeros(0, dtype=proj_a.dtype), np.zeros((0, 0), dtype=gram_aa.dtype), 0.0, proj_a)
    precision = gram_aa + np.diag(alpha_a)
    factor = _cholesky(precision)
    sigma = scipy.linalg.cho_solve(factor, np.eye(len(alpha_a), dtype=precision.dtype))
    sigma = 0.5 * (sigma + sigma.conj().T)
    mu = scipy.linalg.cho_solve(factor, proj_a)
    logdet_sigma = -2.0 * float(np.sum(np.log(np.abs(np.diag(factor[0])))))
    return _ActiveSolution(mu, sigma, logdet_sigma, proj_a)


def _log_ml(data: RegressionData, alpha_a: np.ndarray, solution: _ActiveSolution) -> float:
    """c (log|A| - log|2 pi B^-1| + log|Sigma| - y^H B y + mu^H Sigma^-1 mu), c = 1/2 or 1."""
    logdet_a = float(np.sum(np.log(alpha_a))) if len(alpha_a) else 0.0
    logdet_noise = data.n_points * LOG_2PI - float(np.sum(np.log(data.precisions)))
    data_term = float(np.real(np.vdot(data.y, data.precisions * data.y)))
    mu_term = float(np.real(np.vdot(solution.mu, solution.projection))) if len(alpha_a) else 0.0
    return data.prefactor * (logdet_a - logdet_noise + solution.logdet_sigma - data_term + mu_term)


def _resolve_alpha(data: RegressionData, alpha) -> np.ndarray:
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (data.n_features,)).copy()
    if np.any(alpha <= 0) or np.any(np.isnan(alpha)):
        raise InvalidArgumentError("Prior precisions must be positive", field="alpha")
    alpha[alpha >= settings.PRUNE_ALPHA] = np.inf
    return alpha


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def posterior(data: RegressionData, alpha) -> tuple[np.ndarray, np.ndarray]:
    """(mu, Sigma) over the features with finite precision."""
    fit = fit_dense(data, alpha)
    return fit.mu, fit.sigma


def log_marginal_likelihood(data: RegressionData, alpha) -> float:
    return fit_dense(data, alpha).log_ml


def fit_dense(data: RegressionData, alpha, noise: Optional[dict] = None) -> PosteriorFit:
    """Posterior and log marginal likelihood for fixed precisions (inf = pruned)."""
    alpha = _resolve_alpha(data, alpha)
    active = np.flatnonzero(np.isfinite(alpha))
    solution = _solve_active(data.gram(active), data.projection(active), alpha[active])
    log_ml = _log_ml(data, alpha[active], solution)
    return PosteriorFit(active, solution.mu, solution.sigma, alpha, log_ml, noise or {})


def log_space_precisions(sigma2: float, log_amplitudes: np.ndarray, probabilities: Optional[np.ndarray] = None) -> np.ndarray:
    """1 / ln(sigma2 p(x) / |e^omega|^2 + 1) per point."""
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive", field="sigma2")
    log_amplitudes = np.asarray(log_amplitudes)
    p = np.ones(log_amplitudes.shape) if probabilities is None else np.asarray(probabilities, dtype=float)
    with np.errstate(over="ignore"):
        ratio = sigma2 * p * np.exp(-2.0 * np.real(log_amplitudes))
        variance = np.log1p(ratio)
    return 1.0 / np.clip(variance, 1e-300, 1e300)


def noise_derivative(
    fit: PosteriorFit,
    data: RegressionData,
    sigma2: float,
    log_amplitudes: np.ndarray,
    probabilities: Optional[np.ndarray] = None,
) -> float:
    """d log_ml / d sigma2 for log-space noise, B'_nn = -B_nn^2 / (|e^omega|^2 / p + sigma2)."""
    b = data.precisions
    phi_a = data.phi[:, fit.active]
    residual = data.y - phi_a @ fit.mu if fit.n_active else data.y
    leverage = np.real(np.einsum("ni,ij,nj->n", phi_a, fit.sigma, phi_a.conj())) if fit.n_active else np.zeros(len(b))
    d_log_ml_d_b = data.prefactor * (1.0 / b - leverage - np.abs(residual) ** 2)

    p = np.ones(len(b)) if probabilities is None else np.asarray(probabilities, dtype=float)
    with np.errstate(over="ignore"):
        scale = np.exp(2.0 * np.real(np.asarray(log_amplitudes))) / p
    d_b = -b ** 2 / (scale + sigma2)
    return float(np.sum(d_log_ml_d_b * d_b))


def update_alpha_dense(fit: PosteriorFit) -> np.ndarray:
    """alpha_i <- (1 - alpha_i Sigma_ii) / |mu_i|^2 on the active set."""
    alpha = fit.alpha.copy()
    if not fit.n_active:
        return alpha
    gamma = np.clip(fit.gamma(), 1e-16, 1.0)
    mu2 = np.abs(fit.mu) ** 2
    with np.errstate(divide="ignore"):
        new = np.where(mu2 > 0, gamma / mu2, settings.PRUNE_ALPHA)
    alpha[fit.active] = np.clip(new, 1e-300, settings.PRUNE_ALPHA)
    return alpha


def update_alpha_shared(fit: PosteriorFit) -> float:
    """One precision shared by all active features: sum(gamma) / ||mu||^2."""
    mu2 = float(np.sum(np.abs(fit.mu) ** 2))
    if mu2 == 0.0:
        return settings.PRUNE_ALPHA
    return float(np.clip(np.sum(np.clip(fit.gamma(), 1e-16, 1.0)) / mu2, 1e-300, settings.PRUNE_ALPHA))


def update_beta_homoscedastic(fit: PosteriorFit, data: RegressionData) -> float:
    """beta <- (N - sum(gamma)) / ||y - Phi mu||^2, capped at 1e12."""
    residual = data.y - data.phi[:, fit.active] @ fit.mu if fit.n_active else data.y
    rss = float(np.sum(np.abs(residual) ** 2))
    dof = data.n_points - float(np.sum(fit.gamma()))
    if rss <= 0.0 or dof <= 0.0:
        return BETA_CAP
    return float(min(BETA_CAP, dof / rss))


def noise_grad_step(
    fit: PosteriorFit,
    data: RegressionData,
    sigma2: float,
    log_amplitudes: np.ndarray,
    eta: float,
    sigma2_init: float,
    probabilities: Optional[np.ndarray] = None,
) -> float:
    """One gradient-ascent step on ln sigma2, never above the initial value."""
    gradient = noise_derivative(fit, data, sigma2, log_amplitudes, probabilities)
    step = eta * gradient * sigma2
    return float(min(sigma2_init, math.exp(math.log(sigma2) + step)))


# ---------------------------------------------------------------------------
# Fast sequential RVM
# ---------------------------------------------------------------------------

@dataclass
class RVMOptions:
    tol: float = 1e-6
    alpha_tol: float = 1e-3
    max_iters: Optional[int] = None


def _sparsity_quality(gram: np.ndarray, proj: np.ndarray, active: np.ndarray, solution: _ActiveSolution):
    """S_i, Q_i for every candidate from the active posterior (Woodbury form)."""
    S = np.real(np.diag(gram)).copy()
    Q = proj.copy()
    if len(active):
        X = gram[:, active] @ solution.sigma
        S -= np.real(np.sum(X * gram[:, active].conj(), axis=1))
        Q = Q - X @ proj[active]
    return S, Q


def rvm_fast_fit(data: RegressionData, options: Optional[RVMOptions] = None, noise: Optional[dict] = None) -> PosteriorFit:
    """Sequential marginal-likelihood maximization over per-feature precisions.

    Each iteration applies the single add / re-estimate / delete action
    with the largest log_ml gain.
    """
    options = options or RVMOptions()
    n_features = data.n_features
    if n_features < 1:
        raise InvalidArgumentError("RVM needs at least one candidate feature", field="phi")
    max_iters = options.max_iters or 10 * n_features
    c = data.prefactor

    gram = data.gram()
    proj = data.projection()
    alpha = np.full(n_features, np.inf)
    trace: list[dict] = []

    # Start from the candidate with the largest normalized projection
    s0 = np.real(np.diag(gram))
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(s0 > 0, np.abs(proj) ** 2 / s0, 0.0)
    first = int(np.argmax(score))
    if np.abs(proj[first]) ** 2 > s0[first] > 0:
        alpha[first] = s0[first] ** 2 / (np.abs(proj[first]) ** 2 - s0[first])

    def solve():
        active = np.flatnonzero(np.isfinite(alpha))
        solution = _solve_active(gram[np.ix_(active, active)], proj[active], alpha[active])
        return active, solution, _log_ml(data, alpha[active], solution)

    active, solution, log_ml = solve()
    trace.append({"iteration": 0, "action": "init", "feature": first if len(active) else -1,
                  "log_ml": log_ml, "n_active": len(active)})

    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        S, Q = _sparsity_quality(gram, proj, active, solution)
        is_active = np.isfinite(alpha)
        a_act = alpha[is_active]
        s = S.copy()
        q = Q.copy()
        s[is_active] = a_act * S[is_active] / (a_act - S[is_active])
        q[is_active] = a_act * Q[is_active] / (a_act - S[is_active])
        q2 = np.abs(q) ** 2
        theta = q2 - s

        add = (theta > 0) & ~is_active
        recompute = (theta > 0) & is_active
        delete = (theta <= 0) & is_active

        gain = np.full(n_features, -np.inf)
        Q2 = np.abs(Q) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            gain[add] = (Q2[add] - S[add]) / S[add] + np.log(S[add] / Q2[add])
            alpha_new = np.where(recompute, s ** 2 / np.where(theta > 0, theta, 1.0), alpha)
            delta = 1.0 / alpha_new[recompute] - 1.0 / alpha[recompute]
            gain[recompute] = Q2[recompute] / (S[recompute] + 1.0 / delta) - np.log1p(S[recompute] * delta)
            gain[recompute] = np.where(delta == 0, 0.0, gain[recompute])
            gain[delete] = Q2[delete] / (S[delete] - alpha[delete]) - np.log1p(-S[delete] / alpha[delete])
        gain = c * np.nan_to_num(gain, nan=-np.inf, posinf=-np.inf)

        structural = gain[add | delete]
        max_structural = float(structural.max()) if structural.size else -np.inf
        alpha_change = (
            float(np.max(np.abs(np.log(alpha_new[recompute]) - np.log(alpha[recompute]))))
            if np.any(recompute) else 0.0
        )
        if max_structural < options.tol and alpha_change < options.alpha_tol:
            converged = True
            break

        k = int(np.argmax(gain))
        if not np.isfinite(gain[k]):
            converged = True
            break
        if add[k]:
            action = "add"
            alpha[k] = s[k] ** 2 / theta[k]
        elif recompute[k]:
            action = "reestimate"
            alpha[k] = alpha_new[k]
        else:
            action = "delete"
            alpha[k] = np.inf

        previous = log_ml
        active, solution, log_ml = solve()
        if log_ml < previous - 1e-9 * max(1.0, abs(previous)):
            logger.debug(f"log_ml decreased by {previous - log_ml:.3e} at iteration {iteration}")
        trace.append({"iteration": iteration, "action": action, "feature": k,
                      "log_ml": log_ml, "n_active": len(active)})

    fit = PosteriorFit(active, solution.mu, solution.sigma, alpha, log_ml, noise or {}, converged, not converged, trace)
    if not converged:
        logger.warning(f"RVM stopped after {max_iters} iterations without converging", extra={"log_ml": log_ml})
    logger.debug(f"RVM selected {fit.n_active}/{n_features} features, log_ml={log_ml:.6f}")
    return fit


# ---------------------------------------------------------------------------
# Hyperparameter search
# ---------------------------------------------------------------------------

def log_grid(low: float, high: float, n: int) -> np.ndarray:
    if low <= 0 or high <= 0 or n < 1:
        raise InvalidArgumentError("Logarithmic grids need positive bounds and n >= 1", field="grid")
    return np.geomspace(low, high, n)


def grid_log_ml(fit: PosteriorFit) -> float:
    """Evidence used to rank a grid point; fits stopped at the iteration cap count as failed (NaN)."""
    return fit.log_ml if fit.converged else float("nan")


@dataclass
class GridSearchResult:
    theta: float
    gamma: float
    sigma2: float
    log_ml: float
    table: list = field(default_factory=list)


def hyperparameter_grid_search(
    thetas: Sequence[float],
    gammas: Sequence[float],
    sigma2s: Sequence[float],
    fit: Callable[[float, float, float], float],
) -> GridSearchResult:
    """Exhaustive grid; ties go to larger theta, then larger gamma, then larger sigma2."""
    if not (len(thetas) and len(gammas) and len(sigma2s)):
        raise InvalidArgumentError("Hyperparameter grids must be nonempty", field="grid")
    table = []
    best_key = None
    for theta, gamma, sigma2 in itertools.product(thetas, gammas, sigma2s):
        value = float(fit(float(theta), float(gamma), float(sigma2)))
        table.append({"theta": float(theta), "gamma": float(gamma), "sigma2": float(sigma2), "log_ml": value})
        key = (value if np.isfinite(value) else -np.inf, float(theta), float(gamma), float(sigma2))
        if best_key is None or key > best_key:
            best_key = key
        logger.debug(f"grid theta={theta:g} gamma={gamma:g} sigma2={sigma2:g}: log_ml={value:.6f}")
    if not any(np.isfinite(row["log_ml"]) for row in table):
        logger.warning("Every grid point failed; falling back to the largest hyperparameters")
    log_ml, theta, gamma, sigma2 = best_key
    logger.info(f"Grid search best: theta={theta:g} gamma={gamma:g} sigma2={sigma2:g} log_ml={log_ml:.6f}")
    return GridSearchResult(theta, gamma, sigma2, log_ml, table)

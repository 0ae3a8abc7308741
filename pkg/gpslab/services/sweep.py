"""
Bayesian alternating sweeps for qGPS models.

Fixing every site but one turns the log amplitude into a linear model in
the tensor slice of the remaining site. Each site visit solves that
regression with one shared prior precision per site and log-space noise,
then writes the posterior mean back into the model. The SWO driver
repeats single sweeps against (1 - tau H)|Psi> targets.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from gpslab.core.config import settings
from gpslab.core.exceptions import (
    DegenerateTargetError,
    IllConditionedError,
    InvalidArgumentError,
    UnsupportedOperationError,
)
from gpslab.models.config_space import Lattice, random_sector_config
from gpslab.models.hamiltonian import HamiltonianSpec
from gpslab.models.qgps import QGPSModel, SymmetrizationMode
from gpslab.services.bayes_linear import (
    PosteriorFit,
    RegressionData,
    fit_dense,
    log_space_precisions,
    noise_grad_step,
    update_alpha_shared,
    update_beta_homoscedastic,
)
from gpslab.services.vmc import SamplerSpec, SampleSet, energy_from_local, local_energies, sample

logger = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12


class SweepOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schedule: Optional[list[int]] = None  # None -> zigzag over all sites
    max_sweeps: int = Field(10, ge=1)
    tol: float = Field(1e-6, ge=0)
    eta: float = Field(1e-5, gt=0)
    shifted: bool = True
    sigma2: Optional[float] = Field(None, gt=0)  # None -> training MSE
    noise_update: Literal["gradient", "homoscedastic", "fixed"] = "gradient"
    alpha_iters: int = Field(100, ge=1)
    alpha_tol: float = Field(1e-3, gt=0)


@dataclass
class TrainSet:
    """Training configurations with target log amplitudes.

    `noise_reference` replaces the model's own log amplitudes in the
    log-space noise variance ln(sigma2 p / |e^omega|^2 + 1).
    """

    configs: np.ndarray
    log_amplitudes: np.ndarray
    probabilities: Optional[np.ndarray] = None
    noise_reference: Optional[np.ndarray] = None

    def __post_init__(self):
        self.configs = np.atleast_2d(self.configs)
        self.log_amplitudes = np.asarray(self.log_amplitudes).reshape(-1)
        n = len(self.configs)
        if n == 0:
            raise InvalidArgumentError("Training set is empty", field="configs")
        if len(self.log_amplitudes) != n:
            raise InvalidArgumentError("One target per configuration is required", field="log_amplitudes")
        if not np.all(np.isfinite(self.log_amplitudes)):
            raise InvalidArgumentError("Target log amplitudes must be finite", field="log_amplitudes")
        for name in ("probabilities", "noise_reference"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value).reshape(-1)
                if len(value) != n or not np.all(np.isfinite(value)):
                    raise InvalidArgumentError(f"{name} must be finite with one entry per configuration", field=name)
                setattr(self, name, value)

    def __len__(self) -> int:
        return len(self.configs)

    def subset(self, index: np.ndarray) -> "TrainSet":
        pick = lambda v: None if v is None else v[index]
        return TrainSet(self.configs[index], self.log_amplitudes[index], pick(self.probabilities), pick(self.noise_reference))


@dataclass
class SweepResult:
    model: QGPSModel
    log: list = field(default_factory=list)
    sigma2: float = 1.0
    alphas: Optional[np.ndarray] = None
    converged: bool = False
    sweep_log_ml: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def zigzag_schedule(shape: int | Sequence[int] | Lattice) -> list[int]:
    """Row-major site order with alternating direction on every other row."""
    if isinstance(shape, Lattice):
        shape = shape.extents
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if not shape or min(shape) < 1:
        raise InvalidArgumentError("Schedule shape must be positive", field="shape")
    if len(shape) == 1:
        return list(range(shape[0]))
    grid = np.arange(math.prod(shape)).reshape(shape[0], -1)
    order = []
    for r, row in enumerate(grid):
        order.extend((row if r % 2 == 0 else row[::-1]).tolist())
    return order


def _check_model(model: QGPSModel) -> None:
    if model.mode is SymmetrizationMode.PROJECTIVE:
        raise UnsupportedOperationError("Sweeping is not defined for projective symmetrization", mode=model.mode.value)
    if model.split:
        raise UnsupportedOperationError("Sweep the magnitude and phase parts separately", mode="split")


def extract_site_features(model: QGPSModel, site: int, configs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Phi, w) with ln Psi(x) = Phi(x) . w and w = eps[:, site, :] flattened (l, m)."""
    _check_model(model)
    if not 0 <= site < model.n_sites:
        raise InvalidArgumentError(f"Site {site} outside [0, {model.n_sites})", field="site")
    configs = np.atleast_2d(configs)
    n = len(configs)
    d, m = model.local_dim, model.n_supports
    eye = np.eye(d)
    features = np.zeros((n, d, m), dtype=model.epsilon.dtype)
    for op in model.operations:
        image = op.apply(configs)
        factors = model.epsilon[image, np.arange(model.n_sites)]  # (N, L, M)
        rest = np.prod(np.delete(factors, site, axis=1), axis=1)
        features += eye[image[:, site]][:, :, None] * rest[:, None, :]
    return features.reshape(n, d * m), model.epsilon[:, site, :].reshape(-1).copy()


# ---------------------------------------------------------------------------
# Sweeping
# ---------------------------------------------------------------------------

def solve_shared_alpha(data: RegressionData, alpha: float, iters: int = 100, tol: float = 1e-3) -> tuple[PosteriorFit, float]:
    """Posterior with one prior precision, re-estimated until its relative change drops below tol."""
    fit = fit_dense(data, alpha)
    for _ in range(iters):
        new_alpha = update_alpha_shared(fit)
        converged = abs(new_alpha - alpha) <= tol * alpha
        alpha = new_alpha
        fit = fit_dense(data, alpha)
        if converged or alpha >= settings.PRUNE_ALPHA:
            break
    return fit, alpha


def sweep_fit(
    model: QGPSModel,
    train: TrainSet,
    options: Optional[SweepOptions] = None,
    alphas: Optional[np.ndarray] = None,
) -> SweepResult:
    """Fit `model` to the training targets by Bayesian site sweeps.

    Split models are fitted as two real models: the magnitude part on
    Re(omega) and the phase part on Im(omega), sharing the options.
    """
    options = options or SweepOptions()
    if model.split:
        real_train = TrainSet(train.configs, train.log_amplitudes.real, train.probabilities, train.noise_reference)
        imag_train = TrainSet(train.configs, train.log_amplitudes.imag, train.probabilities, train.noise_reference)
        magnitude = sweep_fit(model.magnitude_part(), real_train, options, alphas)
        phase = sweep_fit(model.phase_part(), imag_train, options, alphas)
        return SweepResult(
            model.with_parts(magnitude.model, phase.model),
            magnitude.log + phase.log,
            magnitude.sigma2,
            magnitude.alphas,
            magnitude.converged and phase.converged,
            magnitude.sweep_log_ml,
        )

    _check_model(model)
    schedule = options.schedule or zigzag_schedule(model.lattice or model.n_sites)
    if sorted(set(schedule)) != list(range(model.n_sites)):
        raise InvalidArgumentError("Site schedule must cover every site", field="schedule")

    real = np.isrealobj(train.log_amplitudes) and not np.any(model.epsilon.imag)
    y = train.log_amplitudes.real if real else train.log_amplitudes.astype(complex)
    epsilon = model.epsilon.real.copy() if real else model.epsilon.copy()
    current = model.with_epsilon(epsilon)

    if options.sigma2 is None:
        mse = float(np.mean(np.abs(y - current.log_psi(train.configs)) ** 2))
        sigma2 = max(mse, SIGMA2_FLOOR)
    else:
        sigma2 = float(options.sigma2)
    sigma2_init = sigma2
    alphas = np.ones(model.n_sites) if alphas is None else np.asarray(alphas, dtype=float).copy()

    log: list[dict] = []
    sweep_means: list[float] = []
    converged = False
    d, m = model.local_dim, model.n_supports
    for sweep in range(options.max_sweeps):
        site_log_ml = []
        for site in schedule:
            phi, _ = extract_site_features(current, site, train.configs)
            if real:
                phi = phi.real
            shift = np.ones(d * m) if options.shifted and site != 0 else np.zeros(d * m)
            target = y - phi @ shift

            reference = train.noise_reference
            if reference is None:
                reference = current.log_psi(train.configs)
            try:
                data = RegressionData(phi, target, log_space_precisions(sigma2, reference, train.probabilities))
                fit, alphas[site] = solve_shared_alpha(data, alphas[site], options.alpha_iters, options.alpha_tol)
            except IllConditionedError as exc:
                logger.warning(f"Skipping site {site} in sweep {sweep}: {exc.message}", extra={"sweep": sweep, "site": site})
                continue

            if options.noise_update == "gradient":
                sigma2 = noise_grad_step(fit, data, sigma2, reference, options.eta, sigma2_init, train.probabilities)
            elif options.noise_update == "homoscedastic":
                beta = update_beta_homoscedastic(fit, data)
                sigma2 = max(float(np.expm1(min(1.0 / beta, 700.0))), SIGMA2_FLOOR)

            weights = fit.weights() + shift
            epsilon[:, site, :] = weights.reshape(d, m)
            current = current.with_epsilon(epsilon)
            train_mse = float(np.mean(np.abs(y - phi @ weights) ** 2))
            site_log_ml.append(fit.log_ml)
            log.append({
                "sweep": sweep,
                "site": site,
                "log_ml": fit.log_ml,
                "alpha": float(alphas[site]),
                "sigma2": sigma2,
                "train_mse": train_mse,
            })

        if not site_log_ml:
            logger.warning(f"Every site was skipped in sweep {sweep}")
            break
        mean_log_ml = float(np.mean(site_log_ml))
        sweep_means.append(mean_log_ml)
        logger.debug(f"Sweep {sweep}: mean log_ml={mean_log_ml:.8f} sigma2={sigma2:.3e}", extra={"sweep": sweep})
        if len(sweep_means) > 1 and abs(sweep_means[-1] - sweep_means[-2]) < options.tol:
            converged = True
            break

    return SweepResult(current, log, sigma2, alphas, converged, sweep_means)


# ---------------------------------------------------------------------------
# Supervised wavefunction optimization
# ---------------------------------------------------------------------------

@dataclass
class SWOResult:
    model: QGPSModel
    trace: list = field(default_factory=list)
    sigma2: float = 1.0
    sigma2_sign: float = 1.0


def _uniform_configs(ham: HamiltonianSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([random_sector_config(ham.n_sites, ham.local_dim, ham.sector, rng) for _ in range(n)])


def _swo_targets(model: QGPSModel, ham: HamiltonianSpec, configs: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """(log <x|(1 - tau H)|Psi>, E_loc) per configuration."""
    e_loc = local_energies(model, ham, configs)
    with np.errstate(divide="ignore"):
        targets = model.log_psi(configs) + np.log((1.0 - tau * e_loc).astype(complex))
    return targets, e_loc


def swo_run(
    ham: HamiltonianSpec,
    model: QGPSModel,
    tau: float,
    iterations: int,
    n_train: int,
    sampler: SamplerSpec,
    options: Optional[SweepOptions] = None,
    sigma2: float = 1.0,
) -> SWOResult:
    """Imaginary-time projection by repeated supervised fits to (1 - tau H)|Psi>."""
    if tau <= 0:
        raise InvalidArgumentError("tau must be positive", field="tau")
    if n_train < 2:
        raise InvalidArgumentError("n_train must be at least 2", field="n_train")
    options = (options or SweepOptions()).model_copy(update={"max_sweeps": 1, "sigma2": None})
    sigma2_sign = 1.0
    alphas_mag = alphas_phase = None
    n_half = n_train // 2
    n_uniform = n_train - n_half
    trace: list[dict] = []

    for it in range(iterations):
        step_spec = sampler.model_copy(update={"seed": sampler.seed + it * sampler.n_chains})
        drawn = sample(model, ham, step_spec, n_train)
        markov = SampleSet(drawn.configs[:n_train], drawn.log_psi[:n_train], drawn.acceptance)
        rng = np.random.default_rng(sampler.seed + 7919 * (it + 1))
        uniform_configs = _uniform_configs(ham, n_uniform, rng)

        markov_targets, e_loc = _swo_targets(model, ham, markov.configs, tau)
        uniform_targets, _ = _swo_targets(model, ham, uniform_configs, tau)
        estimate = energy_from_local(e_loc, markov)

        keep_m = np.isfinite(markov_targets.real)
        keep_u = np.isfinite(uniform_targets.real)
        if not np.any(keep_m):
            raise DegenerateTargetError()
        # the first half of the chain samples joins the uniform ones in the magnitude fit
        in_half = keep_m & (np.arange(n_train) < n_half)
        shift = float(np.mean(markov_targets.real[keep_m]))
        markov_targets = markov_targets - shift
        uniform_targets = uniform_targets[keep_u] - shift
        uniform_configs = uniform_configs[keep_u]
        phase_configs, phase_targets = markov.configs[keep_m], markov_targets[keep_m]
        half_configs, half_targets = markov.configs[in_half], markov_targets[in_half]

        mean_abs2 = float(np.mean(np.exp(2.0 * phase_targets.real)))
        markov_reference = np.full(len(half_targets), 0.5 * math.log(mean_abs2))
        configs = np.concatenate([half_configs, uniform_configs])
        targets = np.concatenate([half_targets, uniform_targets])
        reference = np.concatenate([markov_reference, uniform_targets.real])

        if model.split:
            magnitude = sweep_fit(
                model.magnitude_part(),
                TrainSet(configs, targets.real, noise_reference=reference),
                options.model_copy(update={"sigma2": sigma2}),
                alphas_mag,
            )
            phase = sweep_fit(
                model.phase_part(),
                TrainSet(phase_configs, phase_targets.imag, noise_reference=np.zeros(len(phase_targets))),
                options.model_copy(update={"sigma2": sigma2_sign, "noise_update": "homoscedastic"}),
                alphas_phase,
            )
            model = model.with_parts(magnitude.model, phase.model)
            sigma2, sigma2_sign = magnitude.sigma2, phase.sigma2
            alphas_mag, alphas_phase = magnitude.alphas, phase.alphas
        else:
            fitted = sweep_fit(model, TrainSet(configs, targets, noise_reference=reference), options.model_copy(update={"sigma2": sigma2}), alphas_mag)
            model, sigma2, alphas_mag = fitted.model, fitted.sigma2, fitted.alphas

        trace.append({
            "iteration": it,
            "energy": estimate.energy,
            "variance": estimate.variance,
            "stderr": estimate.stderr,
            "acceptance": estimate.acceptance,
            "sigma2": sigma2,
            "sigma2_sign": sigma2_sign if model.split else float("nan"),
            "n_markov": len(half_targets),
            "n_uniform": len(uniform_targets),
            "n_phase": len(phase_targets) if model.split else 0,
        })
        logger.info(
            f"SWO iteration {it}: E={estimate.energy:.8f} +- {estimate.stderr:.2e}",
            extra={"iteration": it, "energy": estimate.energy},
        )
    return SWOResult(model, trace, sigma2, sigma2_sign)

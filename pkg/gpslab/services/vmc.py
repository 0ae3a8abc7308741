"""
Variational Monte Carlo: Metropolis sampling, local energies, centered
moment estimators and Stochastic Reconfiguration updates.

Chains advance in lockstep so that each Metropolis step evaluates the
proposals of all chains in one batched `log_psi` call; every chain owns
its RNG stream (seed + chain index), which makes runs reproducible
independent of the batching.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Optional

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.linalg import LinearOperator, cg
from tqdm import tqdm

from gpslab.core.config import settings
from gpslab.core.exceptions import (
    IllConditionedError,
    InsufficientSamplesError,
    InvalidArgumentError,
    NumericalDomainError,
    SamplerStartError,
    ZeroNormError,
)
from gpslab.models.config_space import SPIN_DIM, random_sector_config
from gpslab.models.hamiltonian import HamiltonianSpec
from gpslab.models.wavefunction import Wavefunction, changed_sites

logger = logging.getLogger(__name__)

MIN_SAMPLES = 10
START_TRIES = 10_000
DENSE_SOLVE_MAX = 4000
CG_RTOL = 1e-8


class MoveKind(str, Enum):
    SPIN_EXCHANGE = "spin_exchange"
    SPIN_FLIP = "spin_flip"
    ELECTRON_HOP = "electron_hop"


class SamplerSpec(BaseModel):
    """Markov chain settings; warmup and thinning count proposal steps (None -> 10 L and L)."""

    model_config = ConfigDict(extra="forbid")

    n_chains: int = Field(16, ge=1)
    warmup: Optional[int] = Field(None, ge=0)
    thinning: Optional[int] = Field(None, ge=1)
    move: MoveKind = MoveKind.SPIN_EXCHANGE
    seed: int = settings.DEFAULT_SEED

    def resolved(self, n_sites: int) -> tuple[int, int]:
        warmup = 10 * n_sites if self.warmup is None else self.warmup
        thinning = n_sites if self.thinning is None else self.thinning
        return warmup, thinning


class SROptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(0.02, gt=0)
    diag_shift: Optional[float] = Field(None, ge=0)  # None -> 0.01 max diag(S) + 1e-4
    solver: Literal["auto", "dense", "iterative"] = "auto"
    max_steps: int = Field(100, ge=0)
    n_samples: int = Field(1024, ge=1)
    energy_tol: Optional[float] = Field(None, gt=0)
    patience: int = Field(50, ge=1)


@dataclass
class SampleSet:
    """Configurations with their log amplitudes; `weights` None means Markov samples."""

    configs: np.ndarray
    log_psi: np.ndarray
    acceptance: float = 1.0
    weights: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def is_exhaustive(self) -> bool:
        return self.weights is not None

    def probabilities(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights
        return np.full(len(self.configs), 1.0 / len(self.configs))


@dataclass
class EnergyEstimate:
    mean: complex
    variance: float
    stderr: float
    n_samples: int
    acceptance: float = 1.0

    @property
    def energy(self) -> float:
        return float(self.mean.real)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "energy_imag": float(self.mean.imag),
            "variance": self.variance,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "acceptance": self.acceptance,
        }


# ---------------------------------------------------------------------------
# Proposals
# ---------------------------------------------------------------------------

def _propose(x: np.ndarray, move: MoveKind, rng: np.random.Generator, hop_pairs: np.ndarray) -> np.ndarray:
    """Symmetric proposal; returns x itself when no move applies."""
    y = x.copy()
    if move is MoveKind.SPIN_FLIP:
        i = rng.integers(len(x))
        y[i] = 1 - y[i]
    elif move is MoveKind.SPIN_EXCHANGE:
        up = np.flatnonzero(x == 0)
        down = np.flatnonzero(x == 1)
        if len(up) and len(down):
            i = up[rng.integers(len(up))]
            j = down[rng.integers(len(down))]
            y[i], y[j] = x[j], x[i]
    else:
        if len(hop_pairs) == 0:
            return y
        a, b = hop_pairs[rng.integers(len(hop_pairs))]
        src, dst = (a, b) if rng.integers(2) == 0 else (b, a)
        bit = 1 << int(rng.integers(2))  # 1 = up electron, 2 = down electron
        if x[src] & bit and not x[dst] & bit:
            y[src] = x[src] - bit
            y[dst] = x[dst] + bit
    return y


def _check_move(move: MoveKind, ham: HamiltonianSpec) -> None:
    spin_move = move in (MoveKind.SPIN_EXCHANGE, MoveKind.SPIN_FLIP)
    if spin_move != (ham.local_dim == SPIN_DIM):
        raise InvalidArgumentError(f"Move '{move.value}' does not act on D={ham.local_dim} configurations", field="move")
    if move is MoveKind.SPIN_FLIP and ham.sector is not None and (ham.sector.n_up is not None or ham.sector.n_down is not None):
        raise InvalidArgumentError("Spin flips leave a fixed-magnetization sector", field="move")


def _start(model: Wavefunction, ham: HamiltonianSpec, rng: np.random.Generator) -> tuple[np.ndarray, complex]:
    for _ in range(START_TRIES):
        x = random_sector_config(ham.n_sites, ham.local_dim, ham.sector, rng)
        log_value = model.log_psi_one(x)
        if np.isfinite(log_value.real):
            return x, log_value
    raise SamplerStartError(START_TRIES)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample(model: Wavefunction, ham: HamiltonianSpec, spec: SamplerSpec, n_samples: int) -> SampleSet:
    """Metropolis-Hastings with acceptance min(1, |Psi(y)|^2 / |Psi(x)|^2).

    Returns ceil(n_samples / n_chains) kept samples per chain, chain-major.
    """
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be positive", field="n_samples")
    _check_move(spec.move, ham)
    warmup, thinning = spec.resolved(ham.n_sites)
    n_chains = spec.n_chains
    per_chain = math.ceil(n_samples / n_chains)
    pairs = np.asarray(ham.hop_pairs()).reshape(-1, 2) if spec.move is MoveKind.ELECTRON_HOP else np.zeros((0, 2), int)

    rngs = [np.random.default_rng(spec.seed + c) for c in range(n_chains)]
    caches = [model.init_cache(_start(model, ham, rng)[0]) for rng in rngs]

    kept_configs = np.empty((per_chain, n_chains, ham.n_sites), dtype=caches[0].config.dtype)
    kept_logs = np.empty((per_chain, n_chains), dtype=complex)
    accepted = 0
    proposed = 0
    total_steps = warmup + per_chain * thinning
    for step in range(1, total_steps + 1):
        for c, rng in enumerate(rngs):
            cache = caches[c]
            proposal = _propose(cache.config, spec.move, rng, pairs)
            threshold = rng.random()
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                candidate = model.fast_update(cache, changed_sites(cache.config, proposal))
                log_ratio = 2.0 * (complex(candidate.log_value).real - complex(cache.log_value).real)
            accept = np.nan_to_num(log_ratio, nan=-np.inf) >= math.log(max(threshold, 1e-300))
            if accept:
                caches[c] = candidate
            if step > warmup:
                accepted += int(accept)
        if step > warmup:
            proposed += n_chains
            offset = step - warmup
            if offset % thinning == 0:
                k = offset // thinning - 1
                kept_configs[k] = [cache.config for cache in caches]
                kept_logs[k] = [complex(cache.log_value) for cache in caches]

    acceptance = accepted / proposed if proposed else 0.0
    logger.debug(f"Sampled {per_chain * n_chains} configs from {n_chains} chains, acceptance {acceptance:.3f}")
    return SampleSet(
        configs=kept_configs.transpose(1, 0, 2).reshape(-1, ham.n_sites),
        log_psi=kept_logs.T.reshape(-1),
        acceptance=acceptance,
    )


def exact_weights(model: Wavefunction, basis: np.ndarray) -> np.ndarray:
    """Normalized |Psi|^2 over an enumerated basis."""
    log_psi = model.log_psi(np.atleast_2d(basis))
    real = log_psi.real
    finite = np.isfinite(real)
    if not np.any(finite):
        raise ZeroNormError("Model vanishes on the whole basis")
    weights = np.zeros(len(basis))
    weights[finite] = np.exp(2.0 * (real[finite] - real[finite].max()))
    return weights / weights.sum()


def exact_samples(model: Wavefunction, basis: np.ndarray) -> SampleSet:
    """Exhaustive weighting: every basis configuration with its exact probability."""
    basis = np.atleast_2d(basis)
    weights = exact_weights(model, basis)
    keep = weights > 0
    return SampleSet(basis[keep], model.log_psi(basis[keep]), 1.0, weights[keep])


# ---------------------------------------------------------------------------
# Local energies
# ---------------------------------------------------------------------------

def local_energy(model: Wavefunction, ham: HamiltonianSpec, x: np.ndarray, cache=None) -> complex:
    """sum_x' <x|H|x'> Psi(x') / Psi(x) through the model's fast updates."""
    cache = cache if cache is not None else model.init_cache(x)
    if not np.isfinite(complex(cache.log_value).real):
        raise NumericalDomainError("Local energy at a zero-amplitude configuration")
    targets, amplitudes = ham.row(cache.config)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_targets = model.fast_update_many(cache, targets)
        ratios = np.exp(log_targets - cache.log_value)
    ratios = np.where(np.isfinite(ratios), ratios, 0.0)
    return complex(np.sum(amplitudes * ratios))


def local_energies(model: Wavefunction, ham: HamiltonianSpec, configs: np.ndarray) -> np.ndarray:
    configs = np.atleast_2d(configs)
    return np.array([local_energy(model, ham, x) for x in configs], dtype=complex)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _check_count(samples: SampleSet) -> None:
    if not samples.is_exhaustive and len(samples) < MIN_SAMPLES:
        raise InsufficientSamplesError(len(samples), MIN_SAMPLES)


def energy_from_local(e_loc: np.ndarray, samples: SampleSet) -> EnergyEstimate:
    _check_count(samples)
    p = samples.probabilities()
    mean = complex(np.sum(p * e_loc))
    variance = float(np.sum(p * np.abs(e_loc - mean) ** 2))
    stderr = 0.0 if samples.is_exhaustive else math.sqrt(variance / len(samples))
    return EnergyEstimate(mean, variance, stderr, len(samples), samples.acceptance)


def estimate_energy(model: Wavefunction, ham: HamiltonianSpec, samples: SampleSet) -> EnergyEstimate:
    return energy_from_local(local_energies(model, ham, samples.configs), samples)


def _centered_derivatives(model: Wavefunction, samples: SampleSet) -> tuple[np.ndarray, np.ndarray]:
    o = model.log_derivatives(samples.configs)
    p = samples.probabilities()
    return o - p @ o, p


def gradient_from_local(model: Wavefunction, samples: SampleSet, e_loc: np.ndarray) -> np.ndarray:
    """G_j = <O_j^* E> - <O_j^*><E>."""
    _check_count(samples)
    centered, p = _centered_derivatives(model, samples)
    mean = np.sum(p * e_loc)
    gradient = centered.conj().T @ (p * (e_loc - mean))
    return gradient.real if model.real_parameters else gradient


def estimate_gradient(model: Wavefunction, ham: HamiltonianSpec, samples: SampleSet) -> np.ndarray:
    return gradient_from_local(model, samples, local_energies(model, ham, samples.configs))


def estimate_qgt(model: Wavefunction, samples: SampleSet) -> np.ndarray:
    """S_ij = <O_i^* O_j> - <O_i^*><O_j>, symmetrized."""
    _check_count(samples)
    centered, p = _centered_derivatives(model, samples)
    qgt = centered.conj().T @ (centered * p[:, None])
    qgt = 0.5 * (qgt + qgt.conj().T)
    return qgt.real if model.real_parameters else qgt


# ---------------------------------------------------------------------------
# Stochastic Reconfiguration
# ---------------------------------------------------------------------------

def default_diag_shift(qgt: np.ndarray) -> float:
    if qgt.size == 0:
        return 1e-4
    return 0.01 * float(np.max(np.real(np.diag(qgt)))) + 1e-4


def _solve(matrix: np.ndarray, rhs: np.ndarray, solver: str) -> np.ndarray:
    if solver == "dense" or (solver == "auto" and len(rhs) <= DENSE_SOLVE_MAX):
        factor = scipy.linalg.cho_factor(matrix, lower=True, check_finite=True)
        return scipy.linalg.cho_solve(factor, rhs)
    operator = LinearOperator(matrix.shape, matvec=lambda v: matrix @ v, dtype=matrix.dtype)
    solution, info = cg(operator, rhs, rtol=CG_RTOL, maxiter=10 * len(rhs))
    if info != 0:
        raise np.linalg.LinAlgError(f"conjugate gradient stopped with info={info}")
    return solution


def sr_step(parameters: np.ndarray, gradient: np.ndarray, qgt: np.ndarray, options: SROptions) -> np.ndarray:
    """theta - beta (S + c I)^-1 G; on solver breakdown retries once with 10 c."""
    parameters = np.asarray(parameters)
    gradient = np.asarray(gradient)
    qgt = np.asarray(qgt)
    n = len(parameters)
    if gradient.shape != (n,) or qgt.shape != (n, n):
        raise InvalidArgumentError(
            f"SR dimensions disagree: {n} parameters, gradient {gradient.shape}, S {qgt.shape}", field="qgt"
        )
    shift = default_diag_shift(qgt) if options.diag_shift is None else options.diag_shift
    identity = np.eye(n)
    for attempt, c in enumerate((shift, 10.0 * shift)):
        try:
            delta = _solve(qgt + c * identity, gradient, options.solver)
        except (np.linalg.LinAlgError, ValueError) as exc:
            logger.warning(f"SR solve failed with shift {c:.3e}: {exc}")
            continue
        if np.all(np.isfinite(delta)):
            if attempt:
                logger.info(f"SR solve recovered with shift {c:.3e}")
            return parameters - options.learning_rate * delta.astype(parameters.dtype, copy=False)
    raise IllConditionedError(f"SR system stays singular with shift {10.0 * shift:.3e}")


@dataclass
class VMCResult:
    model: Wavefunction
    trace: list = field(default_factory=list)
    stopped_early: bool = False

    @property
    def final_energy(self) -> Optional[float]:
        return self.trace[-1]["energy"] if self.trace else None


def vmc_optimize(
    model: Wavefunction,
    ham: HamiltonianSpec,
    sampler: SamplerSpec,
    options: SROptions,
    exact_basis: Optional[np.ndarray] = None,
) -> VMCResult:
    """SR loop. With `exact_basis` every step uses exhaustive weighting instead of sampling."""
    trace: list[dict] = []
    energies: list[float] = []
    steps = tqdm(
        range(options.max_steps),
        desc="VMC",
        disable=not settings.SHOW_PROGRESS or options.max_steps == 0,
        leave=False,
    )
    stopped_early = False
    for step in steps:
        if exact_basis is not None:
            samples = exact_samples(model, exact_basis)
        else:
            step_spec = sampler.model_copy(update={"seed": sampler.seed + step * sampler.n_chains})
            samples = sample(model, ham, step_spec, options.n_samples)
        e_loc = local_energies(model, ham, samples.configs)
        estimate = energy_from_local(e_loc, samples)
        gradient = gradient_from_local(model, samples, e_loc)
        qgt = estimate_qgt(model, samples)

        parameters = model.parameters
        record = {
            "step": step,
            "energy": estimate.energy,
            "variance": estimate.variance,
            "stderr": estimate.stderr,
            "acceptance": estimate.acceptance,
            "n_params": len(parameters),
            "param_norm": float(np.linalg.norm(parameters)),
        }
        trace.append(record)
        energies.append(estimate.energy)
        if abs(estimate.mean.imag) > 1e-6 * max(1.0, abs(estimate.energy)):
            logger.debug(f"Step {step}: energy has imaginary part {estimate.mean.imag:.3e}")
        steps.set_postfix(energy=f"{estimate.energy:.6f}")

        model = model.with_parameters(sr_step(parameters, gradient, qgt, options))

        if (
            options.energy_tol is not None
            and len(energies) > options.patience
            and abs(energies[-1] - energies[-1 - options.patience]) < options.energy_tol
        ):
            logger.info(f"Energy changed less than {options.energy_tol:g} over {options.patience} steps; stopping at step {step}")
            stopped_early = True
            break

    if trace:
        logger.info(
            f"VMC finished after {len(trace)} steps: E={trace[-1]['energy']:.10f} +- {trace[-1]['stderr']:.2e}",
            extra={"step": len(trace), "energy": trace[-1]["energy"]},
        )
    return VMCResult(model, trace, stopped_early)

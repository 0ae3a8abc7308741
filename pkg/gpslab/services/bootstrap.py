"""
Bootstrapped GPS construction.

Each round optimizes the support weights by VMC, recompresses the model
with the RVM on configurations sampled from it, and enlarges the support
set with the sampled configurations whose local energies deviate most
from the mean.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gpslab.core.exceptions import InvalidArgumentError, ZeroNormError
from gpslab.models.config_space import Lattice, SymmetryGroup, canonical_representatives, orbit_representatives
from gpslab.models.gps_kernel import GPSModel, KernelSpec, feature_matrix
from gpslab.models.hamiltonian import HamiltonianSpec
from gpslab.models.wavefunction import Wavefunction
from gpslab.services.bayes_linear import (
    PosteriorFit,
    RegressionData,
    RVMOptions,
    fit_dense,
    log_space_precisions,
    rvm_fast_fit,
)
from gpslab.services.vmc import SamplerSpec, SROptions, local_energies, sample, vmc_optimize

logger = logging.getLogger(__name__)


@dataclass
class CompressionResult:
    model: GPSModel
    fit: PosteriorFit
    mse: float


@dataclass
class BootstrapResult:
    model: GPSModel
    rounds: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _best_single(data: RegressionData) -> PosteriorFit:
    """Weakly regularized fit on the candidate with the largest normalized projection."""
    gram = np.real(np.diag(data.gram()))
    proj = np.abs(data.projection()) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(gram > 0, proj / gram, 0.0)
    alpha = np.full(data.n_features, np.inf)
    alpha[int(np.argmax(score))] = 1e-8
    return fit_dense(data, alpha)


def compress_model(
    source: Wavefunction,
    kernel: KernelSpec,
    candidates: np.ndarray,
    sigma2: float,
    data_configs: np.ndarray,
    lattice: Lattice,
    group: Optional[SymmetryGroup] = None,
    local_dim: Optional[int] = None,
    options: Optional[RVMOptions] = None,
) -> CompressionResult:
    """RVM fit of the source log amplitudes on the candidate supports with log-space noise."""
    candidates = np.atleast_2d(candidates)
    data_configs = np.atleast_2d(data_configs)
    if len(candidates) == 0:
        raise InvalidArgumentError("Candidate pool is empty", field="candidates")
    local_dim = local_dim or getattr(source, "local_dim", None)

    targets = source.log_psi(data_configs)
    finite = np.isfinite(targets.real)
    if not np.any(finite):
        raise ZeroNormError("Source amplitudes vanish on every data configuration")
    if not np.all(finite):
        logger.warning(f"Dropping {int((~finite).sum())} data configurations with zero source amplitude")
    data_configs, targets = data_configs[finite], targets[finite]
    if not np.any(targets.imag):
        targets = targets.real

    phi = feature_matrix(kernel, group, candidates, data_configs, lattice)
    data = RegressionData(phi, targets, log_space_precisions(sigma2, targets))
    fit = rvm_fast_fit(data, options, noise={"mode": "log_space", "sigma2": float(sigma2)})
    if fit.n_active == 0:
        logger.warning("RVM selected no support; keeping the best single candidate")
        fit = _best_single(data)

    model = GPSModel(kernel, candidates[fit.active], fit.mu, lattice, group, None, local_dim or 2)
    residual = targets - phi[:, fit.active] @ fit.mu
    mse = float(np.mean(np.abs(residual) ** 2))
    logger.info(
        f"Compressed to {fit.n_active}/{len(candidates)} supports, log_ml={fit.log_ml:.6f}, mse={mse:.3e}",
        extra={"n_active": fit.n_active, "log_ml": fit.log_ml},
    )
    return CompressionResult(model, fit, mse)


def augment_support(
    model: GPSModel,
    samples: np.ndarray,
    energies: np.ndarray,
    fraction: float = 0.25,
) -> GPSModel:
    """Add ceil(fraction M) sampled configurations ranked by |E_loc - mean|, with zero weight.

    Ties keep first-seen sample order; configurations equivalent to an
    existing support (or to an earlier pick) are skipped.
    """
    if fraction < 0:
        raise InvalidArgumentError("fraction must be non-negative", field="fraction")
    samples = np.atleast_2d(samples)
    energies = np.asarray(energies).reshape(-1)
    if len(samples) != len(energies):
        raise InvalidArgumentError("One local energy per sample is required", field="energies")
    n_new = math.ceil(fraction * model.n_supports)
    if n_new == 0 or len(samples) == 0:
        return model

    deviation = np.abs(energies - energies.mean())
    order = np.argsort(-deviation, kind="stable")
    seen = {row.tobytes() for row in canonical_representatives(model.supports, model.group)} if model.n_supports else set()
    picked = []
    canonical = canonical_representatives(samples, model.group)
    for k in order:
        key = canonical[k].tobytes()
        if key in seen:
            continue
        seen.add(key)
        picked.append(samples[k])
        if len(picked) == n_new:
            break
    if len(picked) < n_new:
        logger.info(f"Only {len(picked)} distinct candidates available, wanted {n_new}")
    if not picked:
        return model
    supports = np.concatenate([model.supports, np.stack(picked).astype(model.supports.dtype)])
    weights = np.concatenate([model.weights, np.zeros(len(picked), dtype=complex)])
    return model.with_supports(supports, weights)


def bootstrap_loop(
    ham: HamiltonianSpec,
    model: GPSModel,
    rounds: int,
    sampler: SamplerSpec,
    sr_options: SROptions,
    sigma2: float,
    n_data: int = 1024,
    steps_per_round: int = 100,
    fraction: float = 0.25,
    rvm_options: Optional[RVMOptions] = None,
) -> BootstrapResult:
    """VMC -> RVM recompression -> augmentation; the last round re-optimizes instead of augmenting."""
    if rounds < 0:
        raise InvalidArgumentError("rounds must be non-negative", field="rounds")
    vmc_options = sr_options.model_copy(update={"max_steps": steps_per_round})
    records: list[dict] = []
    trace: list[dict] = []
    offset = 0

    def optimize(current: GPSModel, round_index: int) -> GPSModel:
        nonlocal offset
        spec = sampler.model_copy(update={"seed": sampler.seed + offset})
        offset += steps_per_round * sampler.n_chains
        result = vmc_optimize(current, ham, spec, vmc_options)
        for record in result.trace:
            trace.append({"round": round_index, **record, "step": len(trace)})
        return result.model

    for r in range(rounds):
        m_before = model.n_supports
        model = optimize(model, r)

        spec = sampler.model_copy(update={"seed": sampler.seed + offset})
        offset += sampler.n_chains
        drawn = sample(model, ham, spec, n_data)
        pool = orbit_representatives(np.concatenate([model.supports, drawn.configs.astype(model.supports.dtype)]), model.group)
        compressed = compress_model(
            model, model.kernel, pool, sigma2, drawn.configs, model.lattice, model.group, model.local_dim, rvm_options
        ).model
        m_selected = compressed.n_supports

        if r < rounds - 1:
            energies = local_energies(compressed, ham, drawn.configs)
            model = augment_support(compressed, drawn.configs, energies.real, fraction)
        else:
            model = optimize(compressed, r)

        last = trace[-1] if trace else {"energy": float("nan"), "stderr": float("nan")}
        records.append({
            "round": r,
            "M_before": m_before,
            "M_selected": m_selected,
            "M_after": model.n_supports,
            "energy": last["energy"],
            "stderr": last["stderr"],
        })
        logger.info(f"Bootstrap round {r}: {m_before} -> {m_selected} -> {model.n_supports} supports, E={last['energy']:.8f}")
    return BootstrapResult(model, records, trace)

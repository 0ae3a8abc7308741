"""
Command runners for the gpslab CLI.
Each runner reads its sections from the RunConfig, writes its traces and
models into the output directory and returns the summary mapping.
"""
from __future__ import annotations

import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy

import gpslab
from gpslab.core.config import settings
from gpslab.core.exceptions import ConfigurationError
from gpslab.models.config_space import SymmetryGroup, enumerate_sector, orbit_representatives, random_sector_config
from gpslab.models.gps_kernel import GPSModel, kernel_value, symmetrized_kernel
from gpslab.models.hamiltonian import HamiltonianSpec
from gpslab.models.qgps import QGPSModel, msr_qgps, msr_qgps_local, random_init
from gpslab.models.wavefunction import Wavefunction
from gpslab.schemas.run_config import RunConfig, build_system, build_system_group
from gpslab.services.bayes_linear import RVMOptions, grid_log_ml, hyperparameter_grid_search
from gpslab.services.bootstrap import bootstrap_loop, compress_model
from gpslab.services.classify import load_idx, train_one_vs_rest
from gpslab.services.exact_oracle import (
    FullState,
    compare_states,
    ground_state,
    overlap,
    relative_energy_error,
    variational_energy_exact,
)
from gpslab.services.sweep import SweepOptions, TrainSet, swo_run, sweep_fit
from gpslab.services.vmc import MoveKind, SamplerSpec, SROptions, vmc_optimize
from gpslab.utils.io import config_from_string, write_columns, write_records

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    command: str
    config: RunConfig
    out: Path
    seed: int

    def path(self, name: str) -> Path:
        return self.out / name


def manifest(ctx: RunContext) -> dict:
    """Everything needed to reproduce the run."""
    return {
        "command": ctx.command,
        "seed": ctx.seed,
        "threads": ctx.config.threads,
        "config": ctx.config.model_dump(mode="json"),
        "versions": {
            "gpslab": gpslab.__version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


# ---------------------------------------------------------------------------
# Shared builders
# ---------------------------------------------------------------------------

def _system(ctx: RunContext):
    ham, sector, lattice = build_system(ctx.config.system)
    group = build_system_group(ctx.config.system, lattice, ham.local_dim)
    return ham, sector, lattice, group


def _reference(ham: HamiltonianSpec, sector) -> Optional[FullState]:
    """Exact ground state when the sector is small enough for dense diagonalization."""
    dim = len(enumerate_sector(ham.n_sites, ham.local_dim, sector))
    if dim > settings.ED_DENSE_MAX_DIM:
        logger.info(f"Skipping exact reference: sector dimension {dim} > {settings.ED_DENSE_MAX_DIM}")
        return None
    return ground_state(ham, sector)


def _sampler(ctx: RunContext) -> SamplerSpec:
    section = ctx.config.vmc
    return SamplerSpec(
        n_chains=section.n_chains,
        warmup=section.warmup,
        thinning=section.thinning,
        move=MoveKind(section.move),
        seed=ctx.seed,
    )


def _sr_options(ctx: RunContext) -> SROptions:
    section = ctx.config.vmc
    return SROptions(
        learning_rate=section.learning_rate,
        diag_shift=section.diag_shift,
        solver=section.solver,
        max_steps=section.steps,
        n_samples=section.n_samples,
        energy_tol=section.energy_tol,
        patience=section.patience,
    )


def _qgps(ctx: RunContext, ham: HamiltonianSpec, lattice, group: SymmetryGroup) -> QGPSModel:
    section = ctx.config.model
    if section.load:
        return QGPSModel.load(section.load)
    mode = section.mode if len(group) > 1 else "none"
    if section.init == "random":
        return random_init(
            ham.n_sites, ham.local_dim, section.n_supports, section.init_scale, ctx.seed,
            mode, group, section.split, lattice,
        )
    sublattice = lattice.sublattice().astype(bool)
    build = msr_qgps if section.init == "msr" else msr_qgps_local
    return build(ham.n_sites, sublattice, mode=mode, group=group, lattice=lattice)


def _initial_gps(ctx: RunContext, ham: HamiltonianSpec, lattice, group: SymmetryGroup, n_supports: int) -> GPSModel:
    if ctx.config.model.load:
        return GPSModel.load(ctx.config.model.load)
    rng = np.random.default_rng(ctx.seed)
    supports = np.stack([random_sector_config(ham.n_sites, ham.local_dim, ham.sector, rng) for _ in range(n_supports)])
    supports = orbit_representatives(supports, group)
    weights = ctx.config.model.init_scale * rng.standard_normal(len(supports))
    return GPSModel(ctx.config.kernel.to_spec(), supports, weights, lattice, group, None, ham.local_dim)


def _save_model(ctx: RunContext, model, name: str = "model.yaml") -> Optional[str]:
    if not ctx.config.output.save_model:
        return None
    model.save(ctx.path(name))
    return name


def _with_reference(summary: dict, model: Wavefunction, ham: HamiltonianSpec, sector) -> dict:
    reference = _reference(ham, sector)
    if reference is None:
        return summary
    exact = variational_energy_exact(model, ham, sector, reference.basis)
    summary.update({
        "reference_energy": reference.energy,
        "exact_energy": exact,
        "relative_error": relative_energy_error(exact, reference.energy),
        "overlap": overlap(model, reference),
    })
    return summary


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_ed(ctx: RunContext) -> dict:
    ham, sector, _, _ = _system(ctx)
    state = ground_state(ham, sector)
    if ctx.config.output.save_state:
        state.save(ctx.path("state.tsv"))
    return {"energy": state.energy, "dimension": len(state)}


def run_fit_rvm(ctx: RunContext) -> dict:
    ham, sector, lattice, group = _system(ctx)
    section = ctx.config.fit
    state = FullState.load(section.source, ham.local_dim) if section.source else ground_state(ham, sector)
    candidates = orbit_representatives(state.basis, group)
    options = RVMOptions(tol=section.tol, max_iters=section.max_iters)
    kernel_section = ctx.config.kernel
    thetas = section.thetas or [kernel_section.theta]
    gammas = section.gammas or [kernel_section.gamma]

    records = []
    for k, sigma2 in enumerate(section.sigma2):
        def evaluate(theta: float, gamma: float, s2: float) -> float:
            result = compress_model(state, kernel_section.to_spec(theta, gamma), candidates, s2, state.basis, lattice, group, ham.local_dim, options)
            return grid_log_ml(result.fit)

        search = hyperparameter_grid_search(thetas, gammas, [sigma2], evaluate)
        kernel = kernel_section.to_spec(search.theta, search.gamma)
        result = compress_model(state, kernel, candidates, sigma2, state.basis, lattice, group, ham.local_dim, options)
        comparison = compare_states(result.model, state)
        records.append({
            "sigma2": sigma2,
            "theta": search.theta,
            "gamma": search.gamma,
            "log_ml": result.fit.log_ml,
            "n_support": result.model.n_supports,
            "mse": comparison.mse,
            "mse_log_rescaled": comparison.mse_log_rescaled,
            "converged": result.fit.converged,
        })
        _save_model(ctx, result.model, f"model_{k}.yaml")
        write_records(ctx.path(f"rvm_trace_{k}.tsv"), result.fit.trace)
    write_records(ctx.path("rvm_fits.tsv"), records)
    summary = dict(records[-1])
    summary["n_candidates"] = len(candidates)
    summary["reference_energy"] = state.energy
    return summary


def run_vmc(ctx: RunContext) -> dict:
    ham, sector, lattice, group = _system(ctx)
    if ctx.config.model.kind == "gps":
        model = _initial_gps(ctx, ham, lattice, group, ctx.config.model.n_supports)
    else:
        model = _qgps(ctx, ham, lattice, group)
    basis = enumerate_sector(ham.n_sites, ham.local_dim, sector) if ctx.config.vmc.exact else None
    result = vmc_optimize(model, ham, _sampler(ctx), _sr_options(ctx), basis)
    write_records(ctx.path("vmc_trace.tsv"), result.trace)
    summary = {
        "steps": len(result.trace),
        "energy": result.final_energy,
        "stderr": result.trace[-1]["stderr"] if result.trace else None,
        "model": _save_model(ctx, result.model),
    }
    return _with_reference(summary, result.model, ham, sector)


def run_sweep_fit(ctx: RunContext) -> dict:
    ham, sector, lattice, group = _system(ctx)
    section = ctx.config.sweep
    state = ground_state(ham, sector)
    rng = np.random.default_rng(ctx.seed)
    n_train = max(1, int(round(section.train_fraction * len(state))))
    index = np.sort(rng.choice(len(state), size=n_train, replace=False))
    values = state.values[index]
    keep = values != 0
    train = TrainSet(state.basis[index][keep], np.log(values[keep]))

    model = _qgps(ctx, ham, lattice, group)
    options = SweepOptions(max_sweeps=section.max_sweeps, tol=section.tol, eta=section.eta,
                           shifted=section.shifted, sigma2=section.sigma2)
    result = sweep_fit(model, train, options)
    write_records(ctx.path("sweep_log.tsv"), result.log, ["sweep", "site", "log_ml", "alpha", "sigma2", "train_mse"])
    return {
        "n_train": len(train),
        "sweeps": len(result.sweep_log_ml),
        "log_ml": result.sweep_log_ml[-1] if result.sweep_log_ml else None,
        "sigma2": result.sigma2,
        "overlap": overlap(result.model, state),
        "mse": compare_states(result.model, state).mse,
        "model": _save_model(ctx, result.model),
    }


def run_swo(ctx: RunContext) -> dict:
    ham, sector, lattice, group = _system(ctx)
    section = ctx.config.swo
    model = _qgps(ctx, ham, lattice, group)
    options = SweepOptions(eta=ctx.config.sweep.eta, shifted=ctx.config.sweep.shifted)
    result = swo_run(ham, model, section.tau, section.iterations, section.n_train, _sampler(ctx), options, section.sigma2)
    write_records(ctx.path("swo_trace.tsv"), result.trace)
    summary = {
        "iterations": len(result.trace),
        "energy": result.trace[-1]["energy"] if result.trace else None,
        "stderr": result.trace[-1]["stderr"] if result.trace else None,
        "sigma2": result.sigma2,
        "model": _save_model(ctx, result.model),
    }
    return _with_reference(summary, result.model, ham, sector)


def run_bootstrap(ctx: RunContext) -> dict:
    ham, sector, lattice, group = _system(ctx)
    section = ctx.config.bootstrap
    model = _initial_gps(ctx, ham, lattice, group, section.initial_supports)
    result = bootstrap_loop(
        ham, model, section.rounds, _sampler(ctx), _sr_options(ctx), section.sigma2,
        n_data=section.n_data, steps_per_round=section.steps_per_round, fraction=section.fraction,
    )
    write_records(ctx.path("bootstrap_rounds.tsv"), result.rounds, ["round", "M_before", "M_selected", "M_after", "energy", "stderr"])
    write_records(ctx.path("vmc_trace.tsv"), result.trace)
    summary = {
        "rounds": len(result.rounds),
        "n_support": result.model.n_supports,
        "energy": result.rounds[-1]["energy"] if result.rounds else None,
        "model": _save_model(ctx, result.model),
    }
    return _with_reference(summary, result.model, ham, sector)


def run_classify(ctx: RunContext) -> dict:
    section = ctx.config.classify
    if section is None:
        raise ConfigurationError("The classify command needs a [classify] section", offenders=["classify"])
    train = load_idx(section.train_images, section.train_labels)
    if section.n_train:
        train = train.head(section.n_train)
    test = None
    if section.test_images and section.test_labels:
        test = load_idx(section.test_images, section.test_labels)
        if section.n_test:
            test = test.head(section.n_test)
    result = train_one_vs_rest(
        train, section.n_supports, section.sweeps, section.sigma2, section.eta, ctx.seed, test, section.shift_radius,
    )
    write_records(ctx.path("metrics.tsv"), result.metrics, ["sweep", "train_err", "test_err", "sigma2"])
    last = result.metrics[-1]
    return {
        "train_err": last["train_err"],
        "test_err": last["test_err"],
        "sigma2": result.sigma2,
        "model": _save_model(ctx, result.model),
    }


def run_kernel_eval(ctx: RunContext) -> dict:
    ham, _, lattice, group = _system(ctx)
    kernel = ctx.config.kernel.to_spec()
    rows = []
    for pair in ctx.config.kernel.pairs:
        if len(pair) != 2:
            raise ConfigurationError("kernel.pairs entries must hold two configurations", offenders=["kernel.pairs"])
        x, xp = (config_from_string(s) for s in pair)
        rows.append((pair[0], pair[1], kernel_value(kernel, lattice, x, lattice, xp), symmetrized_kernel(kernel, group, lattice, x, xp)))
    write_columns(ctx.path("kernel.tsv"), ("x", "x_prime", "kernel", "symmetrized"), rows)
    return {"n_pairs": len(rows), "group_size": len(group)}


COMMANDS: dict[str, Callable[[RunContext], dict]] = {
    "ed": run_ed,
    "fit-rvm": run_fit_rvm,
    "vmc": run_vmc,
    "sweep-fit": run_sweep_fit,
    "swo": run_swo,
    "bootstrap": run_bootstrap,
    "classify": run_classify,
    "kernel-eval": run_kernel_eval,
}
